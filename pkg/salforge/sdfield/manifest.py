"""
Manifest files list the shapes of a dataset, one per line:

    <split> TAB <shape id> TAB <archive path> [TAB <mesh path> [TAB <registration mesh path>]]

Blank lines and lines starting with '#' are skipped. Relative paths are resolved against
the manifest's directory. Without a mesh column the mesh is the archive path with a .ply suffix.
"""
import dataclasses
import os
import pathlib
import typing

from django.db import models


class ManifestError(ValueError):

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f' line {line}' if line is not None else ''
        super().__init__(f'{self.path}{where}: {message}')


class Split(models.TextChoices):
    TRAIN = 'train'
    TEST = 'test'


@dataclasses.dataclass
class ManifestEntry:
    split: str
    shape_id: str
    archive: pathlib.Path
    mesh: typing.Optional[pathlib.Path] = None
    registration: typing.Optional[pathlib.Path] = None

    def __post_init__(self):
        self.archive = pathlib.Path(self.archive)
        self.mesh = pathlib.Path(self.mesh) if self.mesh else self.archive.with_suffix('.ply')
        self.registration = pathlib.Path(self.registration) if self.registration else None


@dataclasses.dataclass
class Manifest:
    entries: typing.List[ManifestEntry] = dataclasses.field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def split(self, tag: str) -> typing.List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == tag]

    def ids(self) -> typing.List[str]:
        return [entry.shape_id for entry in self.entries]


def load_manifest(path) -> Manifest:
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ManifestError(path, f'cannot read manifest: {e}')

    base = path.parent
    entries, seen = [], {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip('\r\n')
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        fields = line.split('\t')
        if not 3 <= len(fields) <= 5 or not all(f.strip() for f in fields):
            raise ManifestError(path, f'expected 3 to 5 tab-separated fields, got {line!r}', line=number)
        split, shape_id, *paths = (f.strip() for f in fields)
        if split not in Split.values:
            raise ManifestError(path, f'unknown split {split!r}, expected one of {Split.values}', line=number)
        if shape_id in seen:
            raise ManifestError(path, f'duplicate shape id {shape_id!r} (first on line {seen[shape_id]})', line=number)
        seen[shape_id] = number
        entries.append(ManifestEntry(split, shape_id, *[base / p for p in paths]))
    return Manifest(entries)


def _relative(target: pathlib.Path, base: pathlib.Path) -> str:
    try:
        return os.path.relpath(target, base)
    except ValueError:
        return str(target)


def write_manifest(manifest: Manifest, path):
    path = pathlib.Path(path)
    base = path.parent.resolve()
    lines = []
    for entry in manifest:
        fields = [entry.split, entry.shape_id, _relative(entry.archive.resolve(), base),
                  _relative(entry.mesh.resolve(), base)]
        if entry.registration is not None:
            fields.append(_relative(entry.registration.resolve(), base))
        lines.append('\t'.join(fields))
    path.write_text('\n'.join(lines) + ('\n' if lines else ''), encoding='utf-8')
