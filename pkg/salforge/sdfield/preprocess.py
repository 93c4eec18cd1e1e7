import concurrent.futures
import dataclasses
import hashlib
import logging
import pathlib
import sys
import traceback
import typing
import zlib

import numpy as np
import yaml

from salforge import seeding
from salforge.autodiff.tensor import ContractError
from salforge.geometry.bvh import Bvh
from salforge.geometry.distance import brute_force_distance
from salforge.geometry.mesh import Normalization, load_mesh, normalize, write_mesh
from salforge.sdfield.archive import write_archive
from salforge.sdfield.manifest import Manifest, ManifestEntry, Split, write_manifest
from salforge.sdfield.samples import generate_samples

MESH_SUFFIXES = ('.obj', '.ply')
MANIFEST_NAME = 'manifest.tsv'
VERIFY_TOLERANCE = 1e-6


class ShapeStatus:
    WRITTEN = 'written'
    SKIPPED = 'skipped'
    FAILED = 'failed'


@dataclasses.dataclass
class ShapeResult:
    shape_id: str
    status: str
    entry: typing.Optional[ManifestEntry] = None
    error: typing.Optional[str] = None


@dataclasses.dataclass
class PreprocessReport:
    results: typing.List[ShapeResult]
    manifest_path: pathlib.Path

    def count(self, status) -> int:
        return sum(1 for r in self.results if r.status == status)

    @property
    def failed(self) -> typing.List[ShapeResult]:
        return [r for r in self.results if r.status == ShapeStatus.FAILED]


def find_meshes(mesh_dir) -> typing.List[pathlib.Path]:
    mesh_dir = pathlib.Path(mesh_dir)
    if not mesh_dir.is_dir():
        raise FileNotFoundError(f'mesh directory {mesh_dir} does not exist')
    return sorted(p for p in mesh_dir.iterdir() if p.is_file() and p.suffix.lower() in MESH_SUFFIXES)


def assign_split(shape_id: str, test_fraction: float) -> str:
    """Stable split: the shape id's CRC-32 decides, independent of dataset order."""
    position = zlib.crc32(shape_id.encode('utf-8')) / 2 ** 32
    return Split.TEST if position < test_fraction else Split.TRAIN


def content_hash(mesh_bytes: bytes, data_config, seed: int) -> str:
    digest = hashlib.sha256(mesh_bytes)
    digest.update(yaml.safe_dump(dataclasses.asdict(data_config), sort_keys=True).encode('utf-8'))
    digest.update(f'seed={seed}'.encode('utf-8'))
    return digest.hexdigest()


def verify_samples(samples, soup, fraction: float, rng: np.random.Generator):
    """Re-label a random fraction of the queries by exhaustive search and compare."""
    count = int(np.ceil(fraction * samples.n_queries))
    if count <= 0:
        return
    picked = rng.choice(samples.n_queries, size=min(count, samples.n_queries), replace=False)
    expected, _, _ = brute_force_distance(soup, samples.queries[picked].astype(np.float64))
    worst = float(np.abs(expected - samples.h[picked]).max())
    if worst > VERIFY_TOLERANCE:
        raise ContractError(f'{samples.shape_id}: stored distances differ from brute force by {worst:.3e}')


def preprocess_shape(mesh_path: pathlib.Path, out_dir: pathlib.Path, data_config, seed: int,
                     verify_fraction: float = 0.0) -> ShapeResult:
    shape_id = mesh_path.stem
    archive = out_dir / f'{shape_id}.salf'
    mesh = out_dir / f'{shape_id}.ply'
    sidecar = out_dir / f'{shape_id}.salf.sha256'
    entry = ManifestEntry(assign_split(shape_id, data_config.test_fraction), shape_id, archive, mesh)

    try:
        mesh_bytes = mesh_path.read_bytes()
        digest = content_hash(mesh_bytes, data_config, seed)
        if archive.exists() and mesh.exists() and sidecar.exists() and sidecar.read_text().strip() == digest:
            logging.info(f'PREPROCESS: {shape_id} is up to date, skipped')
            return ShapeResult(shape_id, ShapeStatus.SKIPPED, entry)

        soup, center, scale = normalize(load_mesh(mesh_path))
        write_mesh(soup, mesh, comments=Normalization(center, scale).comments() + [f'source {mesh_path.name}'])
        samples = generate_samples(soup, data_config, seeding.stream(seed, seeding.DATA, shape_id), shape_id,
                                   bvh=Bvh(soup))
        verify_samples(samples, soup, verify_fraction, seeding.stream(seed, seeding.DATA, 'verify', shape_id))
        write_archive(samples, archive)
        sidecar.write_text(digest + '\n')
        logging.info(f'PREPROCESS: {shape_id} written, {samples.n_input} input points, '
                     f'{samples.n_queries} queries, scale {scale:.6g}')
        return ShapeResult(shape_id, ShapeStatus.WRITTEN, entry)
    except Exception as e:
        logging.error(f'PREPROCESS ERROR: {shape_id} failed: {e}')
        logging.error('\n'.join(traceback.format_exception(*sys.exc_info())))
        return ShapeResult(shape_id, ShapeStatus.FAILED, error=str(e))


def preprocess_directory(mesh_dir, out_dir, data_config, seed: int, workers: int = 1,
                         verify_fraction: float = 0.0) -> PreprocessReport:
    """Archive every mesh of `mesh_dir` into `out_dir` and write the manifest in input order."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes = find_meshes(mesh_dir)

    unique, duplicates = [], []
    seen = set()
    for path in meshes:
        (duplicates if path.stem in seen else unique).append(path)
        seen.add(path.stem)

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda path: preprocess_shape(path, out_dir, data_config, seed, verify_fraction), unique
        ))
    for path in duplicates:
        logging.error(f'PREPROCESS ERROR: {path.name} shares the shape id {path.stem!r} with another mesh')
        results.append(ShapeResult(path.stem, ShapeStatus.FAILED, error=f'duplicate shape id {path.stem!r}'))

    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(Manifest([r.entry for r in results if r.entry is not None]), manifest_path)
    return PreprocessReport(results, manifest_path)
