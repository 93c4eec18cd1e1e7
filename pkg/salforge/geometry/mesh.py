"""
Triangle soups and point clouds, OBJ / PLY reading and writing, and canonical normalization.
"""
import dataclasses
import logging
import pathlib
import typing

import numpy as np

from salforge.autodiff.tensor import ContractError

PLY_TYPES = {
    'char': 'i1', 'int8': 'i1', 'uchar': 'u1', 'uint8': 'u1',
    'short': 'i2', 'int16': 'i2', 'ushort': 'u2', 'uint16': 'u2',
    'int': 'i4', 'int32': 'i4', 'uint': 'u4', 'uint32': 'u4',
    'float': 'f4', 'float32': 'f4', 'double': 'f8', 'float64': 'f8',
}

OBJ_IGNORED = {'vn', 'vt', 'vp', 'g', 'o', 's', 'usemtl', 'mtllib', 'l', 'p'}


class MeshParseError(ValueError):

    def __init__(self, path, message, line=None, offset=None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = ''
        if line is not None:
            where = f' line {line}'
        elif offset is not None:
            where = f' offset {offset}'
        super().__init__(f'{self.path}{where}: {message}')


@dataclasses.dataclass(eq=False)
class TriangleSoup:
    vertices: np.ndarray
    triangles: np.ndarray
    comments: typing.Tuple[str, ...] = ()

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.isfinite(self.vertices).all():
            raise ContractError('triangle soup has non-finite vertex coordinates')
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ContractError(f'triangle index out of range for {len(self.vertices)} vertices')

    def __len__(self):
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3): the three corner positions of every triangle."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def degenerate(self) -> np.ndarray:
        return self.areas() == 0

    def compact(self) -> 'TriangleSoup':
        """Drop vertices no triangle references, keeping the order of the rest."""
        used = np.unique(self.triangles)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleSoup(self.vertices[used], remap[self.triangles], self.comments)


@dataclasses.dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    tag: typing.Optional[str] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ContractError('point cloud has non-finite coordinates')

    def __len__(self):
        return len(self.points)


@dataclasses.dataclass(eq=False)
class Normalization:
    """v' = (v - center) / scale, inverted by v = v' * scale + center."""
    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.center

    def comments(self) -> typing.List[str]:
        cx, cy, cz = (repr(float(v)) for v in self.center)
        return [f'center {cx} {cy} {cz}', f'scale {float(self.scale)!r}']

    @classmethod
    def from_comments(cls, comments) -> typing.Optional['Normalization']:
        values = {}
        for comment in comments:
            key, _, rest = comment.partition(' ')
            values[key] = rest.split()
        if 'center' not in values or 'scale' not in values:
            return None
        return cls(np.array([float(v) for v in values['center']]), float(values['scale'][0]))

    @classmethod
    def fit(cls, points: np.ndarray) -> 'Normalization':
        """Bounding-box centre, and the radius of the bounding sphere around it (1 when degenerate)."""
        if not len(points):
            raise ContractError('cannot normalize an empty point set')
        center = 0.5 * (points.min(axis=0) + points.max(axis=0))
        scale = float(np.linalg.norm(points - center, axis=1).max())
        return cls(center, scale if scale > 0.0 else 1.0)


def normalize(soup: TriangleSoup) -> typing.Tuple[TriangleSoup, np.ndarray, float]:
    """Center on the bounding-box centre and scale the bounding sphere around it to radius 1."""
    if not len(soup.vertices):
        raise ContractError('cannot normalize an empty triangle soup')
    transform = Normalization.fit(soup.vertices)
    return TriangleSoup(transform.apply(soup.vertices), soup.triangles.copy(), soup.comments), transform.center, transform.scale


def load_mesh(path) -> TriangleSoup:
    path = pathlib.Path(path)
    suffix = path.suffix.lower()
    if suffix == '.obj':
        return _load_obj(path)
    if suffix == '.ply':
        return _load_ply(path)
    raise MeshParseError(path, f'unsupported mesh format {suffix!r}, expected .obj or .ply')


def write_mesh(soup: TriangleSoup, path, comments: typing.Iterable[str] = (), binary: bool = True):
    path = pathlib.Path(path)
    comments = [c.replace('\n', ' ') for c in comments]
    suffix = path.suffix.lower()
    if suffix == '.obj':
        _write_obj(soup, path, comments)
    elif suffix == '.ply':
        _write_ply(soup, path, comments, binary)
    else:
        raise ValueError(f'unsupported mesh format {suffix!r}, expected .obj or .ply')
    logging.debug(f'MESH: wrote {len(soup)} triangles to {path}')


def _obj_index(path, token, count, line):
    try:
        index = int(token.split('/')[0])
    except ValueError:
        raise MeshParseError(path, f'bad face index {token!r}', line=line)
    if index == 0:
        raise MeshParseError(path, 'face index 0 (OBJ indices start at 1)', line=line)
    resolved = index - 1 if index > 0 else count + index
    if not 0 <= resolved < count:
        raise MeshParseError(path, f'face index {index} out of range for {count} vertices', line=line)
    return resolved


def _load_obj(path) -> TriangleSoup:
    vertices, triangles, comments = [], [], []
    with open(path, encoding='utf-8', errors='replace') as f:
        for number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith('#'):
                comments.append(line[1:].strip())
                continue
            keyword, *tokens = line.split()
            if keyword == 'v':
                if len(tokens) < 3:
                    raise MeshParseError(path, 'vertex needs three coordinates', line=number)
                try:
                    vertices.append([float(t) for t in tokens[:3]])
                except ValueError:
                    raise MeshParseError(path, f'bad vertex coordinate in {line!r}', line=number)
            elif keyword == 'f':
                if len(tokens) < 3:
                    raise MeshParseError(path, 'face needs at least three vertices', line=number)
                face = [_obj_index(path, t, len(vertices), number) for t in tokens]
                triangles.extend([face[0], face[i], face[i + 1]] for i in range(1, len(face) - 1))
            elif keyword not in OBJ_IGNORED:
                raise MeshParseError(path, f'unsupported OBJ statement {keyword!r}', line=number)
    return TriangleSoup(np.array(vertices).reshape(-1, 3), np.array(triangles).reshape(-1, 3), tuple(comments))


def _read_ply_header(path, data: bytes):
    end = data.find(b'end_header')
    if not data.startswith(b'ply') or end < 0:
        raise MeshParseError(path, 'missing ply magic or end_header', line=1)
    newline = data.find(b'\n', end)
    body_start = len(data) if newline < 0 else newline + 1

    fmt, elements, comments = None, [], []
    for number, raw in enumerate(data[:end].decode('ascii', errors='replace').splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0] in ('ply', 'obj_info'):
            continue
        if tokens[0] == 'comment':
            comments.append(raw.strip()[len('comment'):].strip())
        elif tokens[0] == 'format':
            if len(tokens) < 2 or tokens[1] not in ('ascii', 'binary_little_endian'):
                raise MeshParseError(path, f'unsupported PLY format {" ".join(tokens[1:])!r}', line=number)
            fmt = tokens[1]
        elif tokens[0] == 'element':
            if len(tokens) != 3 or tokens[1] not in ('vertex', 'face'):
                raise MeshParseError(path, f'unsupported PLY element {" ".join(tokens[1:])!r}', line=number)
            elements.append({'name': tokens[1], 'count': int(tokens[2]), 'properties': []})
        elif tokens[0] == 'property':
            if not elements:
                raise MeshParseError(path, 'property before any element', line=number)
            if tokens[1] == 'list':
                if len(tokens) != 5 or tokens[2] not in PLY_TYPES or tokens[3] not in PLY_TYPES:
                    raise MeshParseError(path, f'bad list property {raw.strip()!r}', line=number)
                elements[-1]['properties'].append((tokens[4], PLY_TYPES[tokens[2]], PLY_TYPES[tokens[3]]))
            else:
                if len(tokens) != 3 or tokens[1] not in PLY_TYPES:
                    raise MeshParseError(path, f'bad property {raw.strip()!r}', line=number)
                elements[-1]['properties'].append((tokens[2], PLY_TYPES[tokens[1]], None))
        else:
            raise MeshParseError(path, f'unexpected header line {raw.strip()!r}', line=number)
    if fmt is None:
        raise MeshParseError(path, 'missing format line')
    return fmt, elements, comments, body_start


def _load_ply(path) -> TriangleSoup:
    data = pathlib.Path(path).read_bytes()
    fmt, elements, comments, body_start = _read_ply_header(path, data)
    if fmt == 'ascii':
        vertices, triangles = _ply_ascii_body(path, data, elements, body_start)
    else:
        vertices, triangles = _ply_binary_body(path, data, elements, body_start)
    if vertices is None:
        raise MeshParseError(path, 'no vertex element')
    if triangles is None:
        triangles = np.zeros((0, 3), dtype=np.int64)
    if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshParseError(path, f'face index out of range for {len(vertices)} vertices')
    return TriangleSoup(vertices, triangles, tuple(comments))


def _fan(face):
    return [[face[0], face[i], face[i + 1]] for i in range(1, len(face) - 1)]


def _xyz_columns(path, element):
    names = [p[0] for p in element['properties']]
    try:
        return [names.index(axis) for axis in 'xyz']
    except ValueError:
        raise MeshParseError(path, 'vertex element lacks x, y, z properties')


def _face_list_index(path, element):
    lists = [i for i, p in enumerate(element['properties']) if p[2] is not None]
    if not lists or element['properties'][lists[0]][0] not in ('vertex_indices', 'vertex_index'):
        raise MeshParseError(path, 'face element lacks a vertex_indices list')
    return lists[0]


def _ply_ascii_body(path, data, elements, body_start):
    header_lines = data[:body_start].count(b'\n')
    lines = data[body_start:].decode('ascii', errors='replace').splitlines()
    cursor = 0
    vertices = triangles = None

    def next_line():
        nonlocal cursor
        while cursor < len(lines) and not lines[cursor].strip():
            cursor += 1
        if cursor >= len(lines):
            raise MeshParseError(path, 'unexpected end of file', line=header_lines + cursor + 1)
        cursor += 1
        return cursor + header_lines, lines[cursor - 1].split()

    for element in elements:
        if element['name'] == 'vertex':
            columns = _xyz_columns(path, element)
            vertices = np.zeros((element['count'], 3))
            for i in range(element['count']):
                number, tokens = next_line()
                try:
                    vertices[i] = [float(tokens[c]) for c in columns]
                except (ValueError, IndexError):
                    raise MeshParseError(path, 'bad vertex record', line=number)
        else:
            list_index = _face_list_index(path, element)
            faces = []
            for _ in range(element['count']):
                number, tokens = next_line()
                try:
                    # one token per scalar property before the list
                    count = int(tokens[list_index])
                    face = [int(t) for t in tokens[list_index + 1:list_index + 1 + count]]
                except (ValueError, IndexError):
                    raise MeshParseError(path, 'bad face record', line=number)
                if len(face) != count or count < 3:
                    raise MeshParseError(path, 'face needs at least three vertex indices', line=number)
                faces.extend(_fan(face))
            triangles = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return vertices, triangles


def _ply_binary_body(path, data, elements, body_start):
    offset = body_start
    vertices = triangles = None
    for element in elements:
        if element['name'] == 'vertex':
            if any(p[2] is not None for p in element['properties']):
                raise MeshParseError(path, 'list property in vertex element', offset=offset)
            dtype = np.dtype([(name, '<' + kind) for name, kind, _ in element['properties']])
            size = dtype.itemsize * element['count']
            if offset + size > len(data):
                raise MeshParseError(path, 'truncated vertex block', offset=offset)
            records = np.frombuffer(data, dtype=dtype, count=element['count'], offset=offset)
            _xyz_columns(path, element)
            vertices = np.stack([records[axis].astype(np.float64) for axis in 'xyz'], axis=1)
            offset += size
        else:
            triangles, offset = _ply_binary_faces(path, data, element, offset)
    return vertices, triangles


def _ply_binary_faces(path, data, element, offset):
    list_index = _face_list_index(path, element)
    properties = element['properties']
    count = element['count']

    if len(properties) == 1:
        _, count_type, index_type = properties[0]
        dtype = np.dtype([('n', '<' + count_type), ('v', '<' + index_type, (3,))])
        if offset + dtype.itemsize * count <= len(data):
            records = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            if (records['n'] == 3).all():
                return records['v'].astype(np.int64), offset + dtype.itemsize * count

    faces = []
    for _ in range(count):
        for position, (name, kind, index_kind) in enumerate(properties):
            scalar = np.dtype('<' + kind)
            if offset + scalar.itemsize > len(data):
                raise MeshParseError(path, 'truncated face block', offset=offset)
            value = int(np.frombuffer(data, dtype=scalar, count=1, offset=offset)[0])
            offset += scalar.itemsize
            if index_kind is None:
                continue
            item = np.dtype('<' + index_kind)
            if offset + item.itemsize * value > len(data):
                raise MeshParseError(path, 'truncated face block', offset=offset)
            if position == list_index:
                if value < 3:
                    raise MeshParseError(path, 'face needs at least three vertex indices', offset=offset)
                face = np.frombuffer(data, dtype=item, count=value, offset=offset).astype(np.int64)
                faces.extend(_fan(list(face)))
            offset += item.itemsize * value
    return np.array(faces, dtype=np.int64).reshape(-1, 3), offset


def _write_obj(soup, path, comments):
    lines = [f'# {c}' for c in comments]
    lines.extend(f'v {x!r} {y!r} {z!r}' for x, y, z in soup.vertices.tolist())
    lines.extend(f'f {a + 1} {b + 1} {c + 1}' for a, b, c in soup.triangles.tolist())
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')


def _write_ply(soup, path, comments, binary):
    header = ['ply', f'format {"binary_little_endian" if binary else "ascii"} 1.0']
    header.extend(f'comment {c}' for c in comments)
    header.extend([
        f'element vertex {len(soup.vertices)}',
        'property double x', 'property double y', 'property double z',
        f'element face {len(soup.triangles)}',
        'property list uchar int vertex_indices',
        'end_header',
    ])
    head = ('\n'.join(header) + '\n').encode('ascii')

    if binary:
        faces = np.zeros(len(soup.triangles), dtype=[('n', 'u1'), ('v', '<i4', (3,))])
        faces['n'] = 3
        faces['v'] = soup.triangles
        body = soup.vertices.astype('<f8').tobytes() + faces.tobytes()
    else:
        rows = [f'{x!r} {y!r} {z!r}' for x, y, z in soup.vertices.tolist()]
        rows.extend(f'3 {a} {b} {c}' for a, b, c in soup.triangles.tolist())
        body = ('\n'.join(rows) + '\n').encode('ascii') if rows else b''
    path.write_bytes(head + body)
