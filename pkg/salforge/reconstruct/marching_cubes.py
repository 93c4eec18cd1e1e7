import dataclasses
import logging

import numpy as np

from salforge.geometry.mesh import TriangleSoup
from salforge.reconstruct.grid import ScalarGrid
from salforge.reconstruct.tables import CORNER_OFFSETS, EDGE_CORNERS, TRIANGLE_TABLE

NUDGE = 1e-6

# direction (0 = x, 1 = y, 2 = z) and lower-corner offset of every cube edge
EDGE_AXIS = np.abs(CORNER_OFFSETS[EDGE_CORNERS[:, 1]] - CORNER_OFFSETS[EDGE_CORNERS[:, 0]]).argmax(axis=1)
EDGE_LOWER = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]], CORNER_OFFSETS[EDGE_CORNERS[:, 1]])


@dataclasses.dataclass(eq=False)
class IsoSurface:
    """
    Marching cubes output together with the lattice edge each vertex was placed on:
    vertex v lies between lattice points `edge_start[v]` and `edge_start[v]` + unit step
    along `edge_axis[v]`, both as (i, j, k) indices.
    """
    soup: TriangleSoup
    values: np.ndarray
    edge_start: np.ndarray
    edge_axis: np.ndarray


def nudged(values: np.ndarray, iso: float = 0.0) -> np.ndarray:
    """Moves samples that equal `iso` exactly just above it."""
    values = np.array(values, dtype=np.float64)
    scale = float(np.abs(values).max()) if values.size else 0.0
    values[values == iso] = iso + NUDGE * (scale if scale > 0.0 else 1.0)
    return values


def extract_surface(grid: ScalarGrid, iso: float = 0.0) -> IsoSurface:
    values = nudged(grid.values, iso)
    below = values < iso
    r = grid.resolution
    axis = grid.axis

    # one vertex per sign-crossing lattice edge; ids[d][k, j, i] is the vertex of the edge
    # leaving lattice point (i, j, k) along direction d, or -1
    ids, vertices, starts, axes = [], [], [], []
    count = 0
    for d in range(3):
        lower = [slice(None)] * 3
        upper = [slice(None)] * 3
        lower[2 - d] = slice(0, r - 1)
        upper[2 - d] = slice(1, r)
        lower, upper = tuple(lower), tuple(upper)

        k, j, i = np.nonzero(below[lower] != below[upper])
        fa, fb = values[lower][k, j, i], values[upper][k, j, i]
        t = (iso - fa) / (fb - fa)
        start = np.stack([i, j, k], axis=1)
        points = axis[start]
        points[:, d] += t * (axis[start[:, d] + 1] - axis[start[:, d]])

        edge_ids = np.full(below[lower].shape, -1, dtype=np.int64)
        edge_ids[k, j, i] = np.arange(count, count + len(k))
        count += len(k)
        ids.append(edge_ids)
        vertices.append(points)
        starts.append(start)
        axes.append(np.full(len(k), d, dtype=np.int64))

    cases = np.zeros((r - 1,) * 3, dtype=np.int64)
    for corner, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cases |= below[dz:dz + r - 1, dy:dy + r - 1, dx:dx + r - 1].astype(np.int64) << corner
    ck, cj, ci = np.nonzero((cases != 0) & (cases != 255))

    cell_edges = np.empty((len(ck), 12), dtype=np.int64)
    for edge in range(12):
        lx, ly, lz = EDGE_LOWER[edge]
        cell_edges[:, edge] = ids[EDGE_AXIS[edge]][ck + lz, cj + ly, ci + lx]

    table = TRIANGLE_TABLE[cases[ck, cj, ci]]
    valid = table[:, :, 0] >= 0
    triangles = cell_edges[np.arange(len(ck))[:, None, None], np.maximum(table, 0)][valid]

    soup = TriangleSoup(np.concatenate(vertices), triangles)
    logging.debug(f'RECONSTRUCT: marching cubes at R={r}, {len(ck)} active cells, {len(triangles)} triangles')
    return IsoSurface(soup, values, np.concatenate(starts), np.concatenate(axes))


def marching_cubes(grid: ScalarGrid, iso: float = 0.0) -> TriangleSoup:
    """Triangle soup of the `iso` level set; empty when no cell straddles it."""
    return extract_surface(grid, iso).soup
