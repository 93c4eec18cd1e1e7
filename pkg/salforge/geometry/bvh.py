"""
Bounding volume hierarchy over triangles for exact nearest-triangle queries.

Built top-down with a binned surface-area heuristic and stored as flat arrays. Queries
run in batches: a point subset travels down the tree and is filtered at every node by
its box distance, so each node is visited at most once per batch.
"""
import logging
import typing

import numpy as np
from scipy.spatial import cKDTree

from salforge.autodiff.tensor import ContractError
from salforge.geometry.distance import closest_points, squared_distances
from salforge.geometry.mesh import TriangleSoup

LEAF_SIZE = 4
BINS = 12
# box distances are compared with a small slack so float rounding never prunes an exact tie
PRUNE_SLACK = 1e-12


def _area(lower, upper):
    extent = np.maximum(upper - lower, 0.0)
    return 2.0 * (extent[..., 0] * extent[..., 1] + extent[..., 1] * extent[..., 2] + extent[..., 2] * extent[..., 0])


class Bvh:

    def __init__(self, soup: TriangleSoup, leaf_size: int = LEAF_SIZE, bins: int = BINS):
        if not len(soup):
            raise ContractError('cannot build a BVH over an empty triangle soup')
        self.soup = soup
        self.leaf_size = leaf_size
        self.bins = bins
        self.corners = soup.corners
        self._tri_lower = self.corners.min(axis=1)
        self._tri_upper = self.corners.max(axis=1)
        self._centroids = self.corners.mean(axis=1)

        self.lower, self.upper = [], []
        self.left, self.right = [], []
        self.start, self.count = [], []
        self.order = np.arange(len(soup), dtype=np.int64)
        self._build()
        self.lower, self.upper = np.array(self.lower), np.array(self.upper)
        self.left, self.right = np.array(self.left), np.array(self.right)
        self.start, self.count = np.array(self.start), np.array(self.count)

        self._seed_tree = cKDTree(self._centroids)
        logging.debug(f'BVH: {len(soup)} triangles, {len(self.left)} nodes')

    def __len__(self):
        return len(self.left)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def leaf_triangles(self, node: int) -> np.ndarray:
        return self.order[self.start[node]:self.start[node] + self.count[node]]

    def _new_node(self, first, count):
        members = self.order[first:first + count]
        self.lower.append(self._tri_lower[members].min(axis=0))
        self.upper.append(self._tri_upper[members].max(axis=0))
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(first)
        self.count.append(count)
        return len(self.left) - 1

    def _build(self):
        stack = [self._new_node(0, len(self.order))]
        while stack:
            node = stack.pop()
            first, count = self.start[node], self.count[node]
            if count <= self.leaf_size:
                continue
            split = self._split(first, count)
            left = self._new_node(first, split)
            right = self._new_node(first + split, count - split)
            self.left[node], self.right[node] = left, right
            stack.extend([right, left])

    def _split(self, first, count) -> int:
        """Reorder the node's triangles in place and return the size of the left part."""
        members = self.order[first:first + count]
        centroids = self._centroids[members]
        low, high = centroids.min(axis=0), centroids.max(axis=0)

        best = (np.inf, None, None)
        for axis in range(3):
            extent = high[axis] - low[axis]
            if extent <= 0:
                continue
            bins = np.minimum(((centroids[:, axis] - low[axis]) / extent * self.bins).astype(np.int64), self.bins - 1)
            bin_count = np.bincount(bins, minlength=self.bins)
            bin_lower = np.full((self.bins, 3), np.inf)
            bin_upper = np.full((self.bins, 3), -np.inf)
            np.minimum.at(bin_lower, bins, self._tri_lower[members])
            np.maximum.at(bin_upper, bins, self._tri_upper[members])

            left_lower = np.minimum.accumulate(bin_lower, axis=0)[:-1]
            left_upper = np.maximum.accumulate(bin_upper, axis=0)[:-1]
            right_lower = np.minimum.accumulate(bin_lower[::-1], axis=0)[::-1][1:]
            right_upper = np.maximum.accumulate(bin_upper[::-1], axis=0)[::-1][1:]
            left_count = np.cumsum(bin_count)[:-1]
            right_count = count - left_count
            valid = (left_count > 0) & (right_count > 0)
            if not valid.any():
                continue
            cost = np.where(valid, _area(left_lower, left_upper) * left_count
                            + _area(right_lower, right_upper) * right_count, np.inf)
            plane = int(np.argmin(cost))
            if cost[plane] < best[0]:
                best = (cost[plane], axis, bins <= plane)

        _, axis, goes_left = best
        if axis is None:
            # all centroids coincide: split by position in the list
            return count // 2
        self.order[first:first + count] = np.concatenate([members[goes_left], members[~goes_left]])
        return int(goes_left.sum())

    def _box_distance2(self, node, points):
        clamped = np.clip(points, self.lower[node], self.upper[node])
        return ((points - clamped) ** 2).sum(axis=1)

    def query(self, points) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(distance, closest point, triangle index) per point; ties go to the lowest triangle index."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        if not n:
            return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)

        # an upper bound from the triangle with the nearest centroid prunes most of the tree
        _, seed = self._seed_tree.query(points)
        best_index = np.asarray(seed, dtype=np.int64)
        best, closest = self._seed_distances(points, best_index)

        stack = [(0, np.arange(n))]
        while stack:
            node, subset = stack.pop()
            box = self._box_distance2(node, points[subset])
            subset = subset[box <= best[subset] * (1 + PRUNE_SLACK)]
            if not len(subset):
                continue
            if self.left[node] >= 0:
                stack.append((self.right[node], subset))
                stack.append((self.left[node], subset))
                continue
            for triangle in self.leaf_triangles(node):
                d2, q = squared_distances(points[subset], self.corners, triangle)
                current = best[subset]
                better = (d2 < current) | ((d2 == current) & (triangle < best_index[subset]))
                if better.any():
                    won = subset[better]
                    best[won] = d2[better]
                    closest[won] = q[better]
                    best_index[won] = triangle
        return np.sqrt(best), closest, best_index

    def _seed_distances(self, points, triangles):
        corners = self.corners[triangles]
        closest = closest_points(points, corners[:, 0], corners[:, 1], corners[:, 2])
        return ((points - closest) ** 2).sum(axis=1), closest


def unsigned_distance(bvh: Bvh, soup: TriangleSoup, p):
    """
    Unsigned distance from `p` to `soup` through `bvh`. A single point gives scalars,
    an (N, 3) array gives arrays.
    """
    if bvh.soup is not soup and not (len(bvh.soup) == len(soup) and np.array_equal(bvh.corners, soup.corners)):
        raise ContractError('BVH was built over a different triangle soup')
    p = np.asarray(p, dtype=np.float64)
    d, q, index = bvh.query(p)
    if p.ndim == 1:
        return float(d[0]), q[0], int(index[0])
    return d, q, index
