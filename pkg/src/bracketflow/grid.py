"""Occupancy grids: discretized indicator functions on a box.

File format "RGRID v1": a single text header line

    RGRID v1 <dim> <res_1..res_d> <min_1..min_d> <max_1..max_d>

followed by one line of base64-encoded, row-major (C order) packed bits.
"""

from __future__ import annotations

import base64

import numpy as np

__all__ = ["OccupancyGrid"]


class OccupancyGrid:
    def __init__(self, box_min, box_max, resolution):
        self.box_min = np.asarray(box_min, dtype=float)
        self.box_max = np.asarray(box_max, dtype=float)
        self.resolution = tuple(int(r) for r in resolution)
        if self.box_min.shape != self.box_max.shape or self.box_min.ndim != 1:
            raise ValueError("box corners must be 1-d and matching")
        if len(self.resolution) != self.box_min.size:
            raise ValueError("one resolution entry per axis")
        if np.any(self.box_max <= self.box_min):
            raise ValueError("degenerate box")
        if any(r < 1 for r in self.resolution):
            raise ValueError("resolutions must be >= 1")
        self.cells = np.zeros(self.resolution, dtype=bool)

    # geometry ---------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.box_min.size

    @property
    def cell_size(self) -> np.ndarray:
        return (self.box_max - self.box_min) / np.array(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.cell_size))

    def same_spec(self, other: "OccupancyGrid") -> bool:
        return (self.resolution == other.resolution
                and np.array_equal(self.box_min, other.box_min)
                and np.array_equal(self.box_max, other.box_max))

    # occupancy ---------------------------------------------------------------

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells))

    @property
    def occupied_fraction(self) -> float:
        return self.occupied_count / self.cells.size

    @property
    def occupied_volume(self) -> float:
        return self.occupied_count * self.cell_volume

    def indices_of(self, points):
        """(inside_mask, per-axis index array) for a batch of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (pts - self.box_min) / self.cell_size
        idx = np.floor(rel).astype(int)
        inside = np.all((pts >= self.box_min) & (pts <= self.box_max), axis=1)
        np.clip(idx, 0, np.array(self.resolution) - 1, out=idx)
        return inside, idx

    def mark(self, points) -> int:
        """Mark the cells containing the given points; outside points are
        ignored. Returns how many points landed inside."""
        inside, idx = self.indices_of(points)
        sel = idx[inside]
        if sel.size:
            self.cells[tuple(sel.T)] = True
        return int(np.count_nonzero(inside))

    def membership(self, points) -> np.ndarray:
        """Indicator values at points; outside the box counts as 0."""
        inside, idx = self.indices_of(points)
        out = np.zeros(len(idx), dtype=bool)
        sel = idx[inside]
        if sel.size:
            out[inside] = self.cells[tuple(sel.T)]
        return out

    def occupied_centers(self) -> np.ndarray:
        idx = np.argwhere(self.cells)
        return self.box_min + (idx + 0.5) * self.cell_size

    def all_centers(self) -> np.ndarray:
        axes = [self.box_min[j] + (np.arange(r) + 0.5) * self.cell_size[j]
                for j, r in enumerate(self.resolution)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.box_min, self.box_max, self.resolution)
        g.cells = self.cells.copy()
        return g

    def union(self, other: "OccupancyGrid") -> "OccupancyGrid":
        if not self.same_spec(other):
            raise ValueError("grids with different specs cannot be merged")
        g = self.copy()
        g.cells |= other.cells
        return g

    def union_inplace(self, other: "OccupancyGrid"):
        if not self.same_spec(other):
            raise ValueError("grids with different specs cannot be merged")
        self.cells |= other.cells

    def __eq__(self, other):
        return (isinstance(other, OccupancyGrid) and self.same_spec(other)
                and np.array_equal(self.cells, other.cells))

    @classmethod
    def from_predicate(cls, box_min, box_max, resolution, predicate) -> "OccupancyGrid":
        """Rasterize a set: mark every cell whose center satisfies the
        predicate (a boolean function of a point batch)."""
        g = cls(box_min, box_max, resolution)
        centers = g.all_centers()
        g.cells = np.asarray(predicate(centers), dtype=bool).reshape(g.resolution)
        return g

    # serialization ------------------------------------------------------------

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.header() + "\n")
            packed = np.packbits(self.cells.ravel(order="C").astype(np.uint8))
            fh.write(base64.b64encode(packed.tobytes()).decode("ascii") + "\n")

    def header(self) -> str:
        parts = (["RGRID", "v1", str(self.dim)]
                 + [str(r) for r in self.resolution]
                 + [repr(float(v)) for v in self.box_min]
                 + [repr(float(v)) for v in self.box_max])
        return " ".join(parts)

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        with open(path) as fh:
            header = fh.readline().split()
            payload = fh.readline().strip()
        if header[:2] != ["RGRID", "v1"]:
            raise ValueError(f"not an RGRID v1 file: {path}")
        dim = int(header[2])
        res = [int(v) for v in header[3:3 + dim]]
        lo = [float(v) for v in header[3 + dim:3 + 2 * dim]]
        hi = [float(v) for v in header[3 + 2 * dim:3 + 3 * dim]]
        g = cls(lo, hi, res)
        bits = np.unpackbits(np.frombuffer(base64.b64decode(payload), dtype=np.uint8))
        g.cells = bits[:g.cells.size].astype(bool).reshape(g.resolution)
        return g

    def export_csv(self, path):
        """Occupied cell centers, one row per cell."""
        centers = self.occupied_centers()
        header = ",".join(f"x{j + 1}" for j in range(self.dim))
        np.savetxt(path, centers, delimiter=",", header=header, comments="")
