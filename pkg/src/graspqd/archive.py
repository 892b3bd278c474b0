"""MAP-Elites grid archive over gripper TCP positions."""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grasp import EvalOutcome, GraspGenome

INSERTED, REPLACED, REJECTED = "inserted", "replaced", "rejected"


class Elite(NamedTuple):
    genome: GraspGenome
    outcome: EvalOutcome
    descriptor: tuple


def _rank(outcome):
    # a success outranks any failure; within each class higher quality wins
    return (outcome.success, outcome.quality)


class Archive:
    """Sparse 3-D grid holding at most one elite per cell.

    Parameters
    ----------
    grid_origin, grid_extent : array-like of shape (3,)
        Lower corner and side lengths of the behavior-space box, in meters.
    bins_per_axis : int
        Cells along each axis.
    """

    def __init__(self, grid_origin, grid_extent, bins_per_axis=25):
        self.grid_origin = np.asarray(grid_origin, dtype=float)
        self.grid_extent = np.asarray(grid_extent, dtype=float)
        if np.any(self.grid_extent <= 0):
            raise ValueError("grid extent must be positive")
        self.bins_per_axis = int(bins_per_axis)
        self.cell_size = self.grid_extent / self.bins_per_axis
        self._origin = self.grid_origin.tolist()
        self._extent = self.grid_extent.tolist()
        self._cell = self.cell_size.tolist()
        self.cells = {}
        self.success_count = 0
        self.robust_count = 0
        self._success_keys = []

    @classmethod
    def for_object(cls, mesh, gripper, bins_per_axis=25):
        """Grid over the object's AABB inflated by the gripper's reach."""
        lo, hi = mesh.aabb
        pad = gripper.finger_length + gripper.max_opening
        return cls(lo - pad, (hi - lo) + 2 * pad, bins_per_axis)

    @property
    def n_cells(self):
        return self.bins_per_axis ** 3

    @property
    def coverage(self):
        return len(self.cells) / self.n_cells

    def __len__(self):
        return len(self.cells)

    def bin_of(self, descriptor):
        top = self.bins_per_axis - 1
        return tuple(min(max(math.floor((float(x) - o) / c), 0), top)
                     for x, o, c in zip(descriptor, self._origin, self._cell))

    def cell_bounds(self, key):
        lo = self.grid_origin + np.asarray(key) * self.cell_size
        return lo, lo + self.cell_size

    def contains(self, descriptor):
        return all(o <= float(x) <= o + e for x, o, e in zip(descriptor, self._origin, self._extent))

    def try_insert(self, genome, outcome, descriptor):
        """Offer a candidate to its cell.

        Empty cells accept anything inside the grid. An occupied cell is taken
        over only by a strictly better candidate: a success beats any failure,
        otherwise higher quality wins and ties keep the incumbent.
        """
        if not self.contains(descriptor):
            return REJECTED
        key = self.bin_of(descriptor)
        incumbent = self.cells.get(key)
        if incumbent is not None and _rank(outcome) <= _rank(incumbent.outcome):
            return REJECTED
        self.cells[key] = Elite(genome, outcome, tuple(float(x) for x in descriptor))
        if outcome.success and (incumbent is None or not incumbent.outcome.success):
            self.success_count += 1
            self._success_keys.append(key)
        self.robust_count += int(outcome.robust) - int(incumbent is not None and incumbent.outcome.robust)
        return INSERTED if incumbent is None else REPLACED

    def successful_keys(self):
        """Keys of cells holding a successful elite, in the order they first succeeded."""
        return self._success_keys

    def elites(self, successful_only=False):
        """Elites in sorted cell order."""
        return [self.cells[k] for k in sorted(self.cells)
                if not successful_only or self.cells[k].outcome.success]

    def qualities(self, successful_only=True):
        return np.array([e.outcome.quality for e in self.elites(successful_only)])

    def digest(self):
        h = hashlib.sha256()
        h.update(struct.pack("<3d3di", *self.grid_origin, *self.grid_extent, self.bins_per_axis))
        for key in sorted(self.cells):
            e = self.cells[key]
            o = e.outcome
            h.update(struct.pack("<3i", *key))
            h.update(struct.pack("<7d", *e.genome.position, *e.genome.quaternion))
            h.update(struct.pack("<?dd?iq", o.success, o.quality, o.closing_width, o.robust, o.trials_run, o.rng_seed))
            h.update(o.failure_reason.value.encode())
        return h.hexdigest()
