"""MAP-Elites grasp search: surface-prior initialization, mutation, selection."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import rotations
from .archive import Archive
from .grasp import (DomainRandomizationSpec, GraspGenome, GripperSpec, descriptors,
                    evaluate_genomes)
from .mesh import surface_points

_MASK63 = (1 << 63) - 1
_MASK64 = (1 << 64) - 1


class BudgetError(ValueError):
    """The evaluation budget cannot cover the seed population."""


def eval_seed(run_seed, index):
    """Deterministic per-evaluation seed (splitmix64 of run seed and index)."""
    z = (int(run_seed) * 0x9E3779B97F4A7C15 + int(index) + 1) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK63


@dataclass(frozen=True)
class RunConfig:
    eval_budget: int = 100_000
    batch_size: int = 64
    init_fraction: float = 0.1
    mutation_sigma_pos: float = 0.005
    mutation_sigma_rot: float = 0.1
    # palm standoff from the sampled surface point along its normal, meters
    standoff: tuple = (0.005, 0.03)
    # half-angle of the cone the approach axis is tilted within, radians
    tilt_cone: float = 0.35
    bins_per_axis: int = 25
    rng_seed: int = 0
    gripper: GripperSpec = field(default_factory=GripperSpec)
    dr: DomainRandomizationSpec = field(default_factory=DomainRandomizationSpec)

    def __post_init__(self):
        object.__setattr__(self, "standoff", tuple(float(x) for x in self.standoff))
        if self.eval_budget < 0 or self.batch_size < 1:
            raise ValueError("need eval_budget >= 0 and batch_size >= 1")
        if not 0 < self.init_fraction < 1:
            raise ValueError("init_fraction must lie in (0, 1)")
        if self.mutation_sigma_pos < 0 or self.mutation_sigma_rot < 0:
            raise ValueError("mutation sigmas must be non-negative")
        lo, hi = self.standoff
        if not 0 <= lo <= hi:
            raise ValueError("standoff interval must satisfy 0 <= min <= max")
        if not 0 <= self.tilt_cone <= np.pi:
            raise ValueError("tilt_cone must lie in [0, pi]")
        if self.bins_per_axis < 1:
            raise ValueError("bins_per_axis must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class RunMetrics:
    evaluations_used: int = 0
    robust_grasp_count: int = 0
    success_count: int = 0
    coverage: float = 0.0
    history: dict = field(default_factory=lambda: {
        "generation": [], "evaluations": [], "robust_count": [], "success_count": [], "coverage": []})

    @property
    def evals_per_robust_grasp(self):
        """Evaluations per robust elite, or None while there are none."""
        if self.robust_grasp_count == 0:
            return None
        return self.evaluations_used / self.robust_grasp_count

    @property
    def n_generations(self):
        return len(self.history["generation"])

    def robust_at(self, evaluations):
        """Robust count recorded at the last generation not past ``evaluations``."""
        ev = self.history["evaluations"]
        idx = np.searchsorted(ev, evaluations, side="right") - 1
        return 0 if idx < 0 else self.history["robust_count"][idx]

    def record(self, archive, evaluations):
        self.evaluations_used = evaluations
        self.robust_grasp_count = archive.robust_count
        self.success_count = archive.success_count
        self.coverage = archive.coverage
        h = self.history
        h["generation"].append(len(h["generation"]))
        h["evaluations"].append(evaluations)
        h["robust_count"].append(archive.robust_count)
        h["success_count"].append(archive.success_count)
        h["coverage"].append(archive.coverage)


class RunResult(NamedTuple):
    archive: Archive
    metrics: RunMetrics
    seed_outcomes: list = []


def _frames(approach, roll):
    """Rotation matrices with z = ``approach`` and x rolled by ``roll`` about it."""
    a = approach
    helper = np.where((np.abs(a[:, 0]) < 0.9)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    u = helper - (helper * a).sum(axis=1, keepdims=True) * a
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(a, u)
    x = np.cos(roll)[:, None] * u + np.sin(roll)[:, None] * v
    y = np.cross(a, x)
    return np.stack([x, y, a], axis=2)


def _matrix_to_quat(m):
    """Vectorized rotation-matrix to canonical quaternion."""
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    cand = np.stack([
        1 + tr,
        1 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2],
        1 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2],
        1 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2],
    ], axis=1)
    k = np.argmax(cand, axis=1)
    s = 2 * np.sqrt(np.maximum(cand[np.arange(len(m)), k], 1e-300))
    q = np.empty((len(m), 4))
    w = (m[:, 2, 1] - m[:, 1, 2], m[:, 0, 2] - m[:, 2, 0], m[:, 1, 0] - m[:, 0, 1])
    sym = (m[:, 0, 1] + m[:, 1, 0], m[:, 0, 2] + m[:, 2, 0], m[:, 1, 2] + m[:, 2, 1])
    rows = [
        (0.25 * s, w[0] / s, w[1] / s, w[2] / s),
        (w[0] / s, 0.25 * s, sym[0] / s, sym[1] / s),
        (w[1] / s, sym[0] / s, 0.25 * s, sym[2] / s),
        (w[2] / s, sym[1] / s, sym[2] / s, 0.25 * s),
    ]
    for case, row in enumerate(rows):
        sel = k == case
        q[sel] = np.stack(row, axis=1)[sel]
    return rotations.canonical(q)


def sample_prior_genomes(mesh, config, rng, count):
    """Poses hovering over the surface, approaching roughly against the normal.

    A surface point is drawn by area, the palm is placed ``delta`` along the
    normal (``delta`` uniform in ``config.standoff``), the approach axis is the
    inward normal tilted uniformly within the cone ``config.tilt_cone``, and
    the roll about the approach axis is uniform.
    """
    pts, nrm, _ = surface_points(mesh, rng, count)
    delta = rng.uniform(config.standoff[0], config.standoff[1], size=count)
    cos_t = rng.uniform(np.cos(config.tilt_cone), 1.0, size=count)
    phi = rng.uniform(0.0, 2 * np.pi, size=count)
    roll = rng.uniform(0.0, 2 * np.pi, size=count)
    inward = -nrm
    basis = _frames(inward, np.zeros(count))
    sin_t = np.sqrt(np.maximum(0.0, 1 - cos_t * cos_t))
    approach = (cos_t[:, None] * inward + (sin_t * np.cos(phi))[:, None] * basis[:, :, 0]
                + (sin_t * np.sin(phi))[:, None] * basis[:, :, 1])
    approach /= np.linalg.norm(approach, axis=1, keepdims=True)
    quats = _matrix_to_quat(_frames(approach, roll))
    positions = pts + delta[:, None] * nrm
    return [GraspGenome(tuple(p), tuple(q)) for p, q in zip(positions.tolist(), quats.tolist())]


def sample_prior_genome(mesh, config, rng):
    return sample_prior_genomes(mesh, config, rng, 1)[0]


def mutate_many(parents, config, rng):
    """Gaussian position noise plus a rotation of N(0, sigma_rot) angle about a random axis."""
    n = len(parents)
    pos = np.array([g.position for g in parents])
    quat = np.array([g.quaternion for g in parents])
    pos = pos + rng.normal(0.0, 1.0, size=(n, 3)) * config.mutation_sigma_pos
    if config.mutation_sigma_rot > 0:
        axis = rng.normal(size=(n, 3))
        angle = rng.normal(0.0, config.mutation_sigma_rot, size=n)
        quat = rotations.canonical(rotations.multiply(quat, rotations.from_axis_angle(axis, angle)))
    return [GraspGenome(tuple(p), tuple(q)) for p, q in zip(pos.tolist(), quat.tolist())]


def mutate(parent, config, rng):
    return mutate_many([parent], config, rng)[0]


def run(mesh, config: RunConfig, seed_population: Optional[Sequence[GraspGenome]] = None, *,
        seed_eval_seeds: Optional[Sequence[int]] = None, stop_after_seeds: bool = False,
        jobs: int = 1, evaluator: Optional[Callable] = None,
        checkpoints: Sequence[int] = ()) -> RunResult:
    """Run the QD search on ``mesh``.

    Seeds, when given, are evaluated first, in order. Then the surface prior
    fills the search up to ``init_fraction * eval_budget`` evaluations, and
    mutation of uniformly chosen successful elites spends the rest. With
    ``stop_after_seeds`` the run ends once the seeds are evaluated.

    ``seed_eval_seeds`` reuses given evaluation seeds for the seed genomes;
    every other evaluation ``i`` uses ``eval_seed(config.rng_seed, i)``.
    ``evaluator(genomes, seeds) -> outcomes`` replaces the grasp evaluator.
    Generations are cut short so that metrics get recorded exactly at every
    evaluation count listed in ``checkpoints``.
    """
    seeds = list(seed_population or [])
    if len(seeds) > config.eval_budget:
        raise BudgetError(
            f"evaluation budget {config.eval_budget} is smaller than the {len(seeds)} seed genomes")
    if seed_eval_seeds is not None and len(seed_eval_seeds) != len(seeds):
        raise ValueError("seed_eval_seeds must match the seed population")
    gripper = config.gripper
    if evaluator is None:
        def evaluator(genomes, eval_seeds):
            return evaluate_genomes(mesh, gripper, genomes, config.dr, eval_seeds, jobs=jobs)

    archive = Archive.for_object(mesh, gripper, config.bins_per_axis)
    metrics = RunMetrics()
    rng = np.random.default_rng(config.rng_seed)
    used = 0
    stops = sorted(int(c) for c in checkpoints if c > 0)

    def room(limit):
        # evaluations allowed in the next generation
        k = min(config.batch_size, limit - used)
        for c in stops:
            if c > used:
                return min(k, c - used)
        return k

    def step(genomes, eval_seeds=None):
        nonlocal used
        if eval_seeds is None:
            eval_seeds = [eval_seed(config.rng_seed, used + i) for i in range(len(genomes))]
        outcomes = evaluator(genomes, eval_seeds)
        desc = descriptors([g.position for g in genomes], [g.quaternion for g in genomes], gripper.tcp_offset)
        for g, o, d in zip(genomes, outcomes, desc):
            archive.try_insert(g, o, d)
        used += len(genomes)
        metrics.record(archive, used)
        return outcomes

    seed_outcomes = []
    while used < len(seeds):
        s, k = used, room(len(seeds))
        ev = None
        if seed_eval_seeds is not None:
            ev = [int(x) for x in seed_eval_seeds[s:s + k]]
        seed_outcomes += step(seeds[s:s + k], ev)
    if stop_after_seeds:
        return RunResult(archive, metrics, seed_outcomes)

    n_init = int(round(config.init_fraction * config.eval_budget))
    while used < n_init:
        step(sample_prior_genomes(mesh, config, rng, room(n_init)))

    while used < config.eval_budget:
        k = room(config.eval_budget)
        keys = archive.successful_keys() or list(archive.cells)
        if keys:
            picks = rng.integers(0, len(keys), size=k)
            parents = [archive.cells[keys[i]].genome for i in picks]
            step(mutate_many(parents, config, rng))
        else:
            step(sample_prior_genomes(mesh, config, rng, k))
    return RunResult(archive, metrics, seed_outcomes)
