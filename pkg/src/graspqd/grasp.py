"""Quasi-static parallel-jaw grasp evaluation.

A grasp is a 6-DoF pose of the gripper's palm frame in the object frame:
approach along local +z, jaws closing along local x. The gripper starts wide
open; the evaluator checks the gripper bodies for collision, closes both
fingers until their ray fans touch the surface, then applies the antipodal
friction-cone test. Domain-randomized re-evaluation turns that binary check
into a quality label.
"""
from __future__ import annotations

import enum
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import rotations
from .geometry import dot
from .mesh import boxes_intersect, raycast_many


class FailureReason(str, enum.Enum):
    NONE = "none"
    BODY_COLLISION = "body_collision"
    MISSED_CONTACT = "missed_contact"
    FRICTION_CONE_VIOLATION = "friction_cone_violation"


_REASONS = list(FailureReason)
_CODE = {r: i for i, r in enumerate(_REASONS)}


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class GripperSpec:
    """Box model of a two-finger parallel gripper (defaults near a Panda hand).

    ``finger_pad`` and ``palm_box`` are half-extents along the gripper's
    local (closing x, lateral y, approach z) axes. The palm frame origin sits
    at the centre of the palm's front face; fingers span ``z in
    [finger_length - 2 * pad_z, finger_length]``. Contact rays are cast from
    each finger's inner face at the TCP depth, ``fan_rays`` per finger, on an
    ellipse of semi-axes ``(0.8 * pad_y, fan_spread)`` around the TCP.
    """

    max_opening: float = 0.08
    finger_length: float = 0.05
    finger_pad: tuple = (0.01, 0.005, 0.025)
    palm_box: tuple = (0.04, 0.02, 0.01)
    friction: float = 0.5
    tcp_offset: float = 0.04
    fan_rays: int = 5
    fan_spread: float = 0.010

    def __post_init__(self):
        object.__setattr__(self, "finger_pad", tuple(float(x) for x in self.finger_pad))
        object.__setattr__(self, "palm_box", tuple(float(x) for x in self.palm_box))
        lengths = [self.max_opening, self.finger_length, self.tcp_offset, *self.finger_pad, *self.palm_box]
        if min(lengths) <= 0:
            raise ValueError("gripper lengths must be positive")
        if self.friction <= 0:
            raise ValueError("friction coefficient must be positive")
        if self.max_opening <= 4 * self.finger_pad[0]:
            raise ValueError("max_opening must exceed twice the finger thickness")
        if self.fan_rays < 1 or self.fan_spread < 0:
            raise ValueError("need at least one contact ray and a non-negative fan spread")

    @property
    def digest(self):
        return _digest(asdict(self))

    def boxes(self):
        """Local (centers, half_extents) of palm, left finger, right finger."""
        px, py, pz = self.palm_box
        fx, fy, fz = self.finger_pad
        off = self.max_opening / 2 + fx
        zc = self.finger_length - fz
        centers = np.array([[0.0, 0.0, -pz], [-off, 0.0, zc], [off, 0.0, zc]])
        half = np.array([self.palm_box, self.finger_pad, self.finger_pad])
        return centers, half

    def fan(self):
        """Local ray origins (2, F, 3) and directions (2, 3), left finger first."""
        n = self.fan_rays
        yz = [(0.0, self.tcp_offset)]
        ry = 0.8 * self.finger_pad[1]
        for k in range(n - 1):
            a = 2 * np.pi * k / (n - 1)
            yz.append((ry * np.cos(a), self.tcp_offset + self.fan_spread * np.sin(a)))
        yz = np.array(yz)
        x = self.max_opening / 2
        origins = np.stack([np.c_[np.full(n, -x), yz], np.c_[np.full(n, x), yz]])
        dirs = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        return origins, dirs


@dataclass(frozen=True)
class GraspGenome:
    """Palm pose in the object frame; quaternion scalar-first, scalar part >= 0."""

    position: tuple
    quaternion: tuple

    def __post_init__(self):
        p = tuple(float(x) for x in self.position)
        q = tuple(float(x) for x in self.quaternion)
        if len(p) != 3 or len(q) != 4:
            raise ValueError("genome needs a 3-D position and a 4-D quaternion")
        if abs(sum(x * x for x in q) - 1) > 2e-9:
            raise ValueError(f"quaternion {q} is not unit-norm")
        if q[0] < 0:
            raise ValueError("quaternion must have a non-negative scalar part")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", q)

    @classmethod
    def from_pose(cls, position, quaternion):
        q = rotations.canonical(np.asarray(quaternion, dtype=float))
        return cls(tuple(np.asarray(position, dtype=float).tolist()), tuple(q.tolist()))

    def as_array(self):
        return np.array(self.position + self.quaternion)


@dataclass(frozen=True)
class EvalOutcome:
    success: bool
    failure_reason: FailureReason
    contacts: Optional[tuple] = None
    closing_width: float = 0.0
    quality: float = 0.0
    robust: bool = False
    trials_run: int = 1
    rng_seed: int = 0


@dataclass(frozen=True)
class DomainRandomizationSpec:
    sigma_pos: float = 0.003
    sigma_rot: float = 0.05
    friction_range: tuple = (0.3, 0.7)
    n_label_trials: int = 10
    n_robust_trials: int = 3

    def __post_init__(self):
        object.__setattr__(self, "friction_range", tuple(float(x) for x in self.friction_range))
        lo, hi = self.friction_range
        if self.sigma_pos < 0 or self.sigma_rot < 0:
            raise ValueError("perturbation sigmas must be non-negative")
        if not 0 < lo <= hi:
            raise ValueError("friction range must be positive and ordered")
        if not 1 <= self.n_robust_trials <= self.n_label_trials:
            raise ValueError("need 1 <= n_robust_trials <= n_label_trials")


class PoseResults(NamedTuple):
    success: np.ndarray
    reason: np.ndarray  # index into FailureReason
    width: np.ndarray
    points: np.ndarray  # (N, 2, 3)
    normals: np.ndarray  # (N, 2, 3)


def _apply(m, v):
    """Batched ``m @ v`` for (N, 3, 3) and (N, 3), written out."""
    return np.stack([
        m[:, 0, 0] * v[:, 0] + m[:, 0, 1] * v[:, 1] + m[:, 0, 2] * v[:, 2],
        m[:, 1, 0] * v[:, 0] + m[:, 1, 1] * v[:, 1] + m[:, 1, 2] * v[:, 2],
        m[:, 2, 0] * v[:, 0] + m[:, 2, 1] * v[:, 1] + m[:, 2, 2] * v[:, 2],
    ], axis=-1)


def _evaluate_chunk_numpy(mesh, gripper, positions, quaternions, friction):
    n = len(positions)
    rot = rotations.to_matrix(quaternions)
    centers, half = gripper.boxes()
    nb = len(centers)
    rot_b = np.repeat(rot, nb, axis=0)
    box_c = np.repeat(positions, nb, axis=0) + _apply(rot_b, np.tile(centers, (n, 1)))
    collided = boxes_intersect(mesh, box_c, rot_b, np.tile(half, (n, 1))).reshape(n, nb).any(axis=1)

    success = np.zeros(n, dtype=bool)
    reason = np.full(n, _CODE[FailureReason.BODY_COLLISION])
    width = np.zeros(n)
    points = np.full((n, 2, 3), np.nan)
    normals = np.full((n, 2, 3), np.nan)
    live = np.nonzero(~collided)[0]
    if live.size == 0:
        return PoseResults(success, reason, width, points, normals)

    lo, ld = gripper.fan()
    nf = lo.shape[1]
    m = len(live)
    rot_r = np.repeat(rot[live], 2 * nf, axis=0)
    o = np.repeat(positions[live], 2 * nf, axis=0) + _apply(rot_r, np.tile(lo.reshape(-1, 3), (m, 1)))
    d = _apply(rot_r, np.tile(np.repeat(ld, nf, axis=0), (m, 1)))
    reach = gripper.max_opening / 2
    has, t, tri = raycast_many(mesh, o, d, reach)
    has = has.reshape(m, 2, nf)
    t_f = np.where(has, t.reshape(m, 2, nf), np.inf)
    best = np.argmin(t_f, axis=2)  # first minimum: lowest ray index wins ties
    rows = np.arange(m)[:, None]
    fingers = np.arange(2)[None, :]
    t_best = t_f[rows, fingers, best]
    touched = np.isfinite(t_best).all(axis=1)

    ray_idx = (rows * 2 + fingers) * nf + best
    tri_best = tri[ray_idx]
    o_best, d_best = o[ray_idx], d[ray_idx]
    nrm = mesh.normals[np.where(touched[:, None], tri_best, 0)]
    # contact normal must lie in the friction cone around the pushing direction
    cos_lim = 1.0 / np.sqrt(1.0 + friction[live] * friction[live])
    in_cone = (-dot(nrm, d_best) >= cos_lim[:, None]).all(axis=1)

    ok = touched & in_cone
    res = np.where(touched, np.where(in_cone, _CODE[FailureReason.NONE], _CODE[FailureReason.FRICTION_CONE_VIOLATION]),
                   _CODE[FailureReason.MISSED_CONTACT])
    reason[live] = res
    success[live] = ok
    tl = live[touched]
    tt = t_best[touched]
    width[tl] = gripper.max_opening - tt[:, 0] - tt[:, 1]
    points[tl] = o_best[touched] + tt[:, :, None] * d_best[touched]
    normals[tl] = nrm[touched]
    return PoseResults(success, reason, width, points, normals)


def _evaluate_chunk_compiled(mesh, gripper, positions, quaternions, friction):
    from . import _kernels

    n = len(positions)
    rot = np.ascontiguousarray(rotations.to_matrix(quaternions))
    centers, half = gripper.boxes()
    fan_o, fan_d = gripper.fan()
    out = PoseResults(np.zeros(n, bool), np.zeros(n, np.int64), np.zeros(n),
                      np.full((n, 2, 3), np.nan), np.full((n, 2, 3), np.nan))
    _kernels.evaluate(np.ascontiguousarray(positions), rot, np.ascontiguousarray(friction),
                      centers, np.ascontiguousarray(half), fan_o, fan_d, float(gripper.max_opening),
                      *mesh.packed, *out)
    return out


_CHUNK = {"compiled": _evaluate_chunk_compiled, "numpy": _evaluate_chunk_numpy}


def evaluate_poses(mesh, gripper, positions, quaternions, friction=None, jobs=1, backend="compiled"):
    """Nominal evaluation of many poses at once.

    ``friction`` optionally overrides the gripper's coefficient per pose.
    With ``jobs > 1`` contiguous chunks are evaluated in threads; each pose's
    result does not depend on the chunking. ``backend="numpy"`` selects the
    vectorized reference route, which gives identical results.
    """
    _evaluate_chunk = _CHUNK[backend]
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    quaternions = np.atleast_2d(np.asarray(quaternions, dtype=float))
    n = len(positions)
    if friction is None:
        friction = np.full(n, float(gripper.friction))
    friction = np.broadcast_to(np.asarray(friction, dtype=float), (n,))
    if n == 0:
        return PoseResults(np.zeros(0, bool), np.zeros(0, int), np.zeros(0), np.zeros((0, 2, 3)), np.zeros((0, 2, 3)))
    if jobs <= 1 or n < 2 * jobs:
        return _evaluate_chunk(mesh, gripper, positions, quaternions, friction)
    bounds = np.linspace(0, n, jobs + 1).astype(int)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(
            lambda se: _evaluate_chunk(mesh, gripper, positions[se[0]:se[1]], quaternions[se[0]:se[1]],
                                       friction[se[0]:se[1]]),
            zip(bounds[:-1], bounds[1:])))
    return PoseResults(*(np.concatenate([getattr(p, f) for p in parts]) for f in PoseResults._fields))


def _trial_draws(dr, rng_seed):
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal((dr.n_label_trials, 6))
    mu = rng.uniform(dr.friction_range[0], dr.friction_range[1], size=dr.n_label_trials)
    return noise, mu


def _perturb(positions, quaternions, noise, gripper, dr):
    """Apply gripper-frame noise rows to poses, one row per pose."""
    n = len(positions)
    dq = rotations.from_rotvec(dr.sigma_rot * noise[:, 3:])
    q_new = rotations.multiply(quaternions, dq)
    rot = rotations.to_matrix(quaternions)
    rot_new = rotations.to_matrix(q_new)
    tcp_local = np.broadcast_to(np.array([0.0, 0.0, gripper.tcp_offset]), (n, 3))
    shift = _apply(rot, dr.sigma_pos * noise[:, :3]) + _apply(rot - rot_new, tcp_local)
    return positions + shift, q_new


def perturbations(genome, gripper, dr, rng_seed):
    """Domain-randomized variants of a pose: ``(positions, quaternions, friction)``.

    Noise is drawn in the gripper frame (rotation about the TCP), so a rigid
    transform of object and grasp together leaves the trials unchanged.
    All trials come from one stream seeded by ``rng_seed``; row ``i`` is
    trial ``i``.
    """
    noise, mu = _trial_draws(dr, rng_seed)
    n = dr.n_label_trials
    pos, q_new = _perturb(np.tile(np.array(genome.position), (n, 1)),
                          np.tile(np.array(genome.quaternion), (n, 1)), noise, gripper, dr)
    return pos, q_new, mu


def _outcome(res, i, **extra):
    reason = _REASONS[int(res.reason[i])]
    contacts = None
    if np.isfinite(res.points[i]).all():
        contacts = tuple((tuple(res.points[i, k].tolist()), tuple(res.normals[i, k].tolist())) for k in range(2))
    return EvalOutcome(bool(res.success[i]), reason, contacts, float(res.width[i]), **extra)


def evaluate_nominal(mesh, gripper, genome):
    res = evaluate_poses(mesh, gripper, [genome.position], [genome.quaternion])
    return _outcome(res, 0)


def evaluate_genomes(mesh, gripper, genomes, dr, seeds, jobs=1):
    """Nominal evaluation plus domain-randomized quality labels for each genome.

    A nominal failure gets quality 0 and a single trial. Otherwise
    ``dr.n_label_trials`` perturbed trials are run; quality is their success
    fraction and the grasp is robust iff the first ``dr.n_robust_trials``
    all succeed.
    """
    if not genomes:
        return []
    pos = np.array([g.position for g in genomes])
    quat = np.array([g.quaternion for g in genomes])
    nominal = evaluate_poses(mesh, gripper, pos, quat, jobs=jobs)
    ok = np.nonzero(nominal.success)[0]
    n_trials = dr.n_label_trials
    quality = np.zeros(len(genomes))
    robust = np.zeros(len(genomes), dtype=bool)
    if ok.size:
        draws = [_trial_draws(dr, seeds[i]) for i in ok]
        t_pos, t_quat = _perturb(np.repeat(pos[ok], n_trials, axis=0), np.repeat(quat[ok], n_trials, axis=0),
                                 np.concatenate([d[0] for d in draws]), gripper, dr)
        trials = evaluate_poses(mesh, gripper, t_pos, t_quat, np.concatenate([d[1] for d in draws]), jobs=jobs)
        passed = trials.success.reshape(len(ok), n_trials)
        quality[ok] = passed.sum(axis=1) / n_trials
        robust[ok] = passed[:, :dr.n_robust_trials].all(axis=1)
    return [
        _outcome(nominal, i, quality=float(quality[i]), robust=bool(robust[i]),
                 trials_run=1 + n_trials if nominal.success[i] else 1, rng_seed=int(seeds[i]))
        for i in range(len(genomes))
    ]


def evaluate_with_quality(mesh, gripper, genome, dr, rng_seed):
    return evaluate_genomes(mesh, gripper, [genome], dr, [rng_seed])[0]


def behavior_descriptor(genome, tcp_offset=GripperSpec.tcp_offset):
    """TCP position ``p + R (0, 0, tcp_offset)`` in the object frame."""
    return descriptors(np.array([genome.position]), np.array([genome.quaternion]), tcp_offset)[0]


def descriptors(positions, quaternions, tcp_offset):
    rot = rotations.to_matrix(np.asarray(quaternions, dtype=float))
    return np.asarray(positions, dtype=float) + tcp_offset * rot[:, :, 2]
