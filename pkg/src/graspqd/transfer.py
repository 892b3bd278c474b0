"""Grasp transfer onto augmented objects and the bootstrap-vs-scratch experiment."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from . import rotations
from .archive import Archive
from .grasp import EvalOutcome, GraspGenome
from .mesh import AugmentationSpec, TriMesh, augment, sample_augmentation
from .qd import BudgetError, RunConfig, RunMetrics, eval_seed, run

MODES = ("raw", "scaled_position")


class SeedEntry(NamedTuple):
    genome: GraspGenome
    outcome: EvalOutcome


@dataclass(frozen=True)
class BootstrapArchive:
    """Successful grasps from a reference object, used to seed other runs.

    Parameters
    ----------
    source_object_id : str
    gripper_digest : str
    entries : sequence of SeedEntry
        Successful elites, each with the outcome (and evaluation seed) it
        was stored with.
    config_digest : str
    """

    source_object_id: str
    gripper_digest: str
    entries: tuple
    config_digest: str = ""

    def __post_init__(self):
        entries = tuple(SeedEntry(*e) for e in self.entries)
        if not entries:
            raise ValueError(f"bootstrap archive for {self.source_object_id!r} has no successful grasps")
        if not all(e.outcome.success for e in entries):
            raise ValueError("bootstrap archive entries must all be successful grasps")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_archive(cls, archive: Archive, source_object_id, config: RunConfig):
        entries = [SeedEntry(e.genome, e.outcome) for e in archive.elites(successful_only=True)]
        return cls(source_object_id, config.gripper.digest, tuple(entries), config.digest)

    def __len__(self):
        return len(self.entries)

    @property
    def genomes(self):
        return [e.genome for e in self.entries]

    @property
    def eval_seeds(self):
        return [e.outcome.rng_seed for e in self.entries]

    @property
    def qualities(self):
        return np.array([e.outcome.quality for e in self.entries])


@dataclass
class TransferReport:
    n_seeds: int
    n_transferred: int
    robust_count: int
    evaluations_used: int
    qualities: tuple = ()

    @property
    def transfer_rate(self):
        return self.n_transferred / self.n_seeds if self.n_seeds else 0.0


class TransferResult(NamedTuple):
    spec: AugmentationSpec
    mesh: TriMesh
    archive: Archive
    report: TransferReport
    metrics: RunMetrics


def transfer_genomes(seeds, spec: AugmentationSpec, mode="scaled_position", center=(0.0, 0.0, 0.0),
                     tcp_offset=0.04) -> List[GraspGenome]:
    """Map seed genomes onto an object deformed by ``spec``.

    ``raw`` copies the genomes. ``scaled_position`` scales each grasp's TCP
    by ``diag(alpha)`` about ``center`` (the center the mesh was scaled
    about) and moves the palm with it; the orientation is kept as is.
    """
    if mode not in MODES:
        raise ValueError(f"unknown transfer mode {mode!r}; expected one of {MODES}")
    genomes = list(seeds.genomes if isinstance(seeds, BootstrapArchive) else seeds)
    if mode == "raw" or spec.is_identity or not genomes:
        return genomes
    pos = np.array([g.position for g in genomes])
    quat = np.array([g.quaternion for g in genomes])
    reach = tcp_offset * rotations.to_matrix(quat)[:, :, 2]
    tcp = spec.apply(pos + reach, center)
    new_pos = tcp - reach
    return [GraspGenome(tuple(p), g.quaternion) for p, g in zip(new_pos.tolist(), genomes)]


def _transferred(target_mesh, seeds, spec, config, mode):
    if not isinstance(seeds, BootstrapArchive):
        raise TypeError("seeds must be a BootstrapArchive")
    if seeds.gripper_digest != config.gripper.digest:
        raise ValueError("bootstrap archive was built with a different gripper")
    # scale about the center the mesh itself was scaled about
    center = target_mesh.metadata.get("augmentation", {}).get("center", target_mesh.center)
    return transfer_genomes(seeds, spec, mode, center, config.gripper.tcp_offset)


def bootstrap_run(target_mesh, seeds: BootstrapArchive, spec: AugmentationSpec, config: RunConfig,
                  stop_after_bootstrap=True, mode="scaled_position", jobs=1, checkpoints=()) -> TransferResult:
    """Evaluate transferred seeds on ``target_mesh`` first, then optionally keep searching.

    Seeds are evaluated with the evaluation seeds of their source outcomes,
    so an identity transfer reproduces every source outcome.
    """
    genomes = _transferred(target_mesh, seeds, spec, config, mode)
    res = run(target_mesh, config, genomes, seed_eval_seeds=seeds.eval_seeds,
              stop_after_seeds=stop_after_bootstrap, jobs=jobs, checkpoints=checkpoints)
    ok = [o for o in res.seed_outcomes if o.success]
    report = TransferReport(
        n_seeds=len(genomes), n_transferred=len(ok),
        robust_count=res.metrics.robust_at(len(genomes)),
        evaluations_used=res.metrics.evaluations_used,
        qualities=tuple(o.quality for o in ok))
    return TransferResult(spec, target_mesh, res.archive, report, res.metrics)


def spec_seeds(rng_seed, n):
    """Distinct per-augmentation seeds derived from one run seed."""
    return [eval_seed(rng_seed, i) for i in range(n)]


def augment_and_generate(reference_mesh, seeds: BootstrapArchive, n_augmentations, alpha_min=0.5,
                         alpha_max=1.5, config: Optional[RunConfig] = None, rng_seed=0,
                         mode="scaled_position", jobs=1) -> List[TransferResult]:
    """Sample ``n_augmentations`` scalings and transfer the seeds onto each, stopping after bootstrap."""
    if n_augmentations < 1:
        raise ValueError("need at least one augmentation")
    config = config or RunConfig()
    out = []
    for s in spec_seeds(rng_seed, n_augmentations):
        spec = sample_augmentation(s, alpha_min, alpha_max, seeds.source_object_id)
        target = augment(reference_mesh, spec)
        out.append(bootstrap_run(target, seeds, spec, config, True, mode, jobs))
    return out


@dataclass
class ComparisonRecord:
    """Paired bootstrap and from-scratch runs on one augmented object."""

    object_id: str
    spec: AugmentationSpec
    n_seeds: int
    transfer_rate: float
    robust_bootstrap_end: int
    robust_scratch_same: int
    robust_bootstrap_full: int
    robust_scratch_full: int
    evaluations_full: int
    curves: dict = field(default_factory=dict)
    qualities: tuple = ()  # elite qualities of the bootstrap arm's final archive

    @property
    def bootstrap_better(self):
        """Bootstrap arm holds at least as many robust grasps at equal evaluations."""
        return self.robust_bootstrap_end >= self.robust_scratch_same

    @property
    def evals_per_robust(self):
        """(bootstrap, scratch) evaluations per robust grasp at the bootstrap-end count."""
        return (_per(self.n_seeds, self.robust_bootstrap_end), _per(self.n_seeds, self.robust_scratch_same))

    @property
    def ratio(self):
        """Bootstrap over scratch evaluations per robust grasp, at equal evaluations.

        Both arms empty counts as no difference (1.0).
        """
        return _ratio(self.robust_bootstrap_end, self.robust_scratch_same)

    @property
    def ratio_full(self):
        return _ratio(self.robust_bootstrap_full, self.robust_scratch_full)


def _per(evals, robust):
    return evals / robust if robust else float("inf")


def _ratio(robust_b, robust_s):
    # (n / robust_b) / (n / robust_s) at a shared evaluation count n
    if robust_b == 0 and robust_s == 0:
        return 1.0
    if robust_b == 0:
        return float("inf")
    return robust_s / robust_b


def compare_bootstrap_vs_scratch(reference_mesh, seeds: BootstrapArchive, specs: Sequence[AugmentationSpec],
                                 config: RunConfig, mode="scaled_position", jobs=1) -> List[ComparisonRecord]:
    """Run both arms to the full budget on each augmented object.

    The arms share ``config`` and so the evaluation seed of every evaluation
    index past the seed phase. The scratch arm records its metrics exactly
    at the seed count so the two are compared at equal evaluations.
    """
    if not specs:
        raise ValueError("need at least one augmentation spec")
    n = len(seeds)
    records = []
    for spec in specs:
        if config.eval_budget == 0:
            # nothing evaluated in either arm
            records.append(ComparisonRecord(seeds.source_object_id, spec, n, 0.0, 0, 0, 0, 0, 0,
                                            {"bootstrap": RunMetrics().history, "scratch": RunMetrics().history}))
            continue
        if config.eval_budget < n:
            raise BudgetError(f"evaluation budget {config.eval_budget} is smaller than the {n} seed genomes")
        target = augment(reference_mesh, spec)
        boot = bootstrap_run(target, seeds, spec, config, stop_after_bootstrap=False, mode=mode, jobs=jobs)
        scratch = run(target, config, jobs=jobs, checkpoints=[n])
        records.append(ComparisonRecord(
            object_id=seeds.source_object_id, spec=spec, n_seeds=n,
            transfer_rate=boot.report.transfer_rate,
            robust_bootstrap_end=boot.metrics.robust_at(n),
            robust_scratch_same=scratch.metrics.robust_at(n),
            robust_bootstrap_full=boot.metrics.robust_grasp_count,
            robust_scratch_full=scratch.metrics.robust_grasp_count,
            evaluations_full=boot.metrics.evaluations_used,
            curves={"bootstrap": boot.metrics.history, "scratch": scratch.metrics.history},
            qualities=tuple(map(float, boot.archive.qualities()))))
    return records


def summarize(records: Sequence[ComparisonRecord]):
    """Fraction of pairs where bootstrap wins, median ratio, pooled evals-per-grasp per arm."""
    if not records:
        return {"n_pairs": 0, "fraction_better": 0.0, "median_ratio": float("nan"),
                "evals_per_grasp_bootstrap": float("inf"), "evals_per_grasp_scratch": float("inf")}
    evals = sum(r.n_seeds for r in records)
    rb = sum(r.robust_bootstrap_end for r in records)
    rs = sum(r.robust_scratch_same for r in records)
    return {
        "n_pairs": len(records),
        "fraction_better": float(np.mean([r.bootstrap_better for r in records])),
        "median_ratio": float(np.median([r.ratio for r in records])),
        "median_ratio_full": float(np.median([r.ratio_full for r in records])),
        "evals_per_grasp_bootstrap": _per(evals, rb),
        "evals_per_grasp_scratch": _per(evals, rs),
    }


def format_ratios(evaluations, robust_bootstrap, robust_scratch):
    """Evaluations-per-grasp for both arms, e.g. ``"12.5 vs 20.0"``."""
    return f"{_per(evaluations, robust_bootstrap):.1f} vs {_per(evaluations, robust_scratch):.1f}"


def curves_csv(records: Sequence[ComparisonRecord]):
    """Per-generation curves of every record as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["object_id", "spec_seed", "generation", "evaluations", "robust_count", "coverage", "arm"])
    for r in records:
        for arm in ("bootstrap", "scratch"):
            h = r.curves.get(arm) or {}
            for g, e, rc, cov in zip(h.get("generation", []), h.get("evaluations", []),
                                     h.get("robust_count", []), h.get("coverage", [])):
                w.writerow([r.object_id, r.spec.rng_seed, g, e, rc, repr(float(cov)), arm])
    return buf.getvalue()
