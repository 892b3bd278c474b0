"""Acceptance criteria, each at its stated tolerance. One PASS/FAIL line per criterion."""
import os
import time

import numpy as np
import pytest
from scipy.stats import ks_2samp

from conftest import fixture_meshes
from graspqd import primitives
from graspqd.archive import Archive
from graspqd.cli import main
from graspqd.dataset import DatasetError, decode, encode, read_dataset, rescale_to_reference, write_dataset
from graspqd.grasp import FailureReason, GripperSpec, evaluate_poses
from graspqd.mesh import AugmentationSpec, sample_augmentation, save_mesh
from graspqd.qd import RunConfig, run
from graspqd.transfer import BootstrapArchive, bootstrap_run, compare_bootstrap_vs_scratch, spec_seeds, summarize
from oracles import Polytope, oracle_success
from test_archive import check_stream, random_stream
from test_dataset import bits, random_record
from test_grasp import random_poses

IDENTITY = AugmentationSpec((1.0, 1.0, 1.0))


def test_identity_transfer_lossless(verdict):
    t0 = time.perf_counter()
    lines, ok = [], True
    for name, m in fixture_meshes().items():
        # a finer grid than the default so every fixture holds 100+ successful elites
        cfg = RunConfig(eval_budget=10000, rng_seed=7, bins_per_axis=40)
        core = run(m, cfg)
        seeds = BootstrapArchive.from_archive(core.archive, name, cfg)
        res = bootstrap_run(m, seeds, IDENTITY, cfg)
        ok &= len(seeds) >= 100 and res.report.transfer_rate == 1.0
        lines.append(f"{name} {res.report.n_transferred}/{len(seeds)}")
    elapsed = time.perf_counter() - t0
    verdict(1, ok and elapsed < 60, f"{', '.join(lines)}; {elapsed:.1f} s")


def test_oracle_agreement(verdict):
    t0 = time.perf_counter()
    shapes = {"sphere": primitives.icosphere(0.03, 2), "box": primitives.box((0.05, 0.04, 0.06)),
              "wedge": primitives.wedge(0.35, 0.06, 0.05)}
    gripper = GripperSpec()
    reasons = list(FailureReason)
    parts, ok = [], True
    for name, m in shapes.items():
        poly = Polytope(m.vertices, m.triangles)
        pos, q = random_poses(m, 1000, 100)
        expected = [oracle_success(poly, gripper, pos[i], q[i]) for i in range(len(pos))]
        for backend in ("compiled", "numpy"):
            res = evaluate_poses(m, gripper, pos, q, backend=backend)
            got = [(bool(s), reasons[r].value) for s, r in zip(res.success, res.reason)]
            agree = sum(a == b for a, b in zip(got, expected))
            ok &= agree == len(pos)
            parts.append(f"{name}/{backend} {agree}/{len(pos)}")
        parts[-1] += f" ({sum(e[0] for e in expected)} successes)"
    elapsed = time.perf_counter() - t0
    verdict(2, ok and elapsed < 120, f"{', '.join(parts)}; {elapsed:.1f} s")


def test_archive_invariants(verdict):
    rng = np.random.default_rng(2024)
    violations, total = 0, 0
    for k in range(10):
        a = Archive((-0.1, -0.1, -0.1), (0.2, 0.2, 0.2), int(rng.integers(1, 30)))
        stream = random_stream(rng, 10_000)
        violations += check_stream(a, stream)
        total += len(stream)
    verdict(3, violations == 0 and total == 100_000, f"{total} insertions, {violations} violations")


def test_cli_determinism(verdict, tmp_path):
    save_mesh(primitives.cylinder(0.025, 0.08), str(tmp_path / "cyl.obj"))
    mesh = str(tmp_path / "cyl.obj")

    def generate(out, jobs):
        assert main(["generate", "--mesh", mesh, "--out", str(tmp_path / out), "--seed", "11",
                     "--budget", "3000", "--jobs", str(jobs)]) == 0
        return snapshot(tmp_path / out)

    def augment_(out, jobs):
        assert main(["augment", "--mesh", mesh, "--dataset", str(tmp_path / "g1a" / "cyl.qdg.jsonl"),
                     "--out", str(tmp_path / out), "--seed", "12", "--n-aug", "4", "--budget", "3000",
                     "--mode", "continue", "--jobs", str(jobs)]) == 0
        return snapshot(tmp_path / out)

    def snapshot(d):
        return {n: (d / n).read_bytes() for n in sorted(os.listdir(d))}

    g = [generate("g1a", 1), generate("g1b", 1), generate("g8", 8)]
    a = [augment_("a1a", 1), augment_("a1b", 1), augment_("a8", 8)]
    ok = g[0] == g[1] == g[2] and a[0] == a[1] == a[2] and len(a[0]) == 5
    verdict(4, ok, f"generate {len(g[0])} files, augment {len(a[0])} files, byte-identical across runs and jobs 1/8")


@pytest.fixture(scope="module")
def bootstrap_experiment():
    """Five fixtures, twenty mild augmentations each, budget 10k, paired arms."""
    t0 = time.perf_counter()
    cfg = RunConfig(eval_budget=10000, rng_seed=7)
    records, ks = [], []
    for name, m in fixture_meshes().items():
        core = run(m, cfg)
        seeds = BootstrapArchive.from_archive(core.archive, name, cfg)
        specs = [sample_augmentation(s, 0.8, 1.2, name) for s in spec_seeds(11, 20)]
        recs = compare_bootstrap_vs_scratch(m, seeds, specs, cfg)
        records += recs
        core_q = core.archive.qualities()
        ks += [ks_2samp(core_q, r.qualities).statistic for r in recs]
    return records, np.array(ks), time.perf_counter() - t0


@pytest.mark.slow
def test_bootstrap_efficiency(verdict, bootstrap_experiment):
    records, _, elapsed = bootstrap_experiment
    s = summarize(records)
    ok = s["fraction_better"] >= 0.6 and s["median_ratio"] <= 0.95 and elapsed < 1800 and len(records) == 100
    verdict(5, ok, f"fraction_better {s['fraction_better']:.2f} (>= 0.60), median ratio {s['median_ratio']:.3f} "
                   f"(<= 0.95), evals per robust grasp {s['evals_per_grasp_bootstrap']:.1f} vs "
                   f"{s['evals_per_grasp_scratch']:.1f}; {elapsed:.0f} s")


@pytest.mark.slow
def test_transfer_rate(verdict, bootstrap_experiment):
    records, _, _ = bootstrap_experiment
    frac = float(np.mean([r.transfer_rate >= 0.5 for r in records]))
    verdict(6, frac >= 0.7, f"{frac:.2f} of {len(records)} pairs transfer >= 50% (>= 0.70); "
                            f"median rate {np.median([r.transfer_rate for r in records]):.3f}")


@pytest.mark.slow
def test_quality_distribution_similarity(verdict, bootstrap_experiment):
    _, ks, _ = bootstrap_experiment
    med = float(np.median(ks))
    verdict(7, med <= 0.15, f"median KS {med:.3f} over {len(ks)} pairs (<= 0.15); max {ks.max():.3f}")


def test_rescale_distribution(verdict):
    rng = np.random.default_rng(8)
    sizes = rng.uniform(0.6, 1.0, 1000)
    ref = 0.25 - rng.uniform(0.0, 0.25, 500)  # (0, 0.25]
    out = sizes * rescale_to_reference(sizes, ref, rng_seed=8)
    p = ks_2samp(out, ref).pvalue
    verdict(8, p > 0.01 and out.max() <= 0.25, f"KS p = {p:.3f} (> 0.01), max size {out.max():.4f} m")


def test_dataset_round_trip(verdict, tmp_path):
    rng = np.random.default_rng(9)
    recs = [random_record(rng, k) for k in range(10_000)]
    path = tmp_path / "big.qdg.jsonl"
    write_dataset(recs, path)
    back = read_dataset(path)
    identical = back == recs and bits(back) == bits(recs)
    lines = path.read_text().splitlines()
    named = 0
    for bad in (2, 777, len(lines)):
        broken = list(lines)
        broken[bad - 1] = broken[bad - 1].replace('"grasps"', '"grasp"', 1)
        try:
            decode("\n".join(broken))
        except DatasetError as exc:
            named += exc.line == bad and f"line {bad}" in str(exc)
    verdict(9, identical and named == 3, f"{len(recs)} records bit-identical: {identical}; "
                                         f"corrupted lines named {named}/3")
