import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspqd.archive import INSERTED, REJECTED, REPLACED, Archive
from graspqd.grasp import EvalOutcome, FailureReason, GraspGenome

GENOME = GraspGenome((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0))


def outcome(q, success=None, robust=False):
    success = q > 0 if success is None else success
    reason = FailureReason.NONE if success else FailureReason.MISSED_CONTACT
    return EvalOutcome(success, reason, quality=q, robust=robust and success)


@pytest.fixture
def grid():
    return Archive((-0.1, -0.1, -0.1), (0.2, 0.2, 0.2), 20)


def test_bin_examples(grid):
    assert grid.bin_of((0.0, 0.0, 0.0)) == (10, 10, 10)
    assert grid.bin_of((-0.1, -0.1, -0.1)) == (0, 0, 0)
    assert grid.bin_of((1.1, 0.0, 0.0)) == (19, 10, 10)
    assert grid.bin_of((-5.0, 0.1, 0.0)) == (0, 19, 10)


def test_insert_examples(grid):
    d = (0.01, 0.02, 0.03)
    assert grid.try_insert(GENOME, outcome(0.7), d) == INSERTED
    assert grid.try_insert(GENOME, outcome(0.7), d) == REJECTED
    grid2 = Archive((-0.1, -0.1, -0.1), (0.2, 0.2, 0.2), 20)
    grid2.try_insert(GENOME, outcome(0.2), d)
    assert grid2.try_insert(GENOME, outcome(0.9), d) == REPLACED
    assert grid2.cells[grid2.bin_of(d)].outcome.quality == 0.9


def test_failure_never_displaces_success(grid):
    d = (0.0, 0.0, 0.0)
    grid.try_insert(GENOME, outcome(0.0, success=True), d)
    assert grid.try_insert(GENOME, outcome(0.0), d) == REJECTED
    assert grid.success_count == 1
    other = (0.05, 0.05, 0.05)
    assert grid.try_insert(GENOME, outcome(0.0), other) == INSERTED
    assert grid.try_insert(GENOME, outcome(0.1), other) == REPLACED
    assert grid.success_count == 2


def test_out_of_grid_rejected(grid):
    assert grid.try_insert(GENOME, outcome(1.0), (0.5, 0.0, 0.0)) == REJECTED
    assert len(grid) == 0


def test_bad_grid():
    with pytest.raises(ValueError):
        Archive((0, 0, 0), (1.0, 0.0, 1.0))


def check_stream(archive, stream):
    """Insert a stream and count invariant violations after every insertion."""
    offered = {}
    violations = 0
    coverage = 0.0
    for d, o in stream:
        key = archive.bin_of(d)
        before = archive.cells.get(key)
        archive.try_insert(GENOME, o, d)
        if archive.contains(d):
            offered[key] = max(offered.get(key, 0.0), o.quality)
        after = archive.cells.get(key)
        if before is not None and after.outcome.quality < before.outcome.quality:
            violations += 1
        if before is not None and before.outcome.success and not after.outcome.success:
            violations += 1
        if archive.coverage < coverage:
            violations += 1
        coverage = archive.coverage
    for key, e in archive.cells.items():
        lo, hi = archive.cell_bounds(key)
        violations += not np.all((lo - 1e-12 <= e.descriptor) & (np.array(e.descriptor) <= hi + 1e-12))
        violations += e.outcome.quality != offered[key]
    violations += archive.success_count != sum(e.outcome.success for e in archive.cells.values())
    violations += archive.robust_count != sum(e.outcome.robust for e in archive.cells.values())
    violations += len(archive.cells) != len(set(archive.cells))
    return violations


def random_stream(rng, n, bins=10):
    lo, hi = -0.12, 0.12  # a little past the grid on both sides
    d = rng.uniform(lo, hi, (n, 3))
    q = rng.integers(0, 11, n) / 10
    nominal = rng.random(n) < 0.7
    q = np.where(nominal, q, 0.0)
    robust = rng.random(n) < 0.5
    return [(tuple(x), outcome(float(qq), bool(s), bool(r))) for x, qq, s, r in zip(d.tolist(), q, nominal, robust)]


@given(seed=st.integers(0, 2**32 - 1), bins=st.integers(1, 12))
@settings(max_examples=40)
def test_archive_invariants_random_streams(seed, bins):
    rng = np.random.default_rng(seed)
    a = Archive((-0.1, -0.1, -0.1), (0.2, 0.2, 0.2), bins)
    assert check_stream(a, random_stream(rng, 500)) == 0


def test_digest_depends_on_content(grid):
    a = Archive((-0.1, -0.1, -0.1), (0.2, 0.2, 0.2), 20)
    assert a.digest() == grid.digest()
    a.try_insert(GENOME, outcome(0.5), (0.0, 0.0, 0.0))
    assert a.digest() != grid.digest()
