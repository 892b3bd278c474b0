import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from graspqd import primitives
from graspqd.estimators import GraspQD, MeshAugmenter, SizeRescaler


@pytest.fixture(scope="module")
def fitted(meshes):
    return GraspQD(eval_budget=600, random_state=3).fit(meshes["box"])


def test_params_and_clone():
    est = GraspQD(eval_budget=500, bins_per_axis=10)
    assert est.get_params()["bins_per_axis"] == 10
    c = clone(est.set_params(random_state=4))
    assert c.get_params() == est.get_params() and not hasattr(c, "archive_")


def test_fit_attributes(fitted):
    n = fitted.archive_.success_count
    assert fitted.grasps_.shape == (n, 7) and fitted.qualities_.shape == (n,) and fitted.robust_.dtype == bool
    assert fitted.metrics_.evaluations_used == 600


def test_predict_reproduces_elites(fitted):
    assert fitted.predict(fitted.grasps_).all()
    assert np.array_equal(fitted.score_samples(fitted.grasps_), np.ones(len(fitted.grasps_)))
    far = np.array([[1.0, 0, 0, 1, 0, 0, 0]])
    assert not fitted.predict(far)[0]
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((2, 6)))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GraspQD().predict(np.zeros((1, 7)))
    with pytest.raises(NotFittedError):
        SizeRescaler().transform([0.5])


def test_augmenter():
    m = primitives.box((0.1, 0.1, 0.1))
    aug = MeshAugmenter(n_augmentations=4, alpha_min=0.9, alpha_max=1.1, random_state=2).fit(m)
    out = aug.transform(m)
    assert len(out) == len(aug.specs_) == 4
    for spec, t in zip(aug.specs_, out):
        assert np.allclose(t.extents, 0.1 * np.array(spec.alpha))
    same = clone(aug).fit(m).transform(m)
    assert [t.digest for t in same] == [t.digest for t in out]
    with pytest.raises(ValueError):
        MeshAugmenter(n_augmentations=0).fit(m)


def test_rescaler():
    sizes = np.array([0.8, 0.6, 0.7])
    r = SizeRescaler(pairing="identity").fit(sizes)
    assert np.allclose(r.transform(sizes), sizes) and np.all(r.factors_ == 1.0)
    ref = np.random.default_rng(0).uniform(0.05, 0.25, 300)
    out = SizeRescaler(random_state=1).fit(ref).transform(np.linspace(0.6, 1.0, 50))
    assert np.all(out <= 0.25)
