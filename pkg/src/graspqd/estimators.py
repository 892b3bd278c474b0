"""scikit-learn style wrappers around the grasp search, augmentation and rescaling."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .grasp import DomainRandomizationSpec, GripperSpec, evaluate_poses
from .mesh import augment, sample_augmentation
from .qd import RunConfig, run
from .transfer import spec_seeds
from .dataset import rescale_to_reference


def _poses(X):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != 7:
        raise ValueError(f"expected poses as (n, 7) rows [x, y, z, qw, qx, qy, qz], got {X.shape[1]} columns")
    return X[:, :3], X[:, 3:]


class GraspQD(BaseEstimator):
    """Quality-diversity grasp search on one mesh.

    ``fit(mesh)`` fills a MAP-Elites archive. ``grasps_`` holds the
    successful elites as ``(n, 7)`` pose rows; ``qualities_`` and
    ``robust_`` go with them.

    Parameters
    ----------
    eval_budget, batch_size, bins_per_axis, random_state
        Forwarded to :class:`RunConfig`.
    gripper : GripperSpec, optional
    dr : DomainRandomizationSpec, optional
    """

    def __init__(self, eval_budget=10000, batch_size=64, bins_per_axis=25, random_state=0, gripper=None, dr=None):
        self.eval_budget = eval_budget
        self.batch_size = batch_size
        self.bins_per_axis = bins_per_axis
        self.random_state = random_state
        self.gripper = gripper
        self.dr = dr

    def _config(self):
        return RunConfig(eval_budget=self.eval_budget, batch_size=self.batch_size, bins_per_axis=self.bins_per_axis,
                         rng_seed=int(self.random_state), gripper=self.gripper or GripperSpec(),
                         dr=self.dr or DomainRandomizationSpec())

    def fit(self, mesh, y=None):
        config = self._config()
        result = run(mesh, config)
        elites = result.archive.elites(successful_only=True)
        self.mesh_ = mesh
        self.config_ = config
        self.archive_ = result.archive
        self.metrics_ = result.metrics
        self.grasps_ = np.array([e.genome.as_array() for e in elites]).reshape(-1, 7)
        self.qualities_ = np.array([e.outcome.quality for e in elites])
        self.robust_ = np.array([e.outcome.robust for e in elites], dtype=bool)
        return self

    def predict(self, X):
        """Nominal success (bool) of each pose row on the fitted mesh."""
        check_is_fitted(self, "archive_")
        pos, quat = _poses(X)
        quat = quat / np.linalg.norm(quat, axis=1, keepdims=True)
        return evaluate_poses(self.mesh_, self.config_.gripper, pos, quat).success

    def score_samples(self, X):
        """Nominal success as 0/1 floats, for use as a score."""
        return self.predict(X).astype(float)


class MeshAugmenter(BaseEstimator, TransformerMixin):
    """Mint scaled copies of a mesh with ``diag(alpha)``, alpha drawn per axis in ``[alpha_min, alpha_max]``."""

    def __init__(self, n_augmentations=10, alpha_min=0.5, alpha_max=1.5, random_state=0):
        self.n_augmentations = n_augmentations
        self.alpha_min = alpha_min
        self.alpha_max = alpha_max
        self.random_state = random_state

    def fit(self, mesh=None, y=None):
        if self.n_augmentations < 1:
            raise ValueError("n_augmentations must be at least 1")
        self.specs_ = [sample_augmentation(s, self.alpha_min, self.alpha_max)
                       for s in spec_seeds(int(self.random_state), self.n_augmentations)]
        return self

    def transform(self, mesh):
        check_is_fitted(self, "specs_")
        return [augment(mesh, spec) for spec in self.specs_]


class SizeRescaler(BaseEstimator, TransformerMixin):
    """Scale object sizes so they follow a reference size distribution.

    ``fit`` stores the reference sizes; ``transform`` maps a column of sizes
    to rescaled sizes and keeps the factors in ``factors_``.
    """

    def __init__(self, pairing="random", random_state=0):
        self.pairing = pairing
        self.random_state = random_state

    def fit(self, reference_sizes, y=None):
        ref = check_array(np.asarray(reference_sizes, dtype=float).reshape(-1, 1))
        self.reference_sizes_ = ref[:, 0]
        return self

    def transform(self, sizes):
        check_is_fitted(self, "reference_sizes_")
        sizes = check_array(np.asarray(sizes, dtype=float).reshape(-1, 1))[:, 0]
        self.factors_ = rescale_to_reference(sizes, self.reference_sizes_, int(self.random_state), self.pairing)
        return sizes * self.factors_
