"""scikit-learn style wrappers.

Boxes play the role of samples: ``X`` is a ``(K, 2, n)`` array of lower and
upper bounds. A domain passed to :class:`BoundaryExtractor` is a ``(2, n)``
array, so ``Pipeline([("extract", BoundaryExtractor(net)), ("verify",
CBFVerifier(net, "dubins_car"))]).fit(domain)`` runs the whole procedure.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import boxes_from_array, check_box, check_boxes, check_dynamics, check_network
from .falsifier import DEFAULT_BUDGET, falsify_box
from .verifier import Mode, VerificationConfig, extract_boundary, verify_all


class BoundaryExtractor(TransformerMixin, BaseEstimator):
    """Grid cells of a domain that may contain the zero level set of ``network``."""

    def __init__(self, network=None, grids_per_dim=20, probes=0):
        self.network = network
        self.grids_per_dim = grids_per_dim
        self.probes = probes

    def _extract(self, X):
        net = check_network(self.network)
        domain = check_box(X, net.input_dim)
        return extract_boundary(net, domain, self.grids_per_dim, probes=self.probes)

    def fit(self, X, y=None):
        self.boundary_ = self._extract(X)
        self.n_boxes_ = len(self.boundary_)
        self.n_features_in_ = self.boundary_.domain.dims
        return self

    def transform(self, X):
        check_is_fitted(self, "boundary_")
        boundary = self._extract(X)
        return check_boxes(list(boundary.boxes), boundary.domain.dims)

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X)
        return check_boxes(list(self.boundary_.boxes), self.n_features_in_)


class CBFVerifier(BaseEstimator):
    """Branch-and-bound verification of the boundary condition on each box.

    ``predict`` returns True for verified boxes, ``decision_function`` the
    margin (an upper bound on the condition; verified iff <= tolerance) and
    ``score`` the verified rate.
    """

    def __init__(self, network=None, dynamics="dubins_car", control_box=None, alpha=0.5,
                 mode="symbolic", max_splits=1000, vertex_traversal_cap=4, tolerance=0.0,
                 gradient_refine=1, gradient_cases=4, n_jobs=1):
        self.network = network
        self.dynamics = dynamics
        self.control_box = control_box
        self.alpha = alpha
        self.mode = mode
        self.max_splits = max_splits
        self.vertex_traversal_cap = vertex_traversal_cap
        self.tolerance = tolerance
        self.gradient_refine = gradient_refine
        self.gradient_cases = gradient_cases
        self.n_jobs = n_jobs

    def _config(self) -> VerificationConfig:
        return VerificationConfig(alpha=self.alpha, mode=Mode(self.mode),
                                  max_splits=self.max_splits,
                                  vertex_traversal_cap=self.vertex_traversal_cap,
                                  tolerance=self.tolerance, gradient_refine=self.gradient_refine,
                                  gradient_cases=self.gradient_cases)

    def _run(self, X):
        net = check_network(self.network)
        model = check_dynamics(self.dynamics)
        arr = check_boxes(X, model.state_dim)
        control = (check_box(self.control_box, model.control_dim)
                   if self.control_box is not None else model.control_domain)
        summary = verify_all(net, model, boxes_from_array(arr), self._config(),
                             control_box=control, jobs=self.n_jobs)
        return arr, summary

    def fit(self, X, y=None):
        arr, summary = self._run(X)
        self.summary_ = summary
        self.verdicts_ = summary.verdicts
        self.margins_ = np.array([v.margin for v in summary.verdicts])
        self.verified_rate_ = summary.verified_rate
        self.n_features_in_ = arr.shape[2]
        self._cache = {arr[i].tobytes(): v for i, v in enumerate(summary.verdicts)}
        return self

    def _verdicts(self, X):
        check_is_fitted(self, "verdicts_")
        arr = check_boxes(X, self.n_features_in_)
        missing = [i for i in range(len(arr)) if arr[i].tobytes() not in self._cache]
        if missing:
            _, summary = self._run(arr[missing])
            for i, v in zip(missing, summary.verdicts):
                self._cache[arr[i].tobytes()] = v
        return [self._cache[b.tobytes()] for b in arr]

    def predict(self, X) -> np.ndarray:
        return np.array([v.verified for v in self._verdicts(X)], dtype=bool)

    def decision_function(self, X) -> np.ndarray:
        return np.array([v.margin for v in self._verdicts(X)])

    def score(self, X, y=None) -> float:
        pred = self.predict(X)
        return 1.0 if pred.size == 0 else float(pred.mean())


class Falsifier(BaseEstimator):
    """Sampling search for violating states; ``predict`` is True where none was found."""

    def __init__(self, network=None, dynamics="dubins_car", control_box=None, alpha=0.5,
                 budget=DEFAULT_BUDGET, seed=None, refine=True):
        self.network = network
        self.dynamics = dynamics
        self.control_box = control_box
        self.alpha = alpha
        self.budget = budget
        self.seed = seed
        self.refine = refine

    def _search(self, arr):
        net = check_network(self.network)
        model = check_dynamics(self.dynamics)
        control = (check_box(self.control_box, model.control_dim)
                   if self.control_box is not None else model.control_domain)
        return [falsify_box(net, model, b, control, self.alpha, self.budget, box_index=i,
                            seed=self.seed, refine=self.refine)
                for i, b in enumerate(boxes_from_array(arr))]

    def fit(self, X, y=None):
        model = check_dynamics(self.dynamics)
        arr = check_boxes(X, model.state_dim)
        self.counterexamples_ = self._search(arr)
        self.n_features_in_ = arr.shape[2]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "counterexamples_")
        found = self._search(check_boxes(X, self.n_features_in_))
        return np.array([c is None for c in found], dtype=bool)

    def score(self, X, y=None) -> float:
        pred = self.predict(X)
        return 1.0 if pred.size == 0 else float(pred.mean())
