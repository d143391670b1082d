"""sklearn-style wrapper: fit on client points, open at most k facilities."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_capacities, check_eps, check_k, check_optional_int, check_points
from .instance import Instance
from .pipeline import SolveConfig, solve
from .relaxation import DEFAULT_BUDGET


class CapacitatedKMedian(ClusterMixin, BaseEstimator):
    """Capacitated k-median with loads up to (1+eps) times capacity.

    Parameters
    ----------
    k : int
        Maximum number of open facilities.
    eps : float in (0, 1]
        Allowed capacity violation.
    ell, ell1, ell2 : optional overrides of the rounding parameters.
    max_iters : int
        Cutting-plane iterations before falling back.
    budget : int
        Enumeration budget for one configuration block.
    fallback : bool
        Treat blocks that cannot be enumerated as non-concentrated instead of failing.
    random_state : int
        Seed for the dependent rounding.

    ``fit`` takes the candidate facility locations and their capacities as
    keyword arguments.  Without ``facilities`` every sample is a candidate;
    without ``capacities`` each facility gets ceil(n / k).

    Attributes
    ----------
    labels_ : facility index (into ``facilities``) serving each sample.
    open_facilities_ : sorted indices of the open facilities.
    cluster_centers_ : coordinates of the open facilities.
    loads_ : number of samples per open facility, aligned with open_facilities_.
    cost_ : total distance of the assignment.
    lp_value_ : value of the final relaxation.
    report_ : full SolveReport.
    """

    def __init__(self, k=2, eps=1.0, ell=None, ell1=None, ell2=None, max_iters=20,
                 budget=DEFAULT_BUDGET, fallback=True, random_state=0):
        self.k = k
        self.eps = eps
        self.ell = ell
        self.ell1 = ell1
        self.ell2 = ell2
        self.max_iters = max_iters
        self.budget = budget
        self.fallback = fallback
        self.random_state = random_state

    def _config(self):
        check_eps(self.eps)
        seed = check_optional_int(self.random_state, "random_state", low=0)
        return SolveConfig(
            eps=float(self.eps), ell=check_optional_int(self.ell, "ell"),
            ell1=check_optional_int(self.ell1, "ell1"), ell2=self.ell2,
            seed=0 if seed is None else seed,
            max_iters=check_optional_int(self.max_iters, "max_iters"),
            budget=check_optional_int(self.budget, "budget"), fallback=bool(self.fallback))

    def fit(self, X, y=None, *, facilities=None, capacities=None):
        X = check_points(X)
        F = X if facilities is None else check_points(facilities, "facilities", X.shape[1])
        k = check_k(self.k, len(F))
        if capacities is None:
            capacities = math.ceil(len(X) / k)
        caps = check_capacities(capacities, len(F))
        cfg = self._config()
        nf = len(F)
        dist = cdist(np.vstack([F, X]), np.vstack([F, X]))
        inst = Instance(tuple(f"f{i}" for i in range(nf)), caps,
                        tuple(f"c{j}" for j in range(len(X))), k, dist, name="estimator")
        rep = solve(inst, cfg)

        fidx = {f: i for i, f in enumerate(inst.facility_ids)}
        self.labels_ = np.array([fidx[f] for _, f in rep.assignment], dtype=np.int64)
        self.open_facilities_ = np.array(sorted(fidx[f] for f in rep.open_facilities),
                                         dtype=np.int64)
        self.facilities_ = F
        self.capacities_ = caps
        self.cluster_centers_ = F[self.open_facilities_]
        self.loads_ = np.bincount(self.labels_, minlength=nf)[self.open_facilities_]
        self.cost_ = rep.cost
        self.lp_value_ = rep.lp_value
        self.report_ = rep
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).labels_

    def _nearest(self, X):
        check_is_fitted(self, "open_facilities_")
        X = check_points(X, n_features=self.n_features_in_)
        d = cdist(X, self.cluster_centers_)
        return d, np.argmin(d, axis=1)

    def predict(self, X):
        """Nearest open facility for each sample, ignoring capacities."""
        _, pos = self._nearest(X)
        return self.open_facilities_[pos]

    def transform(self, X):
        """Distances from each sample to each open facility."""
        return self._nearest(X)[0]

    def score(self, X, y=None):
        """Negative uncapacitated connection cost of X to the open facilities."""
        d, pos = self._nearest(X)
        return -float(d[np.arange(len(d)), pos].sum())
