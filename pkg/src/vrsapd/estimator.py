"""scikit-learn estimator wrapping the Reg-DRO logistic regression solvers."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dro import DEFAULT_DX, Dataset, RegDroProblem
from .params import ThresholdWarning, params_from_theta
from .solvers import SolverSpec, run
from .streams import PathStreams
from .vr import RunningAverage

_SOLVERS = ("sapd", "vr_sapd", "apd")


class _LastIterate:
    def __init__(self, average):
        self.avg = (RunningAverage(), RunningAverage()) if average else None
        self.x = self.y = None

    def seed(self, x, y):
        if self.avg is not None:
            self.avg[0].update(x)
            self.avg[1].update(y)

    def __call__(self, k, x, y):
        if self.avg is not None:
            x, y = self.avg[0].update(x), self.avg[1].update(y)
        self.x, self.y = x, y


class DROLogisticRegression(ClassifierMixin, BaseEstimator):
    """Binary logistic regression that is robust to reweighting of the training set.

    Solves ``min_x max_{y in P_r} mu_x/2 |x|^2 + sum_i y_i log(1 + exp(-b_i a_i^T x)) - mu_y/2 |y|^2``
    with a constant-step stochastic primal-dual method on mini-batches.
    There is no intercept; append a constant feature if one is needed.

    Parameters
    ----------
    mu_x, mu_y : regularization of the weights and of the sample distribution.
    r : radius of the uncertainty set around uniform weights; ``None`` means ``2 sqrt(n)``.
    D_x : bound on ``|x|^2``.
    batch_size : mini-batch size of the gradient oracle.
    solver : ``"sapd"``, ``"vr_sapd"`` (Richardson-extrapolated pair of chains) or ``"apd"`` (full gradients).
    theta : momentum parameter; step sizes follow from it.
    n_iter : number of iterations.
    average : return the running average of the iterates instead of the last one.
    random_state : seed for the mini-batch sampling.

    Attributes
    ----------
    coef_ : fitted weight vector.
    sample_weight_ : adversarial distribution over training points at the solution.
    classes_ : the two class labels; ``classes_[1]`` is the positive class.
    """

    def __init__(self, mu_x=0.1, mu_y=10.0, r=None, D_x=DEFAULT_DX, batch_size=10, solver="sapd", theta=0.95,
                 n_iter=1000, average=False, random_state=None):
        self.mu_x = mu_x
        self.mu_y = mu_y
        self.r = r
        self.D_x = D_x
        self.batch_size = batch_size
        self.solver = solver
        self.theta = theta
        self.n_iter = n_iter
        self.average = average
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        if self.solver not in _SOLVERS:
            raise ValueError(f"solver must be one of {_SOLVERS}, got {self.solver!r}")
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"DROLogisticRegression is binary; got {len(self.classes_)} classes")
        self.n_features_in_ = X.shape[1]
        b = np.where(y == self.classes_[1], 1.0, -1.0)
        problem = RegDroProblem(Dataset(X, b), self.mu_x, self.mu_y, r=self.r, D_x=self.D_x,
                                batch_size=min(self.batch_size, X.shape[0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ThresholdWarning)
            params = params_from_theta(problem.profile, self.theta)
        kind = self.solver
        spec = SolverSpec(kind, params=params, mode="averaged" if self.average else "raw")
        seed = self.random_state
        if isinstance(seed, np.random.RandomState):
            seed = int(seed.randint(2**31 - 1))
        elif seed is None:
            seed = int(np.random.SeedSequence().entropy % 2**63)
        rng = None if kind == "apd" else PathStreams.from_seed(int(seed), (), 1)
        x0 = np.zeros((1, problem.dim_x))
        y0 = np.full((1, problem.dim_y), 1.0 / problem.dim_y)
        # vr_sapd averages internally when mode is "averaged"
        rec = _LastIterate(self.average and kind != "vr_sapd")
        rec.seed(x0, y0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ThresholdWarning)
            run(problem, spec, (x0, y0), self.n_iter, rng, rec)
        self.coef_ = np.asarray(rec.x)[0].copy()
        self.sample_weight_ = np.asarray(rec.y)[0].copy()
        self.n_iter_ = self.n_iter
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]
