"""Binary logistic regression with cluster-robust (CR1) inference.

Newton-Raphson maximum likelihood with step halving, McFadden pseudo R²,
accuracy and marginal effects at the mean with delta-method standard errors.
"""

from __future__ import annotations

import json

import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted


class FitError(ArithmeticError):
    """Numeric failure while fitting (non-convergence, separation, singularity)."""


class SeparationError(FitError):
    def __init__(self, message, direction=None):
        self.direction = direction
        super().__init__(message)


class CollinearityError(FitError):
    pass


def significance_stars(p):
    if not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def log_likelihood(beta, X, y):
    """Bernoulli log-likelihood of a logit model; ``X`` includes any intercept column."""
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def log_likelihood_gradient(beta, X, y):
    return X.T @ (y - expit(X @ beta))


def _as_design(X, names=None):
    if isinstance(X, pd.DataFrame):
        names = [str(c) for c in X.columns] if names is None else names
        X = X.to_numpy(dtype=float)
    X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True,
                    ensure_min_features=0)
    if names is None:
        names = [f"x{i}" for i in range(X.shape[1])]
    return X, list(names)


def _check_rank(Xd, names):
    rank = np.linalg.matrix_rank(Xd)
    if rank == Xd.shape[1]:
        return
    # find the first column that adds nothing to the span of those before it
    for j in range(1, Xd.shape[1] + 1):
        if np.linalg.matrix_rank(Xd[:, :j]) < j:
            raise CollinearityError(
                f"design matrix is rank deficient: column '{names[j - 1]}' is a linear "
                f"combination of earlier columns"
            )
    raise CollinearityError("design matrix is rank deficient")


class ClusteredLogisticRegression(ClassifierMixin, BaseEstimator):
    """Unpenalized logistic regression fitted by Newton-Raphson.

    Parameters
    ----------
    fit_intercept : bool
        Prepend a constant column.
    max_iter : int
        Newton iteration cap.
    tol : float
        Stop once the max-norm of the log-likelihood gradient is <= tol.

    After ``fit(X, y, clusters=...)`` the estimator carries ``params_``
    (intercept first), ``cov_`` (CR1 cluster-robust; rows are their own
    clusters when ``clusters`` is None), ``cov_classical_``, ``loglik_``,
    ``llnull_``, ``pseudo_r2_`` and ``converged_``.
    """

    def __init__(self, fit_intercept=True, max_iter=100, tol=1e-8):
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.tol = tol

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        if self.fit_intercept:
            return np.column_stack([np.ones(len(X)), X])
        return X

    def fit(self, X, y, clusters=None):
        X, names = _as_design(X)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("labels must be 0/1")
        if y.min() == y.max():
            raise ValueError("labels contain a single class")
        Xd = self._design(X)
        n, k = Xd.shape
        if n <= k:
            raise ValueError(f"need more rows than parameters (n={n}, k={k})")
        self.feature_names_in_ = np.array(names, dtype=object)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        _check_rank(Xd, self.param_names_)

        beta, n_iter, converged = self._newton(Xd, y)
        self.params_ = beta
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.n_obs_ = n
        self.loglik_ = log_likelihood(beta, Xd, y)
        ybar = y.mean()
        self.llnull_ = float(n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar)))
        self.pseudo_r2_ = 1.0 - self.loglik_ / self.llnull_ if self.fit_intercept else np.nan
        self.cov_classical_ = linalg.inv(self._hessian(Xd, beta))
        if clusters is None:
            clusters = np.arange(n)
        self.cov_ = cluster_robust_covariance(self, X, y, clusters)
        self.cluster_count_ = int(len(pd.unique(np.asarray(clusters))))
        return self

    @property
    def param_names_(self):
        names = list(self.feature_names_in_)
        return (["const"] + names) if self.fit_intercept else names

    @staticmethod
    def _hessian(Xd, beta):
        p = expit(Xd @ beta)
        w = p * (1 - p)
        return Xd.T @ (w[:, None] * Xd)

    def _newton(self, Xd, y):
        n, k = Xd.shape
        beta = np.zeros(k)
        ll = log_likelihood(beta, Xd, y)
        for it in range(1, self.max_iter + 1):
            p = expit(Xd @ beta)
            grad = Xd.T @ (y - p)
            if np.max(np.abs(grad)) <= self.tol:
                return beta, it - 1, True
            w = p * (1 - p)
            H = Xd.T @ (w[:, None] * Xd)
            try:
                step = linalg.solve(H, grad, assume_a="pos")
            except (linalg.LinAlgError, ValueError):
                self._raise_separation(beta, Xd, y, "singular information matrix")
            t = 1.0
            for _ in range(40):
                cand = beta + t * step
                ll_new = log_likelihood(cand, Xd, y)
                if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                    break
                t *= 0.5
            beta, ll = cand, ll_new
            if ll > -1e-7 * n or np.max(np.abs(Xd @ beta)) > 50:
                self._raise_separation(beta, Xd, y, "perfect separation")
        p = expit(Xd @ beta)
        grad = Xd.T @ (y - p)
        if np.max(np.abs(grad)) <= self.tol:
            return beta, self.max_iter, True
        self._raise_separation(
            beta, Xd, y, f"no convergence after {self.max_iter} iterations "
            f"(gradient max-norm {np.max(np.abs(grad)):.3g}); possible separation")

    def _raise_separation(self, beta, Xd, y, reason):
        names = self.param_names_
        norm = np.linalg.norm(beta)
        direction = beta / norm if norm > 0 else beta
        desc = ", ".join(f"{nm}={d:+.3f}" for nm, d in zip(names, direction))
        raise SeparationError(f"{reason}; offending direction: [{desc}]", direction)

    @property
    def intercept_(self):
        check_is_fitted(self, "params_")
        return self.params_[0] if self.fit_intercept else 0.0

    @property
    def coef_(self):
        check_is_fitted(self, "params_")
        return self.params_[1:] if self.fit_intercept else self.params_

    @property
    def bse_(self):
        return np.sqrt(np.diag(self.cov_))

    @property
    def pvalues_(self):
        z = self.params_ / self.bse_
        return 2 * stats.norm.sf(np.abs(z))

    def _check_X(self, X):
        check_is_fitted(self, "params_")
        if isinstance(X, pd.DataFrame):
            missing = [c for c in self.feature_names_in_ if c not in X.columns]
            if missing:
                raise ValueError(f"missing feature columns: {missing}")
            X = X[list(self.feature_names_in_)].to_numpy(float)
        X = check_array(X, dtype=float, ensure_2d=False, ensure_min_features=0)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"dimension mismatch: X has {X.shape[1]} features, "
                f"model expects {self.n_features_in_}")
        return X

    def decision_function(self, X):
        X = self._check_X(X)
        return self._design(X) @ self.params_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def summary_frame(self):
        check_is_fitted(self, "params_")
        se = self.bse_
        z = self.params_ / se
        p = 2 * stats.norm.sf(np.abs(z))
        return pd.DataFrame({
            "term": self.param_names_, "coef": self.params_, "se": se, "z": z, "p": p,
            "stars": [significance_stars(v) for v in p],
        })

    def to_dict(self):
        check_is_fitted(self, "params_")
        return {
            "features": list(self.feature_names_in_),
            "fit_intercept": self.fit_intercept,
            "beta": [float(b) for b in self.params_],
            "cov": [[float(v) for v in row] for row in self.cov_],
            "pseudo_r2": float(self.pseudo_r2_),
            "loglik": self.loglik_,
            "llnull": self.llnull_,
            "n_obs": int(self.n_obs_),
            "cluster_count": int(self.cluster_count_),
            "converged": bool(self.converged_),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d):
        m = cls(fit_intercept=d.get("fit_intercept", True))
        m.feature_names_in_ = np.array(d["features"], dtype=object)
        m.n_features_in_ = len(d["features"])
        m.classes_ = np.array([0, 1])
        m.params_ = np.asarray(d["beta"], dtype=float)
        m.cov_ = np.asarray(d["cov"], dtype=float)
        m.pseudo_r2_ = d.get("pseudo_r2", np.nan)
        m.loglik_ = d.get("loglik", np.nan)
        m.llnull_ = d.get("llnull", np.nan)
        m.n_obs_ = d.get("n_obs", 0)
        m.cluster_count_ = d.get("cluster_count", 0)
        m.converged_ = d.get("converged", True)
        m.n_iter_ = None
        return m

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_logistic(X, y, clusters=None, max_iter=100, tol=1e-8, fit_intercept=True):
    return ClusteredLogisticRegression(
        fit_intercept=fit_intercept, max_iter=max_iter, tol=tol).fit(X, y, clusters)


def predict_proba(model, X):
    """P(y = 1) for one row (scalar) or many rows (array)."""
    single = np.ndim(X) == 1 and not isinstance(X, pd.DataFrame)
    p = model.predict_proba(X)[:, 1]
    return float(p[0]) if single else p


def cluster_robust_covariance(model, X, y, clusters):
    """CR1 sandwich ``B (c * sum_g s_g s_g') B`` with ``B`` the inverse information.

    ``c = G/(G-1) * (n-1)/(n-k)`` where ``k`` counts all parameters.
    """
    X = model._check_X(X)
    y = np.asarray(y, dtype=float).ravel()
    Xd = model._design(X)
    n, k = Xd.shape
    codes, uniques = pd.factorize(np.asarray(clusters), sort=False)
    if len(codes) != n:
        raise ValueError("cluster ids must have one entry per row")
    G = len(uniques)
    if G < 2:
        raise ValueError("cluster-robust covariance needs at least two clusters")
    resid = y - expit(Xd @ model.params_)
    scores = Xd * resid[:, None]
    S = np.zeros((G, k))
    np.add.at(S, codes, scores)
    meat = S.T @ S
    bread = linalg.inv(ClusteredLogisticRegression._hessian(Xd, model.params_))
    c = G / (G - 1) * (n - 1) / (n - k)
    cov = bread @ (c * meat) @ bread
    return 0.5 * (cov + cov.T)


def mcfadden_pseudo_r2(model, X, y):
    X = model._check_X(X)
    y = np.asarray(y, dtype=float).ravel()
    if not model.fit_intercept:
        raise ValueError("pseudo R² needs a model with an intercept")
    ll = log_likelihood(model.params_, model._design(X), y)
    ybar = y.mean()
    if ybar in (0.0, 1.0):
        return 0.0
    ll0 = len(y) * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar))
    return 1.0 - ll / ll0


def accuracy(model, X, y):
    y = np.asarray(y).ravel()
    if len(y) == 0:
        raise ValueError("empty holdout")
    return float(np.mean(model.predict(X) == y))


def marginal_effects_at_mean(model, X, terms=None, interactions=None, moderators=None):
    """Marginal effects of the win probability at the feature means.

    Parameters
    ----------
    model : fitted ClusteredLogisticRegression
    X : DataFrame
        Estimation sample (used for the means).
    terms : list of str, optional
        Columns to report; defaults to all model features.
    interactions : dict, optional
        ``{product_column: (factor_a, factor_b)}``. For a main term the
        derivative picks up ``beta_k * mean(other factor)`` from every product
        it enters; a product column itself is treated as a regressor.
    moderators : dict, optional
        Values of factors that are not model columns (e.g. absolute team
        familiarity), keyed by name; only their means are used.

    Returns a DataFrame with ``term, mem, se, z, p, stars``; standard errors
    come from the delta method on ``model.cov_``.
    """
    check_is_fitted(model, "params_")
    names = list(model.feature_names_in_)
    Xa = model._check_X(X)
    interactions = interactions or {}
    moderators = moderators or {}
    terms = names if terms is None else list(terms)
    for t in terms:
        if t not in names:
            raise KeyError(f"term {t!r} not in model")
    means = dict(zip(names, Xa.mean(axis=0)))
    for k, v in moderators.items():
        means.setdefault(k, float(np.mean(v)))
    xbar = model._design(Xa.mean(axis=0).reshape(1, -1))[0]
    beta = model.params_
    offset = 1 if model.fit_intercept else 0
    eta = float(xbar @ beta)
    p = expit(eta)
    d1 = p * (1 - p)
    d2 = d1 * (1 - 2 * p)
    rows = []
    for t in terms:
        dg = np.zeros_like(beta)
        dg[offset + names.index(t)] = 1.0
        if t not in interactions:
            for prod, (a, b) in interactions.items():
                if prod not in names or t not in (a, b):
                    continue
                other = b if t == a else a
                if other not in means:
                    raise KeyError(f"no values for interaction factor {other!r}")
                dg[offset + names.index(prod)] += means[other]
        g = float(dg @ beta)
        mem = d1 * g
        grad = d2 * xbar * g + d1 * dg
        se = float(np.sqrt(grad @ model.cov_ @ grad))
        z = mem / se if se > 0 else np.nan
        pv = float(2 * stats.norm.sf(abs(z))) if se > 0 else np.nan
        rows.append((t, mem, se, z, pv, significance_stars(pv)))
    return pd.DataFrame(rows, columns=["term", "mem", "se", "z", "p", "stars"])
