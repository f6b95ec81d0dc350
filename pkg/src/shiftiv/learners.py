"""Base regression learners and the simplex-constrained stacked ensemble.

All learners take a 2-d input matrix ``u`` (rows are observations). For the
outcome and treatment regressions the first column of ``u`` is the instrument,
which is what the interaction terms of `OLS` refer to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Mean:
    name = "mean"

    def fit(self, u, t):
        self.value_ = float(np.mean(t))
        return self

    def predict(self, u):
        return np.full(np.shape(u)[0], self.value_)


class OLS:
    """Least squares on [1, u] plus products of u[:, 0] with the other columns."""

    name = "ols"

    def __init__(self, interact_first=True):
        self.interact_first = interact_first

    def _design(self, u):
        u = np.asarray(u, dtype=float)
        cols = [np.ones(u.shape[0]), *u.T]
        if self.interact_first and u.shape[1] > 1:
            cols.extend(u[:, 0] * u[:, j] for j in range(1, u.shape[1]))
        return np.column_stack(cols)

    def fit(self, u, t):
        self.coef_, *_ = np.linalg.lstsq(self._design(u), t, rcond=None)
        return self

    def predict(self, u):
        return self._design(u) @ self.coef_


def rule_of_thumb_bandwidth(u):
    """h_j = 1.06 sd_j m^(-1/5); constant columns get h_j = 1."""
    u = np.asarray(u, dtype=float)
    m = u.shape[0]
    sd = np.std(u, axis=0, ddof=1) if m > 1 else np.zeros(u.shape[1])
    h = 1.06 * sd * m ** (-0.2)
    return np.where(h > 0, h, 1.0)


class Kernel:
    """Nadaraya-Watson regression with a Gaussian product kernel.

    Weights are normalised in log space, so a query far outside the data
    still gets a finite prediction dominated by the nearest training points.
    """

    name = "kernel"

    def __init__(self, bandwidth=None, chunk=256):
        self.bandwidth = bandwidth
        self.chunk = chunk

    def fit(self, u, t):
        u = np.asarray(u, dtype=float)
        h = rule_of_thumb_bandwidth(u) if self.bandwidth is None else np.broadcast_to(
            np.asarray(self.bandwidth, dtype=float), (u.shape[1],))
        self.h_ = np.asarray(h, dtype=float)
        self.u_ = u / self.h_
        self.t_ = np.asarray(t, dtype=float)
        self.sq_ = np.sum(self.u_ ** 2, axis=1)
        return self

    def predict(self, u):
        q = np.asarray(u, dtype=float) / self.h_
        out = np.empty(q.shape[0])
        for s in range(0, q.shape[0], self.chunk):
            qc = q[s:s + self.chunk]
            d2 = np.sum(qc ** 2, axis=1)[:, None] + self.sq_[None, :] - 2.0 * qc @ self.u_.T
            logw = -0.5 * np.maximum(d2, 0.0)
            logw -= logw.max(axis=1, keepdims=True)
            w = np.exp(logw)
            out[s:s + self.chunk] = (w @ self.t_) / w.sum(axis=1)
        return out


LEARNERS = {"mean": Mean, "ols": OLS, "kernel": Kernel}


def make_learner(name, bandwidth=None, interact_first=True):
    if name == "mean":
        return Mean()
    if name == "ols":
        return OLS(interact_first=interact_first)
    if name == "kernel":
        return Kernel(bandwidth=bandwidth)
    raise ValueError(f"unknown learner {name!r}; choose from {sorted(LEARNERS)}")


def project_simplex(v):
    """Euclidean projection onto {w >= 0, sum w = 1}."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def simplex_least_squares(P, t, n_iter=500):
    """Minimise ||P w - t||^2 over the simplex.

    Accelerated projected gradient (FISTA) with step 1/L. Stacked columns
    are nearly collinear, and the plain iteration stalls a few 1e-4 away
    from a vertex solution where the momentum version lands on it.
    """
    P = np.asarray(P, dtype=float)
    L = 2.0 * np.linalg.eigvalsh(P.T @ P)[-1]
    w = np.full(P.shape[1], 1.0 / P.shape[1])
    if L <= 0:
        return w
    v, step = w.copy(), 1.0
    for _ in range(n_iter):
        w_next = project_simplex(v - 2.0 * P.T @ (P @ v - t) / L)
        step_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * step * step))
        v = w_next + (step - 1.0) / step_next * (w_next - w)
        w, step = w_next, step_next
    return w


@dataclass
class StackedEnsemble:
    """Convex combination of base learners, weights fit on a held-out split.

    Base learners are fit on the first part of a seeded split, weights are
    chosen on the held-out part, then every learner with non-zero weight is
    refit on all rows.
    """

    names: tuple = ("mean", "ols", "kernel")
    holdout_fraction: float = 0.2
    n_iter: int = 500
    seed: int = 0
    bandwidth: object = None
    interact_first: bool = True

    def _new(self, name):
        return make_learner(name, self.bandwidth, self.interact_first)

    def fit(self, u, t):
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        m = u.shape[0]
        if len(self.names) == 1:
            self.weights_ = np.ones(1)
        else:
            n_hold = min(max(1, int(round(self.holdout_fraction * m))), m - 1)
            perm = np.random.default_rng(self.seed).permutation(m)
            hold, train = perm[:n_hold], perm[n_hold:]
            P = np.column_stack([self._new(nm).fit(u[train], t[train]).predict(u[hold])
                                 for nm in self.names])
            self.weights_ = simplex_least_squares(P, t[hold], self.n_iter)
        self.fitted_ = [(w, self._new(nm).fit(u, t))
                        for nm, w in zip(self.names, self.weights_) if w > 0]
        return self

    def predict(self, u):
        out = np.zeros(np.shape(u)[0])
        for w, learner in self.fitted_:
            out += w * learner.predict(u)
        return out

    def describe(self):
        return "stack(" + ", ".join(f"{nm}={w:.3f}" for nm, w in zip(self.names, self.weights_)) + ")"
