"""Nuisance functions: outcome regression mu, treatment regression lambda,
and the conditional instrument density pi(z | x).

Every evaluator is vectorised: ``f(z, x)`` takes an instrument vector of
length m and a covariate matrix of shape (m, d).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .dataset import Dataset
from .errors import TooFewRows, ZeroResidualVariance
from .learners import StackedEnsemble

DEFAULT_CLIP = (1e-3, 1e3)


@dataclass(frozen=True)
class LearnerConfig:
    learners: tuple = ("mean", "ols", "kernel")
    bandwidth: object = None
    holdout_fraction: float = 0.2
    n_iter: int = 500
    seed: int = 0


@dataclass(frozen=True)
class DensityConfig:
    mean_learner: LearnerConfig = field(default_factory=LearnerConfig)


@dataclass(frozen=True)
class NuisanceConfig:
    regression: LearnerConfig = field(default_factory=LearnerConfig)
    density: DensityConfig = field(default_factory=DensityConfig)


def _zx(z, x):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:  # a single covariate vector
        x = x.reshape(1, -1)
    if x.shape[0] == 1 and len(z) > 1:
        x = np.repeat(x, len(z), axis=0)
    return z, x


BINARY_EPS = 1e-4


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """A fitted regression of a target on (z, x)."""

    evaluator: Callable
    target_kind: str = "continuous"
    learner_descriptor: str = ""

    def __call__(self, z, x):
        z, x = _zx(z, x)
        out = np.asarray(self.evaluator(z, x), dtype=float)
        if self.target_kind == "binary":
            out = np.clip(out, 0.0, 1.0)
        return out


@dataclass(frozen=True, eq=False)
class DensityFit:
    """Conditional density of z given x.

    For fitted densities `mean_evaluator` and `sigma` describe the Gaussian
    location-scale model; hand-built densities may leave them unset.
    """

    evaluator: Callable
    mean_evaluator: Callable | None = None
    sigma: float | None = None
    learner_descriptor: str = ""

    def __call__(self, z, x):
        z, x = _zx(z, x)
        return np.asarray(self.evaluator(z, x), dtype=float)


@dataclass(frozen=True, eq=False)
class NuisanceModel:
    mu: RegressionFit
    lam: RegressionFit
    pi: DensityFit
    descriptor: str = ""

    def raw_ratio(self, z, shift, x):
        """Unclipped pi(z + shift | x) / pi(z | x); NaN/inf are handled by the caller."""
        z, x = _zx(z, x)
        shift = np.broadcast_to(np.asarray(shift, dtype=float), z.shape)
        num = self.pi(z + shift, x)
        den = self.pi(z, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = num / den
        r = np.where(num == den, 1.0, r)
        r = np.where(den > 0, r, np.inf)
        return np.where(shift == 0, 1.0, r)


def density_ratio(model: NuisanceModel, z, shift, x, clip=DEFAULT_CLIP):
    """Clipped density ratio pi(z + shift | x) / pi(z | x).

    Returns ``(ratio, clipped)`` where `clipped` flags entries that were moved
    into ``[eps, cmax]``. A zero denominator maps to cmax.
    """
    eps, cmax = clip
    if not 0 < eps < cmax:
        raise ValueError("clip must satisfy 0 < eps < cmax")
    r = np.atleast_1d(np.asarray(model.raw_ratio(z, shift, x), dtype=float))
    r = np.where(np.isnan(r), cmax, r)
    clipped = (r < eps) | (r > cmax)
    return np.clip(r, eps, cmax), clipped


def _features(z, x):
    return np.column_stack([z, x])


def _ensemble(config: LearnerConfig, interact_first=True):
    return StackedEnsemble(names=tuple(config.learners), holdout_fraction=config.holdout_fraction,
                           n_iter=config.n_iter, seed=config.seed, bandwidth=config.bandwidth,
                           interact_first=interact_first)


def _clip_binary(evaluator, target_kind):
    # fitted probabilities stay BINARY_EPS away from 0 and 1; oracles are left exact
    if target_kind != "binary":
        return evaluator
    return lambda z, x: np.clip(evaluator(z, x), BINARY_EPS, 1.0 - BINARY_EPS)


def fit_regression(z, x, t, target_kind="continuous", config: LearnerConfig | None = None):
    """Fit E[t | z, x] with the stacked ensemble described by `config`."""
    config = config or LearnerConfig()
    z, x = _zx(z, x)
    t = np.asarray(t, dtype=float)
    if len(t) < 2 * len(config.learners):
        raise TooFewRows(f"TooFewRows: {len(t)} rows for {len(config.learners)} base learners")
    if np.ptp(t) == 0:
        value = float(t[0])
        return RegressionFit(_clip_binary(lambda zz, xx: np.full(len(zz), value), target_kind),
                             target_kind, "mean(constant target)")
    ens = _ensemble(config).fit(_features(z, x), t)
    return RegressionFit(_clip_binary(lambda zz, xx: ens.predict(_features(zz, xx)), target_kind),
                         target_kind, ens.describe())


def gaussian_density(mean_evaluator, sigma):
    def pdf(z, x):
        return norm.pdf(z, loc=mean_evaluator(x), scale=sigma)
    return pdf


def fit_density(z, x, config: DensityConfig | None = None) -> DensityFit:
    """Location-scale Gaussian density: regress z on x, then use one global
    residual scale."""
    config = config or DensityConfig()
    z, x = _zx(z, x)
    if len(z) < 10:
        raise TooFewRows(f"TooFewRows: density fit needs >= 10 rows, got {len(z)}")
    mc = config.mean_learner
    if x.shape[1] == 0:
        mc = LearnerConfig(("mean",), mc.bandwidth, mc.holdout_fraction, mc.n_iter, mc.seed)
    ens = _ensemble(mc, interact_first=False).fit(x, z)
    resid = z - ens.predict(x)
    sigma = float(np.sqrt(np.mean(resid ** 2)))
    if not sigma > 1e-12 * max(1.0, float(np.max(np.abs(z)))):
        raise ZeroResidualVariance("ZeroResidualVariance: instrument is a deterministic function of x")
    mean_eval = ens.predict
    return DensityFit(gaussian_density(mean_eval, sigma), mean_eval, sigma,
                      f"gaussian(mean={ens.describe()}, sigma={sigma:.4g})")


def fit_nuisance(data: Dataset, train_indices, config: NuisanceConfig | None = None) -> NuisanceModel:
    """Fit (mu, lambda, pi) using only the rows in `train_indices`."""
    config = config or NuisanceConfig()
    idx = np.asarray(train_indices, dtype=np.int64)
    if idx.size == 0:
        raise TooFewRows("TooFewRows: empty training index set")
    z, x = data.z[idx], data.x[idx]
    mu = fit_regression(z, x, data.y[idx], "continuous", config.regression)
    a_kind = "binary" if np.all(np.isin(data.a[idx], (0.0, 1.0))) else "continuous"
    lam = fit_regression(z, x, data.a[idx], a_kind, config.regression)
    pi = fit_density(z, x, config.density)
    return NuisanceModel(mu, lam, pi, "fitted")
