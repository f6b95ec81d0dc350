"""Simulation designs with closed-form nuisance oracles, rate-controlled
nuisance perturbations, and the rate / positivity / coverage studies."""
from __future__ import annotations

import concurrent.futures as cf
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from .dataset import Dataset
from .errors import EstimationError
from .estimator import InfluenceMatrix, ShiftSpec, finish_if, shift_terms
from .inference import homogeneity_test, multiplier_bootstrap
from .nuisance import DensityFit, NuisanceModel, RegressionFit

NuisanceOracle = NuisanceModel


@dataclass(frozen=True)
class KennedyDGP:
    """(Y0, X) ~ N(0, I_5); Z | X ~ N(alpha'X, z_noise_variance);
    A = 1{Z >= Y0}; Y = Y0 + psi_true * A."""

    alpha: tuple = (1.0, 1.0, -1.0, -1.0)
    psi_true: float = 2.0
    z_noise_variance: float = 2.0
    seed: int = 0


def kennedy_oracle(dgp: KennedyDGP) -> NuisanceModel:
    """Exact nuisances. Z is independent of Y0 given X and Y0 is independent
    of X, so lambda(z, x) = P(Y0 <= z) = Phi(z) and mu = psi * Phi(z)."""
    alpha = np.asarray(dgp.alpha, dtype=float)
    psi = dgp.psi_true
    sd = math.sqrt(dgp.z_noise_variance)

    def mean_z(x):
        return np.asarray(x, dtype=float) @ alpha

    return NuisanceModel(
        mu=RegressionFit(lambda z, x: psi * ndtr(z), "continuous", "oracle"),
        lam=RegressionFit(lambda z, x: ndtr(z), "binary", "oracle"),
        pi=DensityFit(lambda z, x: norm.pdf(z, loc=mean_z(x), scale=sd), mean_z, sd, "oracle"),
        descriptor="kennedy-oracle",
    )


def gen_kennedy(dgp: KennedyDGP, n: int, rng=None):
    """Draw n observations; returns (Dataset, oracle)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(dgp.seed) if rng is None else rng
    alpha = np.asarray(dgp.alpha, dtype=float)
    d = len(alpha)
    w = rng.standard_normal((n, d + 1))
    y0, x = w[:, 0], w[:, 1:]
    z = x @ alpha + math.sqrt(dgp.z_noise_variance) * rng.standard_normal(n)
    a = (z >= y0).astype(float)
    y = y0 + dgp.psi_true * a
    data = Dataset(y, a, z, x, tuple(f"x{j + 1}" for j in range(d)))
    return data, kennedy_oracle(dgp)


@dataclass(frozen=True, eq=False)
class PerturbedNuisance(NuisanceModel):
    """Oracle nuisances with errors shrinking like n^(-1/k).

    Regressions get err(z) = (c + z) * scale with c ~ N(0, 1) drawn once, so
    each perturbed regression is a fixed function. With ``pi_mode="ratio"``
    the two density-ratio evaluators (downward and upward shifted density
    over the density at Z) are each multiplied by (1 + e * scale),
    e ~ N(1, 1) drawn independently per evaluator. With
    ``pi_mode="density"`` the density itself gets + e * scale, floored at
    1e-6.
    """

    scale: float = 0.0
    ratio_noise: tuple = (0.0, 0.0)
    pi_mode: str = "ratio"

    def raw_ratio(self, z, shift, x):
        r = super().raw_ratio(z, shift, x)
        if self.pi_mode != "ratio" or self.scale == 0:
            return r
        shift = np.broadcast_to(np.asarray(shift, dtype=float), np.shape(r))
        e_down, e_up = self.ratio_noise
        factor = np.where(shift < 0, 1 + e_down * self.scale,
                          np.where(shift > 0, 1 + e_up * self.scale, 1.0))
        return r * np.maximum(factor, 0.0)


def perturb(oracle: NuisanceModel, n: int, k: float, seed, pi_mode="ratio") -> NuisanceModel:
    """Perturb `oracle` as if estimated at rate n^(1/k); k = inf returns it unchanged."""
    if math.isinf(k):
        return oracle
    if pi_mode not in ("ratio", "density"):
        raise ValueError("pi_mode must be 'ratio' or 'density'")
    scale = float(n) ** (-1.0 / k)
    rng = np.random.default_rng(seed)
    c_mu, c_lam = rng.standard_normal(2)
    e_pi = rng.normal(1.0, 1.0, size=2)
    mu0, lam0, pi0 = oracle.mu, oracle.lam, oracle.pi

    mu = RegressionFit(lambda z, x: mu0(z, x) + (c_mu + z) * scale, "continuous", f"perturbed(k={k})")
    lam = RegressionFit(lambda z, x: lam0(z, x) + (c_lam + z) * scale, "continuous", f"perturbed(k={k})")
    if pi_mode == "density":
        e = float(e_pi[0])
        pi = DensityFit(lambda z, x: np.maximum(pi0(z, x) + e * scale, 1e-6),
                        pi0.mean_evaluator, pi0.sigma, f"perturbed(k={k})")
    else:
        pi = pi0
    return PerturbedNuisance(mu, lam, pi, f"perturbed(k={k}, n={n})", scale,
                             (float(e_pi[0]), float(e_pi[1])), pi_mode)


def corrupt(oracle: NuisanceModel, block: str, dgp: KennedyDGP | None = None) -> NuisanceModel:
    """Fixed O(1) misspecification of one nuisance block, the other left exact.

    ``block="regressions"``: mu + 0.5 (1 + z), lambda + 0.1 (1 + z).
    ``block="pi"``: Gaussian density with mean shifted by 0.5 and variance
    inflated by half.
    """
    if block == "regressions":
        mu0, lam0 = oracle.mu, oracle.lam
        mu = RegressionFit(lambda z, x: mu0(z, x) + 0.5 * (1 + z), "continuous", "corrupted")
        lam = RegressionFit(lambda z, x: lam0(z, x) + 0.1 * (1 + z), "continuous", "corrupted")
        return NuisanceModel(mu, lam, oracle.pi, "corrupted-regressions")
    if block == "pi":
        dgp = dgp or KennedyDGP()
        alpha = np.asarray(dgp.alpha, dtype=float)
        sd = math.sqrt(1.5 * dgp.z_noise_variance)

        def mean_z(x):
            return np.asarray(x, dtype=float) @ alpha + 0.5

        pi = DensityFit(lambda z, x: norm.pdf(z, loc=mean_z(x), scale=sd), mean_z, sd, "corrupted")
        return NuisanceModel(oracle.mu, oracle.lam, pi, "corrupted-pi")
    raise ValueError("block must be 'regressions' or 'pi'")


def rep_rng(seed, *keys):
    """Generator for one replication, keyed by (master seed, cell, rep)."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def _plugin_point(terms):
    py, pa = terms.plug_y, terms.plug_a
    den = float(np.mean(pa))
    psi = float(np.mean(py)) / den
    phi = (py - psi * pa) / den
    return psi, float(np.std(phi, ddof=1) / np.sqrt(len(phi)))


def _map(fn, items, threads):
    if threads > 1:
        with cf.ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def rate_study(ns=(100, 1000, 5000, 10000), ks=(2, 3, 4, 6), deltas=tuple(np.arange(0.5, 4.01, 0.5)),
               reps=500, seed=0, dgp: KennedyDGP | None = None, pi_mode="ratio", threads=1):
    """Plug-in vs IF bias under rate-controlled nuisance error.

    One row per (n, k, delta, estimator) with mean bias, empirical SD, mean
    closed-form SE and RMSE over replications. For the plug-in the SE treats
    the perturbed regressions as fixed. Replications whose estimator fails
    (weak or degenerate denominator) are counted in `n_failed`.
    """
    if reps < 2:
        raise ValueError("reps must be >= 2")
    dgp = dgp or KennedyDGP()
    rows = []
    for i_n, n in enumerate(ns):
        for i_k, k in enumerate(ks):
            for i_d, delta in enumerate(deltas):
                spec = ShiftSpec(float(delta))

                def one(rep, n=n, k=k, i_n=i_n, i_k=i_k, i_d=i_d, spec=spec):
                    rng = rep_rng(seed, i_n, i_k, i_d, rep)
                    data, oracle = gen_kennedy(dgp, n, rng)
                    model = perturb(oracle, n, k, rng.integers(2 ** 62), pi_mode)
                    terms = shift_terms(data, model, None, spec)
                    out = {}
                    try:
                        rec, _ = finish_if(terms)
                        out["if"] = (rec.psi_hat, rec.se)
                    except EstimationError:
                        out["if"] = None
                    try:
                        out["plugin"] = _plugin_point(terms) if abs(np.mean(terms.plug_a)) >= 1e-3 else None
                    except EstimationError:
                        out["plugin"] = None
                    return out

                results = _map(one, range(reps), threads)
                for est in ("plugin", "if"):
                    ok = [r[est] for r in results if r[est] is not None]
                    psi = np.array([p for p, _ in ok])
                    se = np.array([s for _, s in ok])
                    err = psi - dgp.psi_true
                    rows.append({
                        "n": n, "k": k, "delta": float(delta), "estimator": est,
                        "mean_bias": float(np.mean(err)) if len(ok) else float("nan"),
                        "emp_sd": float(np.std(psi, ddof=1)) if len(ok) > 1 else float("nan"),
                        "mean_se": float(np.mean(se)) if len(ok) else float("nan"),
                        "rmse": float(np.sqrt(np.mean(err ** 2))) if len(ok) else float("nan"),
                        "n_ok": len(ok), "n_failed": reps - len(ok),
                    })
    return pd.DataFrame(rows)


def truth_recovery(n=5000, reps=200, deltas=(1.0,), seed=0, dgp: KennedyDGP | None = None, threads=1):
    """IF estimates with exact nuisances on fresh Kennedy samples.

    Returns one row per (rep, delta) with the estimate and its standard
    error; the true effect is ``dgp.psi_true`` at every delta.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    dgp = dgp or KennedyDGP()
    grid = tuple(float(d) for d in deltas)

    def one(rep):
        data, oracle = gen_kennedy(dgp, n, rep_rng(seed, rep))
        out = []
        for d in grid:
            rec, _ = finish_if(shift_terms(data, oracle, None, ShiftSpec(d)))
            out.append((rep, d, rec.psi_hat, rec.se))
        return out

    rows = [r for chunk in _map(one, range(reps), threads) for r in chunk]
    return pd.DataFrame(rows, columns=["rep", "delta", "psi_hat", "se"])


@dataclass(frozen=True)
class PositivityDGP:
    """X ~ Bern(1/2); Z | X ~ TruncNorm(2X - 1, 0.5) on [-X - 3(1-X), 3X + (1-X)]."""

    sd: float = 0.5
    seed: int = 0
    # union of the two conditional supports
    marginal_support: tuple = (-3.0, 3.0)


@dataclass(frozen=True, eq=False)
class PositivitySample:
    x: np.ndarray
    z: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n(self):
        return len(self.z)


def truncnorm_inverse_cdf(u, mean, sd, lower, upper):
    """Map uniforms u to the normal(mean, sd) law truncated to [lower, upper]."""
    fa = ndtr((lower - mean) / sd)
    fb = ndtr((upper - mean) / sd)
    z = mean + sd * ndtri(fa + u * (fb - fa))
    return np.clip(z, lower, upper)


def gen_positivity(n, seed, dgp: PositivityDGP | None = None) -> PositivitySample:
    if n < 1:
        raise ValueError("n must be >= 1")
    dgp = dgp or PositivityDGP(seed=seed)
    rng = np.random.default_rng(seed)
    x = (rng.random(n) < 0.5).astype(np.int64)
    mean = 2.0 * x - 1.0
    lower = -x - 3.0 * (1 - x)
    upper = 3.0 * x + 1.0 * (1 - x)
    z = truncnorm_inverse_cdf(rng.random(n), mean, dgp.sd, lower.astype(float), upper.astype(float))
    return PositivitySample(x, z, lower.astype(float), upper.astype(float))


def count_violations(sample: PositivitySample, delta, dgp: PositivityDGP | None = None):
    """(usual, shift) positivity violation counts.

    A draw violates usual positivity when its conditional support misses part
    of the marginal support, and shift positivity when Z - delta or
    Z + delta leaves its conditional support.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    lo, hi = (dgp or PositivityDGP()).marginal_support
    usual = int(np.sum((sample.lower > lo) | (sample.upper < hi)))
    shift = int(np.sum((sample.z - delta < sample.lower) | (sample.z + delta > sample.upper)))
    return usual, shift


def violation_regions(sample: PositivitySample, delta, dgp: PositivityDGP | None = None):
    """Per covariate group: instrument values with zero conditional density
    inside the marginal support, and observed values whose shift would exit
    the conditional support."""
    lo, hi = (dgp or PositivityDGP()).marginal_support
    out = {}
    for g in np.unique(sample.x):
        a = float(sample.lower[sample.x == g][0])
        b = float(sample.upper[sample.x == g][0])
        usual = [r for r in ((lo, a), (b, hi)) if r[1] > r[0]]
        shift = [(a, min(a + delta, b)), (max(b - delta, a), b)]
        out[int(g)] = {"usual": usual, "shift": shift}
    return out


def coverage_study(n=2000, reps=500, delta_grid=(0.5, 1, 2, 3, 4), level=0.95, seed=0, b=1000,
                   dgp: KennedyDGP | None = None, threads=1):
    """Coverage of pointwise intervals and uniform bands with oracle nuisances.

    Returns a DataFrame with one row per delta (pointwise and uniform
    coverage at that delta) and `attrs` holding the all-grid uniform
    coverage and the homogeneity rejection rate.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    dgp = dgp or KennedyDGP()
    grid = tuple(float(d) for d in delta_grid)
    q = norm.ppf(0.5 + level / 2)

    def one(rep):
        rng = rep_rng(seed, rep)
        data, oracle = gen_kennedy(dgp, n, rng)
        psis, cols, pw = [], [], []
        for d in grid:
            rec, phi = finish_if(shift_terms(data, oracle, None, ShiftSpec(d)), level=level)
            psis.append(rec.psi_hat)
            cols.append(phi)
            pw.append(abs(rec.psi_hat - dgp.psi_true) <= q * rec.se)
        band = multiplier_bootstrap(InfluenceMatrix(np.column_stack(cols), grid), psis, b,
                                    int(rng.integers(2 ** 31)), level)
        unif = (band.lo <= dgp.psi_true) & (dgp.psi_true <= band.hi)
        return np.array(pw), unif, homogeneity_test(band).reject

    results = _map(one, range(reps), threads)
    pw = np.array([r[0] for r in results])
    un = np.array([r[1] for r in results])
    table = pd.DataFrame({"delta": grid, "pointwise_coverage": pw.mean(axis=0),
                          "uniform_coverage": un.mean(axis=0)})
    table.attrs["uniform_coverage_all"] = float(np.mean(np.all(un, axis=1)))
    table.attrs["homogeneity_reject_rate"] = float(np.mean([r[2] for r in results]))
    table.attrs.update({"n": n, "reps": reps, "level": level})
    return table
