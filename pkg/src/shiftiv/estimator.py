"""Double-shift IV estimators: influence-function (IF), plug-in, IPW and 2SLS,
plus the cross-fitting driver.

Notation used throughout: for a target T (outcome Y or treatment A) and a
signed shift s,

    xi(T; s) = pi(Z - s | X) / pi(Z | X) * (T - m(Z, X)) + m(Z + s, X)

with m the regression of T on (Z, X), and the contrast
Xi(T; a, b) = xi(T; a) - xi(T; b). The IF estimator is
mean(Xi(Y; up, -down)) / mean(Xi(A; up, -down)).

All sample means use numpy's fixed-order pairwise summation, so results do
not depend on the thread count used for fitting.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import norm

from .dataset import Dataset, FoldAssignment, kfold_split
from .errors import DegenerateIntervention, RankDeficientDesign, WeakInstrument
from .nuisance import DEFAULT_CLIP, NuisanceConfig, NuisanceModel, _zx, density_ratio, fit_nuisance


@dataclass(frozen=True)
class ShiftSpec:
    """Shift magnitude and optional instrument support [z_min, z_max]."""

    delta: float
    support: tuple | None = None

    def __post_init__(self):
        if not math.isfinite(self.delta) or self.delta <= 0:
            raise DegenerateIntervention(
                f"DegenerateIntervention: shift must be a positive finite number, got {self.delta}")
        if self.support is not None:
            lo, hi = self.support
            if not lo < hi:
                raise ValueError("support must satisfy z_min < z_max")
            object.__setattr__(self, "support", (float(lo), float(hi)))


def effective_shifts(z, spec: ShiftSpec):
    """Per-row (up, down) shift sizes; a shift that would leave the support is zeroed."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = spec.delta
    if spec.support is None:
        up = np.full(z.shape, d)
        down = np.full(z.shape, d)
    else:
        lo, hi = spec.support
        up = np.where(z <= hi - d, d, 0.0)
        down = np.where(z >= lo + d, d, 0.0)
    if scalar:
        return float(up[0]), float(down[0])
    return up, down


def _regression(model, which):
    if which in ("Y", "y", "mu"):
        return model.mu
    if which in ("A", "a", "lam", "lambda"):
        return model.lam
    raise ValueError(f"which must be 'Y' or 'A', got {which!r}")


def xi(t, z, x, shift, model: NuisanceModel, which="Y", clip=DEFAULT_CLIP):
    """Uncentered influence term xi(T; shift); equals t exactly where shift == 0."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z, x = _zx(z, x)
    shift = np.broadcast_to(np.asarray(shift, dtype=float), z.shape)
    m = _regression(model, which)
    ratio, _ = density_ratio(model, z, -shift, x, clip)
    out = ratio * (t - m(z, x)) + m(z + shift, x)
    return np.where(shift == 0, t, out)


def xi_contrast(t, z, x, a, b, model: NuisanceModel, which="Y", clip=DEFAULT_CLIP):
    """Xi(T; a, b) = xi(T; a) - xi(T; b)."""
    return xi(t, z, x, a, model, which, clip) - xi(t, z, x, b, model, which, clip)


class XiRow(NamedTuple):
    xi_y_up: np.ndarray
    xi_y_down: np.ndarray
    xi_a_up: np.ndarray
    xi_a_down: np.ndarray


@dataclass
class ShiftTerms:
    """Per-row quantities shared by the IF, plug-in and IPW estimators at one shift."""

    delta: float
    rows: XiRow
    plug_y: np.ndarray
    plug_a: np.ndarray
    ipw_weight: np.ndarray
    n_clipped: int

    @property
    def xi_y(self):
        return self.rows.xi_y_up - self.rows.xi_y_down

    @property
    def xi_a(self):
        return self.rows.xi_a_up - self.rows.xi_a_down


@dataclass
class EstimateRecord:
    delta: float | None
    psi_hat: float
    numerator: float | None
    denominator: float | None
    complier_fraction: float | None
    se: float
    ci_pointwise: tuple
    ci_uniform: tuple | None = None
    n_clipped: int = 0
    estimator_kind: str = "if"
    flags: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["ci_pointwise"] = list(self.ci_pointwise)
        d["ci_uniform"] = None if self.ci_uniform is None else list(self.ci_uniform)
        d["flags"] = list(self.flags)
        return d


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    values: np.ndarray
    deltas: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[1] != len(self.deltas):
            raise ValueError("one influence column per delta required")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))

    @property
    def n(self):
        return self.values.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"delta={d!r}" for d in self.deltas])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def _groups(n, models, folds):
    """Yield (model, row indices) pairs: one group per fold, or all rows."""
    if isinstance(models, NuisanceModel):
        return [(models, np.arange(n))]
    models = list(models)
    if folds is None:
        if len(models) != 1:
            raise ValueError("fold assignment required with several models")
        return [(models[0], np.arange(n))]
    if len(models) != folds.k:
        raise ValueError(f"expected {folds.k} fold models, got {len(models)}")
    return [(models[j], folds.indices(j)) for j in range(folds.k)]


def shift_terms(data: Dataset, models, folds: FoldAssignment | None, spec: ShiftSpec,
                clip=DEFAULT_CLIP) -> ShiftTerms:
    """Evaluate every row with the model fitted without that row's fold."""
    up, down = effective_shifts(data.z, spec)
    if not (np.any(up) or np.any(down)):
        raise DegenerateIntervention(
            f"DegenerateIntervention: no row admits a shift of {spec.delta} inside the support")
    n = data.n
    cols = {k: np.empty(n) for k in ("yu", "yd", "au", "ad", "py", "pa", "w")}
    n_clipped = 0
    for model, idx in _groups(n, models, folds):
        y, a, z, x = data.y[idx], data.a[idx], data.z[idx], data.x[idx]
        u, dn = up[idx], down[idx]
        mu_z, lam_z = model.mu(z, x), model.lam(z, x)
        mu_u, mu_d = model.mu(z + u, x), model.mu(z - dn, x)
        lam_u, lam_d = model.lam(z + u, x), model.lam(z - dn, x)
        r_u, c_u = density_ratio(model, z, -u, x, clip)
        r_d, c_d = density_ratio(model, z, dn, x, clip)
        r_u = np.where(u == 0, 1.0, r_u)
        r_d = np.where(dn == 0, 1.0, r_d)
        n_clipped += int(np.sum(c_u & (u != 0)) + np.sum(c_d & (dn != 0)))
        cols["yu"][idx] = np.where(u == 0, y, r_u * (y - mu_z) + mu_u)
        cols["yd"][idx] = np.where(dn == 0, y, r_d * (y - mu_z) + mu_d)
        cols["au"][idx] = np.where(u == 0, a, r_u * (a - lam_z) + lam_u)
        cols["ad"][idx] = np.where(dn == 0, a, r_d * (a - lam_z) + lam_d)
        cols["py"][idx] = mu_u - mu_d
        cols["pa"][idx] = lam_u - lam_d
        cols["w"][idx] = r_u - r_d
    rows = XiRow(cols["yu"], cols["yd"], cols["au"], cols["ad"])
    return ShiftTerms(spec.delta, rows, cols["py"], cols["pa"], cols["w"], n_clipped)


def _normal_ci(psi, se, level):
    q = norm.ppf(0.5 + level / 2)
    return (psi - q * se, psi + q * se)


def _ratio_guard(num, den, weak_threshold, kind):
    if abs(den) < weak_threshold:
        raise WeakInstrument(
            f"WeakInstrument: |denominator| = {abs(den):.3g} < {weak_threshold} for the {kind} estimator")


def _flags(den):
    return ("complier_fraction>1.05",) if abs(den) > 1.05 else ()


def finish_if(terms: ShiftTerms, weak_threshold=1e-3, level=0.95):
    xy, xa = terms.xi_y, terms.xi_a
    if not (np.any(xy) or np.any(xa)):
        raise DegenerateIntervention("DegenerateIntervention: Xi vanishes for every row")
    num, den = float(np.mean(xy)), float(np.mean(xa))
    _ratio_guard(num, den, weak_threshold, "if")
    psi = num / den
    phi = (xy - psi * xa) / den
    se = float(np.std(phi, ddof=1) / np.sqrt(len(phi))) if len(phi) > 1 else 0.0
    rec = EstimateRecord(terms.delta, psi, num, den, abs(den), se, _normal_ci(psi, se, level),
                         None, terms.n_clipped, "if", _flags(den))
    return rec, phi


def _bootstrap_ratio_se(top, bottom, b, seed, chunk=50):
    n = len(top)
    if b < 2 or n < 2:
        return float("nan")
    rng = np.random.default_rng(seed)
    draws = []
    for s in range(0, b, chunk):
        idx = rng.integers(0, n, size=(min(chunk, b - s), n))
        draws.append(top[idx].mean(axis=1) / bottom[idx].mean(axis=1))
    return float(np.std(np.concatenate(draws), ddof=1))


def _finish_ratio(kind, top, bottom, terms, weak_threshold, level, n_boot, seed):
    num, den = float(np.mean(top)), float(np.mean(bottom))
    _ratio_guard(num, den, weak_threshold, kind)
    psi = num / den
    se = _bootstrap_ratio_se(top, bottom, n_boot, seed)
    ci = _normal_ci(psi, se, level) if math.isfinite(se) else (psi, psi)
    return EstimateRecord(terms.delta, psi, num, den, abs(den), se, ci, None,
                          terms.n_clipped if kind == "ipw" else 0, kind, _flags(den))


def finish_plugin(terms, weak_threshold=1e-3, level=0.95, n_boot=500, seed=0):
    if not (np.any(terms.plug_y) or np.any(terms.plug_a)):
        raise DegenerateIntervention("DegenerateIntervention: shifted regressions coincide")
    return _finish_ratio("plugin", terms.plug_y, terms.plug_a, terms, weak_threshold, level, n_boot, seed)


def finish_ipw(terms, data: Dataset, weak_threshold=1e-3, level=0.95, n_boot=500, seed=0):
    w = terms.ipw_weight
    if not np.any(w):
        raise DegenerateIntervention("DegenerateIntervention: IPW weights vanish for every row")
    return _finish_ratio("ipw", w * data.y, w * data.a, terms, weak_threshold, level, n_boot, seed)


def estimate_if(data, models, folds, spec, clip=DEFAULT_CLIP, weak_threshold=1e-3, level=0.95):
    """IF-based estimate at one shift; returns (record, influence column)."""
    return finish_if(shift_terms(data, models, folds, spec, clip), weak_threshold, level)


def estimate_plugin(data, models, folds, spec, weak_threshold=1e-3, level=0.95, n_boot=500, seed=0):
    """Ratio of mean shifted-regression contrasts. SE from a row bootstrap
    with the fitted regressions held fixed."""
    terms = shift_terms(data, models, folds, spec, DEFAULT_CLIP)
    return finish_plugin(terms, weak_threshold, level, n_boot, seed)


def estimate_ipw(data, models, folds, spec, clip=DEFAULT_CLIP, weak_threshold=1e-3, level=0.95,
                 n_boot=500, seed=0):
    """Weighting estimator with weights (pi(Z-d|X) - pi(Z+d|X)) / pi(Z|X)."""
    terms = shift_terms(data, models, folds, spec, clip)
    return finish_ipw(terms, data, weak_threshold, level, n_boot, seed)


def estimate_tsls(data: Dataset, level=0.95) -> EstimateRecord:
    """Two-stage least squares: A on (1, X, Z), then Y on (1, X, A-hat).

    The standard error is the heteroskedasticity-robust (HC0) sandwich with
    structural residuals Y - [1, X, A] beta.
    """
    n = data.n
    w1 = np.column_stack([np.ones(n), data.x, data.z])
    if np.linalg.matrix_rank(w1) < w1.shape[1]:
        raise RankDeficientDesign("RankDeficientDesign: first-stage design [1, X, Z] is rank deficient")
    coef1, *_ = np.linalg.lstsq(w1, data.a, rcond=None)
    a_hat = w1 @ coef1
    w2 = np.column_stack([np.ones(n), data.x, a_hat])
    if np.linalg.matrix_rank(w2) < w2.shape[1]:
        raise RankDeficientDesign("RankDeficientDesign: second-stage design [1, X, A-hat] is rank deficient")
    bread = np.linalg.inv(w2.T @ w2)
    beta = bread @ (w2.T @ data.y)
    resid = data.y - np.column_stack([np.ones(n), data.x, data.a]) @ beta
    meat = (w2 * resid[:, None] ** 2).T @ w2
    se = float(np.sqrt(max((bread @ meat @ bread)[-1, -1], 0.0)))
    psi = float(beta[-1])
    return EstimateRecord(None, psi, None, None, None, se, _normal_ci(psi, se, level),
                          None, 0, "tsls")


def _fold_config(config: NuisanceConfig, seed, fold):
    s = int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])
    reg = replace(config.regression, seed=s)
    dens = replace(config.density, mean_learner=replace(config.density.mean_learner, seed=s + 1))
    return NuisanceConfig(reg, dens)


def fit_fold_models(data, folds: FoldAssignment, config: NuisanceConfig, seed=0, threads=1):
    """One NuisanceModel per fold, each fit on the complement of its fold."""
    def fit(j):
        return fit_nuisance(data, folds.complement(j), _fold_config(config, seed, j))
    if threads > 1:
        with cf.ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fit, range(folds.k)))
    return [fit(j) for j in range(folds.k)]


def cross_fit_run(data: Dataset, k=5, seed=0, config: NuisanceConfig | None = None,
                  delta_grid: Sequence[float] = (1.0,), support=None, clip=DEFAULT_CLIP,
                  weak_threshold=1e-3, level=0.95, n_boot=500, threads=1, models=None):
    """Cross-fit the nuisances and evaluate every estimator on the grid.

    Returns ``(records, influence)`` where `records` maps estimator kind to a
    list with one EstimateRecord per delta, and `influence` holds the IF
    estimator's influence columns.
    """
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise ValueError("delta_grid must be nonempty")
    if any(d <= 0 for d in grid):
        raise DegenerateIntervention("DegenerateIntervention: every delta must be strictly positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("delta_grid must be strictly ascending")
    config = config or NuisanceConfig()
    folds = kfold_split(data.n, k, seed)
    if models is None:
        models = fit_fold_models(data, folds, config, seed, threads)
    records = {"if": [], "plugin": [], "ipw": [], "tsls": []}
    cols = []
    tsls = estimate_tsls(data, level)
    for g, d in enumerate(grid):
        spec = ShiftSpec(d, support)
        terms = shift_terms(data, models, folds, spec, clip)
        rec, phi = finish_if(terms, weak_threshold, level)
        records["if"].append(rec)
        cols.append(phi)
        boot_seed = int(np.random.SeedSequence([seed, 7919, g]).generate_state(1)[0])
        records["plugin"].append(finish_plugin(terms, weak_threshold, level, n_boot, boot_seed))
        records["ipw"].append(finish_ipw(terms, data, weak_threshold, level, n_boot, boot_seed))
        records["tsls"].append(replace(tsls, delta=d))
    return records, InfluenceMatrix(np.column_stack(cols), tuple(grid))


def records_to_json(records, **extra):
    payload = {kind: [r.to_dict() for r in recs] for kind, recs in records.items()}
    payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True)


def records_to_csv(records, path):
    fields = ["estimator_kind", "delta", "psi_hat", "se", "pw_lo", "pw_hi", "unif_lo", "unif_hi",
              "numerator", "denominator", "complier_fraction", "n_clipped"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for kind, recs in records.items():
            for r in recs:
                u = r.ci_uniform or (None, None)
                w.writerow([kind, r.delta, repr(r.psi_hat), repr(r.se), repr(r.ci_pointwise[0]),
                            repr(r.ci_pointwise[1]), u[0], u[1], r.numerator, r.denominator,
                            r.complier_fraction, r.n_clipped])
