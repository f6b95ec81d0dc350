"""Pointwise intervals, multiplier-bootstrap uniform bands and the
effect-homogeneity check."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ZeroVarianceColumn
from .estimator import InfluenceMatrix


def pointwise_ci(psi_hat, column, level=0.95):
    """Normal interval from the empirical variance of an influence column.

    Returns ``(lo, hi, se)``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    column = np.asarray(column, dtype=float)
    if len(column) < 2:
        raise ValueError("need at least two influence values")
    se = float(np.std(column, ddof=1) / np.sqrt(len(column)))
    q = norm.ppf(0.5 + level / 2)
    return psi_hat - q * se, psi_hat + q * se, se


@dataclass
class UniformBand:
    deltas: tuple
    psi_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    se: np.ndarray
    critical_value: float
    bootstrap_critical_value: float
    b: int
    seed: int
    level: float

    def pointwise(self):
        q = norm.ppf(0.5 + self.level / 2)
        return self.psi_hat - q * self.se, self.psi_hat + q * self.se

    def covers(self, value) -> bool:
        return bool(np.all((self.lo <= value) & (value <= self.hi)))

    def to_dict(self):
        return {"deltas": list(self.deltas), "psi_hat": self.psi_hat.tolist(),
                "lo": self.lo.tolist(), "hi": self.hi.tolist(), "se": self.se.tolist(),
                "critical_value": self.critical_value,
                "bootstrap_critical_value": self.bootstrap_critical_value,
                "b": self.b, "seed": self.seed, "level": self.level}

    def to_csv(self, path):
        pw_lo, pw_hi = self.pointwise()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "psi_hat", "pw_lo", "pw_hi", "unif_lo", "unif_hi"])
            for row in zip(self.deltas, self.psi_hat, pw_lo, pw_hi, self.lo, self.hi):
                w.writerow([repr(float(v)) for v in row])


def _draw_sups(std_cols, b, seed, chunk=64):
    """Sup-|.| of the multiplier process for draws 0..b-1.

    Draw i uses its own generator seeded by (seed, i), so the result does not
    depend on how draws are batched.
    """
    n = std_cols.shape[0]
    sups = np.empty(b)
    for s in range(0, b, chunk):
        stop = min(b, s + chunk)
        mult = np.stack([np.random.default_rng([seed, i]).standard_normal(n) for i in range(s, stop)])
        sups[s:stop] = np.max(np.abs(mult @ std_cols), axis=1) / np.sqrt(n)
    return sups


def multiplier_bootstrap(influence: InfluenceMatrix, psi_hats, b=1000, seed=0, level=0.95):
    """Studentised uniform band over the shift grid.

    Influence values are held fixed; each draw multiplies them by i.i.d.
    standard normals. The reported critical value is never below the
    pointwise normal quantile, so the band always contains the pointwise
    intervals.
    """
    if b < 100:
        raise ValueError("need at least 100 bootstrap draws")
    vals = influence.values
    n = vals.shape[0]
    sd = np.std(vals, axis=0, ddof=1)
    if np.any(~(sd > 0)):
        bad = [influence.deltas[g] for g in np.flatnonzero(~(sd > 0))]
        raise ZeroVarianceColumn(f"ZeroVarianceColumn: influence column(s) at delta={bad} have zero variance")
    sups = _draw_sups(vals / sd, b, seed)
    c_boot = float(np.quantile(sups, level))
    c = max(c_boot, float(norm.ppf(0.5 + level / 2)))
    psi = np.asarray(psi_hats, dtype=float)
    se = sd / np.sqrt(n)
    return UniformBand(influence.deltas, psi, psi - c * se, psi + c * se, se, c, c_boot, b, seed, level)


@dataclass
class HomogeneityResult:
    reject: bool
    feasible_constant_range: tuple | None

    def to_dict(self):
        r = self.feasible_constant_range
        return {"reject": self.reject, "feasible_constant_range": None if r is None else list(r)}


def homogeneity_test(band) -> HomogeneityResult:
    """Can one horizontal line pass through the band at every shift?"""
    lo = float(np.max(band.lo))
    hi = float(np.min(band.hi))
    if lo <= hi:
        return HomogeneityResult(False, (lo, hi))
    return HomogeneityResult(True, None)


def band_to_json(band, homogeneity=None):
    d = band.to_dict()
    if homogeneity is not None:
        d["homogeneity"] = homogeneity.to_dict()
    return json.dumps(d, indent=2, sort_keys=True)
