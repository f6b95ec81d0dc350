"""Observation container, CSV ingestion, validation and fold assignment."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadFoldCount, MissingColumn, NonBinaryTreatment, NonNumericCell


@dataclass(frozen=True)
class Observation:
    y: float
    a: float
    z: float
    x: tuple = ()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar table of (Y, A, Z, X).

    Construction does not enforce the observation invariants; `validate`
    reports on them and `load_csv` refuses files that break them. Arrays are
    made read-only so a Dataset can be shared between threads.
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    x: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        a = np.asarray(self.a, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(y), -1) if x.size else np.empty((len(y), 0))
        if not (len(y) == len(a) == len(z) == x.shape[0]):
            raise ValueError("y, a, z and x must have the same number of rows")
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("covariate_names length must equal the x dimension")
        for arr in (y, a, z, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.a[idx], self.z[idx], self.x[idx], self.covariate_names)

    def observations(self) -> list[Observation]:
        return [Observation(float(self.y[i]), float(self.a[i]), float(self.z[i]),
                            tuple(float(v) for v in self.x[i])) for i in range(self.n)]

    @classmethod
    def from_observations(cls, obs: Sequence[Observation], covariate_names=()) -> "Dataset":
        if not obs:
            raise ValueError("need at least one observation")
        x = np.array([o.x for o in obs], dtype=float).reshape(len(obs), -1)
        return cls([o.y for o in obs], [o.a for o in obs], [o.z for o in obs], x,
                   covariate_names)


@dataclass(frozen=True)
class ColumnMap:
    y: str
    a: str
    z: str
    x: tuple = ()


def _parse(cell, row, col):
    try:
        value = float(cell)
    except ValueError:
        raise NonNumericCell(row, col, cell) from None
    return value


def load_csv(path, mapping: ColumnMap) -> Dataset:
    """Read a header-row CSV into a Dataset, rows in file order.

    Row numbers in errors count data rows from 0. Empty cells are rejected;
    the treatment column must hold the literals 0 or 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(mapping.y) from None
        header = [h.strip() for h in header]
        wanted = [mapping.y, mapping.a, mapping.z, *mapping.x]
        pos = {}
        for col in wanted:
            if col not in header:
                raise MissingColumn(col)
            pos[col] = header.index(col)
        ys, as_, zs, xs = [], [], [], []
        for r, line in enumerate(reader):
            if not line:
                continue
            cells = {c: (line[i].strip() if i < len(line) else "") for c, i in pos.items()}
            a_raw = cells[mapping.a]
            a = _parse(a_raw, r, mapping.a)
            if a not in (0.0, 1.0):
                raise NonBinaryTreatment(r, a_raw)
            ys.append(_parse(cells[mapping.y], r, mapping.y))
            as_.append(a)
            zs.append(_parse(cells[mapping.z], r, mapping.z))
            xs.append([_parse(cells[c], r, c) for c in mapping.x])
    n = len(ys)
    x = np.array(xs, dtype=float).reshape(n, len(mapping.x))
    return Dataset(ys, as_, zs, x, tuple(mapping.x))


def write_csv(data: Dataset, path, mapping: ColumnMap | None = None) -> None:
    """Write `data` so that `load_csv(path, mapping)` reproduces it exactly."""
    mapping = mapping or ColumnMap("y", "a", "z", tuple(data.covariate_names))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([mapping.y, mapping.a, mapping.z, *mapping.x])
        for i in range(data.n):
            w.writerow([repr(float(data.y[i])), repr(int(data.a[i])) if data.a[i] in (0, 1)
                        else repr(float(data.a[i])), repr(float(data.z[i])),
                        *(repr(float(v)) for v in data.x[i])])


@dataclass
class Violation:
    invariant: str
    rows: list = field(default_factory=list)


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {"ok": self.ok,
                "violations": [{"invariant": v.invariant, "rows": list(v.rows)}
                               for v in self.violations]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def validate(data: Dataset | Sequence[Observation]) -> ValidationReport:
    """Check every observation/dataset invariant; never raises."""
    if isinstance(data, Dataset):
        obs = data.observations()
        names = data.covariate_names
    else:
        obs = list(data)
        names = None
    out = []
    if not obs:
        return ValidationReport([Violation("n >= 1")])

    def collect(name, pred):
        rows = [i for i, o in enumerate(obs) if not pred(o)]
        if rows:
            out.append(Violation(name, rows))

    collect("a binary", lambda o: o.a in (0, 1))
    collect("y finite", lambda o: math.isfinite(o.y))
    collect("z finite", lambda o: math.isfinite(o.z))
    collect("x finite", lambda o: all(math.isfinite(v) for v in o.x))
    dim = len(obs[0].x)
    collect("x dimension", lambda o: len(o.x) == dim)
    if names is not None and len(names) != dim:
        out.append(Violation("covariate_names length"))
    return ValidationReport(out)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    k: int
    seed: int

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def kfold_split(n: int, k: int, seed: int) -> FoldAssignment:
    """Seeded shuffle, then deal indices round-robin into k folds."""
    if k < 2 or k > n:
        raise BadFoldCount(n, k)
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of, k, seed)
