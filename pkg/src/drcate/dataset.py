"""Observational data container, CSV ingestion and light preprocessing.

A :class:`Dataset` holds one row per unit: outcome ``y``, binary treatment
``t``, confounders ``x`` (n, p) and effect modifiers ``v`` (n, q).  The first
column of ``v`` is always the intercept.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ParseError, SchemaError

INTERCEPT = "(intercept)"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    y_name: str = "y"
    t_name: str = "t"
    x_names: tuple = ()
    v_names: tuple = ()

    def __post_init__(self):
        y = _frozen(self.y).reshape(-1)
        t = np.asarray(self.t)
        x = _frozen(self.x)
        v = _frozen(self.v)
        n = y.shape[0]
        if x.ndim == 1:
            x = _frozen(x.reshape(n, -1))
        if x.ndim != 2 or v.ndim != 2:
            raise SchemaError("x and v must be 2-d matrices")
        if t.shape != (n,) or x.shape[0] != n or v.shape[0] != n:
            raise SchemaError(
                f"row counts differ: y={n}, t={t.shape[0]}, x={x.shape[0]}, v={v.shape[0]}"
            )
        if not np.all((t == 0) | (t == 1)):
            raise DomainError("treatment must take values in {0, 1}")
        t = _frozen(t, dtype=np.int8)
        if t.sum() == 0 or t.sum() == n:
            raise DomainError("both treatment arms must be non-empty")
        for name, arr in (("y", y), ("x", x), ("v", v)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite values")
        if not np.all(v[:, 0] == 1.0):
            raise DomainError("first modifier column must be the all-ones intercept")
        q = v.shape[1]
        if n < q or np.linalg.matrix_rank(v) < q:
            raise DomainError(
                f"modifier matrix (n={n}, q={q}) is not of full column rank; "
                "check for duplicated or constant modifier columns"
            )
        x_names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        v_names = tuple(self.v_names) or (INTERCEPT,) + tuple(
            f"v{j}" for j in range(1, q)
        )
        if len(x_names) != x.shape[1] or len(v_names) != q:
            raise SchemaError("column name count does not match matrix width")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "v_names", v_names)

    @classmethod
    def from_arrays(cls, y, t, x, modifiers=None, *, y_name="y", t_name="t",
                    x_names=(), modifier_names=()):
        """Build a dataset, prepending the intercept to ``modifiers``.

        ``modifiers=None`` uses the confounders themselves as modifiers.
        """
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if modifiers is None:
            modifiers = x
            modifier_names = modifier_names or x_names
        modifiers = np.asarray(modifiers, dtype=float).reshape(n, -1)
        v = np.column_stack([np.ones(n), modifiers])
        names = tuple(modifier_names) or tuple(f"v{j + 1}" for j in range(modifiers.shape[1]))
        return cls(y=y, t=t, x=x, v=v, y_name=y_name, t_name=t_name,
                   x_names=tuple(x_names), v_names=(INTERCEPT,) + names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.v.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.t[idx], self.x[idx], self.v[idx],
                       self.y_name, self.t_name, self.x_names, self.v_names)


@dataclass(frozen=True)
class Schema:
    """Column selection for :func:`load_csv`.

    More than one treatment column means continuous exposures that are
    collapsed with :func:`dichotomize`.
    """

    outcome: str
    treatment: Sequence[str]
    confounders: Sequence[str]
    modifiers: Sequence[str] | None = None

    def __post_init__(self):
        if isinstance(self.treatment, str):
            object.__setattr__(self, "treatment", (self.treatment,))
        object.__setattr__(self, "treatment", tuple(self.treatment))
        object.__setattr__(self, "confounders", tuple(self.confounders))
        if self.modifiers is not None:
            object.__setattr__(self, "modifiers", tuple(self.modifiers))


@dataclass(frozen=True)
class StandardizationRecord:
    mean: np.ndarray
    sd: np.ndarray
    names: tuple = ()
    y_mean: float | None = None
    y_sd: float | None = None

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.sd

    def invert(self, x):
        return np.asarray(x, dtype=float) * self.sd + self.mean


def _read_numeric_table(path: Path, columns: Sequence[str]) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        for col in columns:
            if col not in header:
                raise SchemaError(f"{path}: column '{col}' not found in header")
        pos = {c: header.index(c) for c in columns}
        out = {c: [] for c in columns}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for col, j in pos.items():
                cell = row[j].strip() if j < len(row) else ""
                if cell == "" or cell.lower() in ("na", "nan"):
                    raise ParseError(f"{path}:{lineno}: missing value in column '{col}'")
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column '{col}'"
                    ) from None
                if not math.isfinite(val):
                    raise ParseError(f"{path}:{lineno}: non-finite value in column '{col}'")
                out[col].append(val)
    return {c: np.asarray(v, dtype=float) for c, v in out.items()}


def load_csv(path, schema: Schema, *, dichotomize_treatment: bool | None = None) -> Dataset:
    """Read a header-ed CSV into a :class:`Dataset`.

    A single treatment column must already be 0/1 unless
    ``dichotomize_treatment`` is true; several treatment columns are always
    dichotomized.
    """
    path = Path(path)
    modifiers = schema.confounders if schema.modifiers is None else schema.modifiers
    wanted = [schema.outcome, *schema.treatment, *schema.confounders, *modifiers]
    table = _read_numeric_table(path, list(dict.fromkeys(wanted)))

    if dichotomize_treatment is None:
        dichotomize_treatment = len(schema.treatment) > 1
    exposures = np.column_stack([table[c] for c in schema.treatment])
    if dichotomize_treatment:
        t = dichotomize(exposures)
    else:
        if exposures.shape[1] != 1:
            raise SchemaError("several treatment columns require dichotomization")
        t = exposures[:, 0]
        bad = ~((t == 0) | (t == 1))
        if bad.any():
            row = int(np.argmax(bad)) + 2
            raise DomainError(
                f"{path}:{row}: treatment column '{schema.treatment[0]}' has value "
                f"{t[bad][0]!r}; expected 0/1 (or supply a dichotomization rule)"
            )
    x = np.column_stack([table[c] for c in schema.confounders]) if schema.confounders \
        else np.empty((len(t), 0))
    mods = np.column_stack([table[c] for c in modifiers]) if modifiers \
        else np.empty((len(t), 0))
    return Dataset.from_arrays(
        table[schema.outcome], t.astype(int), x, mods,
        y_name=schema.outcome, t_name="+".join(schema.treatment),
        x_names=schema.confounders, modifier_names=tuple(modifiers),
    )


def write_csv(dataset: Dataset, path) -> None:
    """Write ``y, t, x...`` plus modifier columns not already among x.

    Floats are written with ``repr`` so that :func:`load_csv` reads them back
    bit-for-bit.
    """
    names = [dataset.y_name, dataset.t_name, *dataset.x_names]
    cols = [dataset.y, dataset.t, *dataset.x.T]
    for j, name in enumerate(dataset.v_names[1:], start=1):
        if name not in names:
            names.append(name)
            cols.append(dataset.v[:, j])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else int(c)
                        for c in row])


def dichotomize(exposures) -> np.ndarray:
    """Collapse k continuous exposures into a binary treatment.

    A unit is treated when strictly more than k/2 of its exposures are
    strictly greater than the corresponding column mean.
    """
    e = np.asarray(exposures, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[1] < 1:
        raise DomainError("need at least one exposure column")
    sd = e.std(axis=0)
    const = np.flatnonzero(sd == 0)
    if const.size:
        raise DomainError(f"exposure column {int(const[0])} is constant")
    above = (e > e.mean(axis=0)).sum(axis=1)
    return (2 * above > e.shape[1]).astype(np.int8)


def standardize(dataset: Dataset, *, outcome: bool = False):
    """Center and scale every confounder column (population SD).

    ``t`` and ``v`` are untouched; ``y`` is scaled only if ``outcome``.
    """
    x = dataset.x
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    zero = np.flatnonzero(~(sd > 0))
    if zero.size:
        raise DomainError(f"confounder '{dataset.x_names[zero[0]]}' has zero SD")
    y, y_mean, y_sd = dataset.y, None, None
    if outcome:
        y_mean, y_sd = float(y.mean()), float(y.std())
        if not y_sd > 0:
            raise DomainError("outcome has zero SD")
        y = (y - y_mean) / y_sd
    rec = StandardizationRecord(mean=mean, sd=sd, names=dataset.x_names,
                                y_mean=y_mean, y_sd=y_sd)
    out = Dataset(y, dataset.t, rec.apply(x), dataset.v, dataset.y_name,
                  dataset.t_name, dataset.x_names, dataset.v_names)
    return out, rec
