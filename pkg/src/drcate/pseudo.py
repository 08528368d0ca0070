"""Doubly robust (AIPW) pseudo-outcomes and their error decomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import DomainError
from .nuisance import PosteriorDraws


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite nuisance or outcome value")


def pseudo_outcome(y, t, p1, m1, m0):
    """AIPW pseudo-outcome, broadcasting over draws and units.

    ``T/p1 (Y - m1) + m1 - (1-T)/(1-p1) (Y - m0) - m0``
    """
    y, t, p1, m1, m0 = (np.asarray(a, dtype=float) for a in (y, t, p1, m1, m0))
    _finite(y, p1, m1, m0)
    if np.any(p1 <= 0) or np.any(p1 >= 1):
        raise DomainError("propensity must lie strictly inside (0, 1)")
    return (t / p1 * (y - m1) + m1) - ((1.0 - t) / (1.0 - p1) * (y - m0) + m0)


def draw_mean(a) -> np.ndarray:
    """Mean over the first axis, shifted by the first draw so identical
    draws average to that draw exactly."""
    a = np.asarray(a, dtype=float)
    return a[0] + (a - a[0]).mean(axis=0)


@dataclass(frozen=True, eq=False)
class PseudoOutcomeDraws:
    z: np.ndarray
    z_bar: np.ndarray

    @property
    def B(self) -> int:
        return self.z.shape[0]


def pseudo_outcome_draws(draws: PosteriorDraws, ds: Dataset) -> PseudoOutcomeDraws:
    """One pseudo-outcome vector per posterior draw."""
    if draws.n != ds.n:
        raise DomainError(f"draws cover {draws.n} units but dataset has {ds.n}")
    z = pseudo_outcome(ds.y, ds.t, draws.p1, draws.m1, draws.m0)
    return PseudoOutcomeDraws(z, draw_mean(z))


def posterior_mean_pseudo(pod: PseudoOutcomeDraws) -> np.ndarray:
    return draw_mean(pod.z)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """``a1 + a2 + a3 + b`` equals the pseudo-outcome of the draw.

    ``a1`` carries outcome-model error, ``a2`` propensity error, ``a3`` their
    product and ``b`` is the pseudo-outcome at the reference nuisances.
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    b: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.a1 + self.a2 + self.a3 + self.b


def _arm_terms(y, ind, p, m, p_ref, m_ref):
    a1 = (m - m_ref) * (1.0 - ind / p_ref)
    a2 = ind * (p - p_ref) * (m_ref - y) / (p * p_ref)
    a3 = ind * (p - p_ref) * (m - m_ref) / (p * p_ref)
    b = ind / p_ref * (y - m_ref) + m_ref
    return a1, a2, a3, b


def decompose(y, t, p1, m1, m0, p1_ref, m1_ref, m0_ref) -> Decomposition:
    """Split the treated-minus-control pseudo-outcome around reference nuisances.

    Each arm ``s`` contributes
    ``(m - m~)(1 - I/p~) + I (p - p~)(m~ - Y)/(p p~) + I (p - p~)(m - m~)/(p p~)
    + I/p~ (Y - m~) + m~`` with ``I = 1(T = s)``; the control arm enters with a
    minus sign.
    """
    y, t, p1, m1, m0, p1_ref, m1_ref, m0_ref = (
        np.asarray(a, dtype=float) for a in (y, t, p1, m1, m0, p1_ref, m1_ref, m0_ref))
    _finite(y, p1, m1, m0, p1_ref, m1_ref, m0_ref)
    for p in (p1, p1_ref):
        if np.any(p <= 0) or np.any(p >= 1):
            raise DomainError("propensity must lie strictly inside (0, 1)")
    treated = _arm_terms(y, t, p1, m1, p1_ref, m1_ref)
    control = _arm_terms(y, 1.0 - t, 1.0 - p1, m0, 1.0 - p1_ref, m0_ref)
    return Decomposition(*(c1 - c0 for c1, c0 in zip(treated, control)))
