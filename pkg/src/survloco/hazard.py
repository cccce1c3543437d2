"""Discrete-time hazard algebra and the observation-level negative
log-likelihood used to score survival predictions.

Intervals are numbered ``1..d`` here: ``h[s-1]`` is the conditional hazard
of interval ``s`` and ``S(q) = prod_{s<=q} (1 - h_s)``, so ``S(0) = 1``.
:func:`interval_nll` is the vectorized form and takes the 0-based interval
indices produced by :func:`survloco.dataset.discretize`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "EPS_CLIP",
    "HazardCurve",
    "ObservedOutcome",
    "clip_hazard",
    "log_survival_factor",
    "survival",
    "nll",
    "mean_nll",
    "interval_nll",
]

EPS_CLIP = 1e-6


def clip_hazard(h, eps: float = EPS_CLIP) -> np.ndarray:
    return np.clip(np.asarray(h, dtype=float), eps, 1.0 - eps)


def log_survival_factor(h, eps: float = EPS_CLIP) -> np.ndarray:
    """``log(1 - h)`` of the clipped hazard. At the upper clip the factor is
    exactly ``eps``; going through ``1 - (1 - eps)`` would lose ~1e-10."""
    h = np.asarray(h, dtype=float)
    return np.where(h >= 1.0 - eps, np.log(eps), np.log1p(-clip_hazard(h, eps)))


@dataclass(frozen=True, eq=False)
class HazardCurve:
    """Per-interval conditional hazards of one subject.

    Raw values in ``[0, 1]`` are accepted; clipping happens at evaluation.
    """

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 1 or h.size == 0:
            raise ValueError("hazard curve must be a non-empty vector")
        if np.any(~np.isfinite(h)) or np.any(h < 0) or np.any(h > 1):
            raise ValueError("hazards must lie in [0, 1]")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def __len__(self):
        return self.h.size

    @property
    def d(self) -> int:
        return self.h.size


@dataclass(frozen=True)
class ObservedOutcome:
    """Discretized outcome: interval ``q`` in ``1..d`` and indicator ``c``.

    ``c == 1`` means the event was observed in interval ``q``; ``c == 0``
    means the subject was censored there (still at risk at the end of q).
    """

    q: int
    c: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q is 1-based and must be >= 1")
        if self.c not in (0, 1):
            raise ValueError("c must be 0 or 1")

    @classmethod
    def from_interval(cls, interval: int, event: int) -> "ObservedOutcome":
        """From a 0-based interval index as returned by ``discretize``."""
        return cls(int(interval) + 1, int(event))


def survival(curve: HazardCurve, q: int, eps: float = EPS_CLIP) -> float:
    """P(T > q) under the clipped hazards, for ``0 <= q <= d``."""
    if not 0 <= q <= curve.d:
        raise IndexError(f"q={q} outside 0..{curve.d}")
    return float(np.exp(np.sum(log_survival_factor(curve.h[:q], eps))))


def nll(curve: HazardCurve, obs: ObservedOutcome, event_value: int = 1,
        eps: float = EPS_CLIP) -> float:
    """Negative log-likelihood of one discretized observation.

    Event branch: ``-log h(q) - log S(q-1)``; censored branch: ``-log S(q)``.
    ``event_value`` selects which value of ``obs.c`` takes the event branch;
    pass 0 for the convention in which ``c`` flags censoring.
    """
    if obs.q > curve.d:
        raise IndexError(f"q={obs.q} outside 1..{curve.d}")
    h = clip_hazard(curve.h, eps)
    log_surv = log_survival_factor(curve.h[: obs.q], eps)
    if obs.c == event_value:
        return float(-np.log(h[obs.q - 1]) - log_surv[:-1].sum())
    return float(-log_surv.sum())


def mean_nll(curves: Sequence[HazardCurve], obs: Sequence[ObservedOutcome],
             event_value: int = 1) -> float:
    if len(curves) != len(obs):
        raise ValueError("curves and outcomes differ in length")
    if not curves:
        raise ValueError("empty input")
    return float(np.mean([nll(c, o, event_value) for c, o in zip(curves, obs)]))


def interval_nll(H, interval, event, eps: float = EPS_CLIP) -> np.ndarray:
    """Row-wise loss for a hazard matrix ``H`` (n x d).

    ``interval`` holds 0-based interval indices and ``event`` 1 for an
    observed event, 0 for censoring.
    """
    H = np.asarray(H, dtype=float)
    log_s = log_survival_factor(H, eps)
    H = clip_hazard(H, eps)
    interval = np.asarray(interval, dtype=np.int64)
    event = np.asarray(event)
    rows = np.arange(H.shape[0])
    cum = np.cumsum(log_s, axis=1)
    through = cum[rows, interval]
    before = np.where(interval > 0, cum[rows, np.maximum(interval - 1, 0)], 0.0)
    return np.where(event == 1, -np.log(H[rows, interval]) - before, -through)
