"""Synthetic right-censored survival data with planted, correlated signal.

Features are Gaussian with unit variances and exchangeable correlation
inside each block. Event times follow an exponential proportional-hazards
model. Censoring is the earlier of a fixed study horizon and an independent
exponential dropout; the horizon is solved so the expected censored fraction
hits the target, then all times are rescaled so the horizon equals
``horizon_weeks``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import brentq

from .dataset import SurvivalDataset

__all__ = [
    "SynthConfig",
    "GroundTruth",
    "contiguous_blocks",
    "covariance",
    "generate",
    "paper_shaped",
    "paper_shaped_config",
    "expected_censoring",
]


def contiguous_blocks(n_features: int, size: int, start: int = 0) -> tuple[tuple[int, ...], ...]:
    """Consecutive index blocks of ``size`` covering ``start..n_features-1``."""
    return tuple(tuple(range(a, min(a + size, n_features))) for a in range(start, n_features, size))


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 350
    n_features: int = 20
    informative: tuple[int, ...] = (0,)
    coefficients: tuple[float, ...] = (1.0,)
    blocks: tuple[tuple[int, ...], ...] | None = None  # None: blocks of 4
    rho: float | tuple[float, ...] = 0.7  # one value, or one per block
    baseline_rate: float = 1.0
    dropout_rate: float = 0.25  # relative to baseline_rate
    target_censoring: float = 0.77
    horizon_weeks: float = 96.0
    feature_names: tuple[str, ...] | None = None
    conventional: tuple[int, ...] = ()  # indices tagged conventional
    feature_sd: tuple[float, ...] | None = None  # per-feature scale, default 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "informative", tuple(int(i) for i in self.informative))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(tuple(int(i) for i in b) for b in self.blocks))
        if not isinstance(self.rho, (int, float)):
            object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if self.n_samples < 2 or self.n_features < 1:
            raise ValueError("need n_samples >= 2 and n_features >= 1")
        if len(self.coefficients) != len(self.informative):
            raise ValueError("one coefficient per informative feature")
        if len(set(self.informative)) != len(self.informative):
            raise ValueError("duplicate informative index")
        for i in self.informative + self.conventional:
            if not 0 <= i < self.n_features:
                raise ValueError(f"feature index {i} out of range")
        blocks = self.resolved_blocks()
        seen = [i for b in blocks for i in b]
        if len(seen) != len(set(seen)) or any(not 0 <= i < self.n_features for i in seen):
            raise ValueError("blocks must be disjoint index sets within range")
        rhos = self.resolved_rho()
        if len(rhos) != len(blocks):
            raise ValueError("one rho per block")
        if any(not 0 <= r < 1 for r in rhos):
            raise ValueError("rho must lie in [0, 1)")
        if not 0 < self.target_censoring < 1:
            raise ValueError("target censoring must lie in (0, 1)")
        if self.baseline_rate <= 0 or self.dropout_rate < 0 or self.horizon_weeks <= 0:
            raise ValueError("rates and horizon must be positive")
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise ValueError("one name per feature")
        if self.feature_sd is not None and (len(self.feature_sd) != self.n_features
                                            or min(self.feature_sd) <= 0):
            raise ValueError("one positive sd per feature")

    def resolved_blocks(self):
        if self.blocks is None:
            return contiguous_blocks(self.n_features, 4)
        return self.blocks

    def resolved_rho(self) -> tuple[float, ...]:
        if isinstance(self.rho, tuple):
            return self.rho
        return (float(self.rho),) * len(self.resolved_blocks())

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return tuple(self.feature_names)
        width = len(str(self.n_features))
        return tuple(f"x{i + 1:0{width}d}" for i in range(self.n_features))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = None if self.blocks is None else [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        d = dict(d)
        for key in ("informative", "coefficients", "conventional"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("blocks") is not None:
            d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        for key in ("rho", "feature_names", "feature_sd"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    informative: tuple[str, ...]
    coefficients: tuple[float, ...]
    horizon: float  # study horizon on the output time scale
    dropout_rate: float  # on the output time scale
    target_censoring: float
    realized_censoring: float
    config: dict = field(default_factory=dict)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "GroundTruth":
        with open(path) as fh:
            d = json.load(fh)
        d["informative"] = tuple(d["informative"])
        d["coefficients"] = tuple(d["coefficients"])
        return cls(**d)


def covariance(config: SynthConfig) -> np.ndarray:
    """Block-exchangeable correlation scaled by ``feature_sd``."""
    S = np.eye(config.n_features)
    for block, r in zip(config.resolved_blocks(), config.resolved_rho()):
        idx = np.asarray(block)
        S[np.ix_(idx, idx)] = r
        S[idx, idx] = 1.0
    if config.feature_sd is not None:
        sd = np.asarray(config.feature_sd)
        S = S * np.outer(sd, sd)
    return S


def _lp_sd(config: SynthConfig, cov) -> float:
    b = np.zeros(config.n_features)
    b[list(config.informative)] = config.coefficients
    return float(np.sqrt(b @ cov @ b))


def expected_censoring(tau: float, lp_sd: float, rate: float, dropout: float,
                       n_nodes: int = 80) -> float:
    """P(censored) when T ~ Exp(rate * exp(lp)), lp ~ N(0, lp_sd^2), and
    censoring is min(tau, Exp(dropout))."""
    x, w = hermegauss(n_nodes)
    lam = rate * np.exp(lp_sd * x)
    tot = lam + dropout
    p_event = lam / tot * -np.expm1(-tot * tau)
    return float(1.0 - (w @ p_event) / np.sqrt(2 * np.pi))


def _solve_horizon(config: SynthConfig, lp_sd: float) -> float:
    rate = config.baseline_rate
    dropout = config.dropout_rate * rate
    target = config.target_censoring
    f = lambda tau: expected_censoring(tau, lp_sd, rate, dropout) - target
    floor = expected_censoring(np.inf, lp_sd, rate, dropout)
    if target <= floor + 1e-9:
        raise ValueError(
            f"censoring target {target} is unreachable: dropout alone censors {floor:.3f}")
    hi = 1.0 / rate
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError(f"censoring target {target} is unreachable")
    return brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-12)


def generate(config: SynthConfig) -> tuple[SurvivalDataset, GroundTruth]:
    """Draw one dataset; identical output for identical config."""
    rng = np.random.default_rng(config.seed)
    N, M = config.n_samples, config.n_features
    cov = covariance(config)
    L = np.linalg.cholesky(cov)
    X = rng.standard_normal((N, M)) @ L.T
    beta = np.zeros(M)
    beta[list(config.informative)] = config.coefficients
    lp = X @ beta
    rate = config.baseline_rate
    T = rng.exponential(1.0 / (rate * np.exp(lp)))
    dropout = config.dropout_rate * rate
    D = rng.exponential(1.0 / dropout, N) if dropout > 0 else np.full(N, np.inf)
    tau = _solve_horizon(config, _lp_sd(config, cov))
    C = np.minimum(D, tau)
    event = (T <= C).astype(np.int64)
    scale = config.horizon_weeks / tau
    times = np.minimum(T, C) * scale
    names = config.names()
    conv = set(config.conventional)
    tags = {n: ("conventional" if i in conv else "dbm") for i, n in enumerate(names)}
    ds = SurvivalDataset(X, names, times, event, tags)
    truth = GroundTruth(
        informative=tuple(names[i] for i in config.informative),
        coefficients=config.coefficients,
        horizon=config.horizon_weeks,
        dropout_rate=dropout / scale,
        target_censoring=config.target_censoring,
        realized_censoring=float(1.0 - event.mean()),
        config=json.loads(json.dumps(config.to_dict())),
    )
    return ds, truth


# paper-shaped layout: 9 conventional columns followed by 56 DBM columns
N_CONVENTIONAL = 9
N_DBM = 56
N_LOW_VARIANCE = 46
PLANTED_DBM = (3, 14, 22, 31, 40, 49)  # positions within the DBM block, strongest first
SHADOW_DBM = (8, 27)
PLANTED_COEF = (0.55, 0.45, 0.40, 0.35, 0.30, 0.25)
PLANTED_RHO = 0.5  # exchangeable correlation among planted features and shadows
DOMINANT_COEF = 1.2
MINOR_CONVENTIONAL_COEF = (0.3, 0.25)


def paper_shaped_config(seed: int = 0, include_low_variance: bool = False,
                        target_censoring: float = 0.77, n_samples: int = 350) -> SynthConfig:
    """N=350 rows; 9 conventional columns (``bt25fw`` dominant) and 56 DBM
    columns. Six DBM columns carry signal of decreasing strength and share
    one correlated block (rho ``PLANTED_RHO``) with two signal-free shadows;
    the remaining DBM columns are noise in blocks of 4 at rho 0.7. With
    ``include_low_variance`` 46 near-constant DBM columns are appended
    (variance below 0.01)."""
    n_extra = N_LOW_VARIANCE if include_low_variance else 0
    M = N_CONVENTIONAL + N_DBM + n_extra
    off = N_CONVENTIONAL
    planted = tuple(off + j for j in PLANTED_DBM)
    shadows = tuple(off + j for j in SHADOW_DBM)
    group = tuple(sorted(planted + shadows))
    rest = [off + j for j in range(N_DBM) if off + j not in group]
    blocks = [group] + [tuple(rest[a:a + 4]) for a in range(0, len(rest), 4)]
    rhos = [PLANTED_RHO] + [0.7] * (len(blocks) - 1)
    if n_extra:
        lowvar = list(range(off + N_DBM, M))
        blocks += [tuple(lowvar[a:a + 4]) for a in range(0, n_extra, 4)]
        rhos += [0.7] * (len(blocks) - len(rhos))
    names = ["bt25fw"] + [f"conv_{i}" for i in range(1, N_CONVENTIONAL)]
    names += [f"dbm_{j + 1:02d}" for j in range(N_DBM)]
    names += [f"dbm_lv_{j + 1:02d}" for j in range(n_extra)]
    sd = [1.0] * (N_CONVENTIONAL + N_DBM) + [0.05] * n_extra
    informative = (0, 1, 2) + planted
    coefs = (DOMINANT_COEF,) + MINOR_CONVENTIONAL_COEF + PLANTED_COEF
    return SynthConfig(
        n_samples=n_samples, n_features=M, informative=informative, coefficients=coefs,
        blocks=tuple(blocks), rho=tuple(rhos), target_censoring=target_censoring,
        feature_names=tuple(names), conventional=tuple(range(N_CONVENTIONAL)),
        feature_sd=tuple(sd) if n_extra else None, seed=seed,
    )


def paper_shaped(seed: int = 0, include_low_variance: bool = False,
                 target_censoring: float = 0.77) -> tuple[SurvivalDataset, GroundTruth]:
    return generate(paper_shaped_config(seed, include_low_variance, target_censoring))
