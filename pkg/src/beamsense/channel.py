"""Gaussian beam-pointing channel: configuration, alignment and detection.

Conventions
-----------
* Beams are indexed ``0..M-1``.
* A beam's "power" is the noncentrality it induces in the detection
  statistic ``D = 2 * ||Y||^2`` when it is the AoD.  Under noise only,
  ``D ~ chi2(2q)``; with power ``p`` on the AoD, ``D ~ chi2(2q, p)``.
  The threshold ``nu`` lives on the same scale as ``D``.
* Slot cost of an action is the sum of its per-beam powers; the per-slot
  budget is ``q * B``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .numerics import DEFAULT_SERIES, SeriesControl, chi2_cdf, noncentral_chi2_cdf

SIGNAL_KINDS = ("pilot", "gaussian_codeword")


class ConfigError(ValueError):
    pass


def p_fa(q: int, nu: float) -> float:
    """False-alarm probability P(D > nu | noise only)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return 1.0 - chi2_cdf(2 * q, nu)


def p_md(q: int, nu: float, sigma2: float, ctl: SeriesControl = DEFAULT_SERIES) -> float:
    """Miss-detection probability P(D <= nu | AoD noncentrality sigma2)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return noncentral_chi2_cdf(2 * q, sigma2, nu, ctl)


_p_fa_cached = lru_cache(maxsize=None)(p_fa)
_p_md_cached = lru_cache(maxsize=1 << 16)(p_md)


@dataclass(frozen=True)
class ChannelConfig:
    """Model constants.

    ``fixed_error_rates=(p_fa, p_md)`` replaces the chi-square detector by an
    idealised one whose miss probability does not depend on the (positive)
    power.  It is used for noiseless sanity cases and hand-checkable examples.
    """

    M: int
    q: int = 1
    Q: int = 1
    nu: float = 0.0
    B: float = 1.0
    series: SeriesControl = field(default=DEFAULT_SERIES)
    fixed_error_rates: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("M", "q", "Q"):
            v = getattr(self, name)
            if int(v) != v:
                raise ConfigError(f"{name} must be an integer, got {v}")
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")
        if self.q < 1 or self.Q < 1:
            raise ConfigError("q and Q must be >= 1")
        if not (math.isfinite(self.nu) and self.nu >= 0):
            raise ConfigError(f"nu must be finite and >= 0, got {self.nu}")
        if not (math.isfinite(self.B) and self.B >= 0):
            raise ConfigError(f"B must be finite and >= 0, got {self.B}")
        if self.fixed_error_rates is not None:
            fa, md = self.fixed_error_rates
            if not (0 <= fa <= 1 and 0 <= md <= 1):
                raise ConfigError(f"fixed error rates must be probabilities, got {self.fixed_error_rates}")
            object.__setattr__(self, "fixed_error_rates", (float(fa), float(md)))
        if not self.pfa_ok:
            warnings.warn(f"false-alarm probability {self.false_alarm():.4f} >= 0.5 "
                          f"(q={self.q}, nu={self.nu})", stacklevel=3)

    @property
    def budget(self) -> float:
        """Per-slot power budget q*B."""
        return self.q * self.B

    @property
    def pfa_ok(self) -> bool:
        return self.false_alarm() < 0.5

    def false_alarm(self) -> float:
        if self.fixed_error_rates is not None:
            return self.fixed_error_rates[0]
        return _p_fa_cached(self.q, float(self.nu))

    def miss(self, power: float) -> float:
        if power <= 0:
            return 1.0 - self.false_alarm()
        if self.fixed_error_rates is not None:
            return self.fixed_error_rates[1]
        return _p_md_cached(self.q, float(self.nu), float(power), self.series)

    def detect_prob(self, power: float) -> float:
        """P(Z = 1) for a beam that is the AoD and carries ``power``."""
        if power <= 0:
            return self.false_alarm()
        return 1.0 - self.miss(power)

    def detect_probs(self, powers) -> np.ndarray:
        """Per-beam P(Z = 1 | S = beam) for a vector of powers."""
        return np.array([self.detect_prob(float(p)) for p in powers])

    def to_dict(self) -> dict:
        d = {"M": self.M, "q": self.q, "Q": self.Q, "nu": self.nu, "B": self.B,
             "abs_tol": self.series.abs_tol, "max_terms": self.series.max_terms}
        if self.fixed_error_rates is not None:
            d["fixed_error_rates"] = list(self.fixed_error_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        known = {"M", "q", "Q", "nu", "B", "abs_tol", "max_terms", "seed", "fixed_error_rates"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        series = SeriesControl(abs_tol=float(d.get("abs_tol", DEFAULT_SERIES.abs_tol)),
                               max_terms=int(d.get("max_terms", DEFAULT_SERIES.max_terms)))
        fixed = d.get("fixed_error_rates")
        return cls(M=int(d["M"]), q=int(d.get("q", 1)), Q=int(d.get("Q", 1)),
                   nu=float(d.get("nu", 0.0)), B=float(d.get("B", 1.0)), series=series,
                   fixed_error_rates=tuple(fixed) if fixed is not None else None)

    def replace(self, **changes) -> "ChannelConfig":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ChannelConfig(**kw)


def load_config(path) -> tuple[ChannelConfig, int | None]:
    """Read a JSON config file; returns the config and the optional seed."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    seed = raw.get("seed")
    return ChannelConfig.from_dict(raw), (int(seed) if seed is not None else None)


def save_config(cfg: ChannelConfig, path, seed: int | None = None) -> None:
    d = cfg.to_dict()
    if seed is not None:
        d["seed"] = int(seed)
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class StateVector:
    aod_index: int

    def one_hot(self, M: int) -> np.ndarray:
        s = np.zeros(M)
        s[self.aod_index] = 1.0
        return s


@dataclass(frozen=True)
class BeamAction:
    """Per-beam powers for one slot."""

    powers: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.powers)
        if any(not math.isfinite(x) or x < 0 for x in p):
            raise ValueError(f"powers must be finite and nonnegative: {p}")
        object.__setattr__(self, "powers", p)

    @classmethod
    def zeros(cls, M: int) -> "BeamAction":
        return cls((0.0,) * M)

    @classmethod
    def uniform(cls, M: int, beams, power: float) -> "BeamAction":
        p = [0.0] * M
        for m in beams:
            p[m] = float(power)
        return cls(tuple(p))

    @property
    def M(self) -> int:
        return len(self.powers)

    @property
    def cost(self) -> float:
        return float(sum(self.powers))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(m for m, p in enumerate(self.powers) if p > 0)


def sample_state(cfg: ChannelConfig, rng: np.random.Generator) -> StateVector:
    return StateVector(int(rng.integers(cfg.M)))


def true_alignment(s: StateVector, a: BeamAction) -> int:
    return int(a.powers[s.aod_index] > 0)


def analytic_feedback(t: int, aod_power: float, cfg: ChannelConfig,
                      rng: np.random.Generator) -> int:
    """Draw Z given the alignment bit using the FA/MD probabilities."""
    if t not in (0, 1):
        raise ValueError(f"alignment bit must be 0 or 1, got {t}")
    if t == 1:
        if not aod_power > 0:
            raise ValueError("aligned slot requires positive power on the AoD")
        p1 = 1.0 - cfg.miss(aod_power)
    else:
        p1 = cfg.false_alarm()
    return int(rng.random() < p1)


def _aligned_rows(power, q: int, signal_kind: str, rng: np.random.Generator, size: int) -> np.ndarray:
    """Transmitted samples on a beam whose statistic noncentrality is ``power``.

    ``2 * ||x||^2 = power`` exactly for a pilot and in expectation for a
    Gaussian codeword.
    """
    if signal_kind == "pilot":
        amp = math.sqrt(power / (2.0 * q))
        return np.full((size, q), amp, dtype=complex)
    if signal_kind == "gaussian_codeword":
        var = power / (2.0 * q)
        return math.sqrt(var / 2.0) * (rng.standard_normal((size, q)) + 1j * rng.standard_normal((size, q)))
    raise ValueError(f"signal_kind must be one of {SIGNAL_KINDS}, got {signal_kind!r}")


def _noise(q: int, rng: np.random.Generator, size: int) -> np.ndarray:
    # CN(0, 1): each real component has variance 1/2
    return math.sqrt(0.5) * (rng.standard_normal((size, q)) + 1j * rng.standard_normal((size, q)))


def waveform_feedback_batch(states, a: BeamAction, signal_kind: str, cfg: ChannelConfig,
                            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``waveform_feedback`` over an array of AoD indices: builds the
    transmitted block ``X`` (M x q) per slot, forms ``Y = s^T X + N`` and
    thresholds ``D = 2 ||Y||^2``."""
    if signal_kind not in SIGNAL_KINDS:
        raise ValueError(f"signal_kind must be one of {SIGNAL_KINDS}, got {signal_kind!r}")
    if a.M != cfg.M:
        raise ValueError("action length does not match M")
    states = np.asarray(states, dtype=int)
    size = states.size
    X = np.zeros((size, cfg.M, cfg.q), dtype=complex)
    for m, p in enumerate(a.powers):
        if p > 0:
            X[:, m, :] = _aligned_rows(p, cfg.q, signal_kind, rng, size)
    y = X[np.arange(size), states, :] + _noise(cfg.q, rng, size)
    d = 2.0 * np.sum(y.real ** 2 + y.imag ** 2, axis=1)
    return (d > cfg.nu).astype(int), d


def waveform_feedback(s: StateVector, a: BeamAction, signal_kind: str, cfg: ChannelConfig,
                      rng: np.random.Generator) -> tuple[int, float]:
    """Synthesize one slot and apply the threshold test.

    Returns the feedback bit and the detection statistic ``D = 2 ||Y||^2``.
    """
    z, d = waveform_feedback_batch([s.aod_index], a, signal_kind, cfg, rng)
    return int(z[0]), float(d[0])


def detection_statistics(aod_power: float, signal_kind: str, q: int, size: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Vectorised draws of ``D`` for ``size`` independent slots at one AoD power."""
    if signal_kind not in SIGNAL_KINDS:
        raise ValueError(f"signal_kind must be one of {SIGNAL_KINDS}, got {signal_kind!r}")
    y = _noise(q, rng, size)
    if aod_power > 0:
        y = y + _aligned_rows(aod_power, q, signal_kind, rng, size)
    return 2.0 * np.sum(y.real ** 2 + y.imag ** 2, axis=1)


def gaussian_codeword_md(q: int, nu: float, power: float) -> float:
    """Exact MD for a Gaussian codeword: D is a scaled central chi2(2q)."""
    scale = 1.0 + power / (2.0 * q)
    return chi2_cdf(2 * q, nu / scale)
