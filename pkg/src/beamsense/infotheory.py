"""Entropy helpers (base 2 unless stated)."""
from __future__ import annotations

import numpy as np

_LOG = {"bits": np.log2, "nats": np.log}


def _log(unit: str):
    try:
        return _LOG[unit]
    except KeyError:
        raise ValueError(f"unit must be 'bits' or 'nats', got {unit!r}") from None


def binary_entropy(p, unit: str = "bits"):
    """h(p) = -p log p - (1-p) log(1-p), with h(0) = h(1) = 0. Vectorised."""
    log = _log(unit)
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p > 0, -p * log(np.where(p > 0, p, 1.0)), 0.0)
        q = 1.0 - p
        t2 = np.where(q > 0, -q * log(np.where(q > 0, q, 1.0)), 0.0)
    out = t1 + t2
    return float(out) if out.ndim == 0 else out


def entropy(pmf, unit: str = "bits", axis=None):
    log = _log(unit)
    pmf = np.asarray(pmf, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pmf > 0, -pmf * log(np.where(pmf > 0, pmf, 1.0)), 0.0)
    return terms.sum(axis=axis)


def mutual_information(joint, unit: str = "bits") -> float:
    """I(A; B) for a 2-D joint probability table."""
    joint = np.asarray(joint, dtype=float)
    return float(entropy(joint.sum(axis=1), unit) + entropy(joint.sum(axis=0), unit)
                 - entropy(joint, unit))
