"""Posterior over beam directions and its Bayes recursion.

A belief is a plain 1-D float array ``k`` with ``k[m] = P(S = m | past)``.
"""
from __future__ import annotations

import numpy as np

from .channel import BeamAction, ChannelConfig
from .policy import PolicyTree

TIE_TOL = 1e-12


class DegenerateEvidenceError(ZeroDivisionError):
    """The observed feedback has zero probability under the current belief."""


def init_belief(cfg: ChannelConfig) -> np.ndarray:
    return np.full(cfg.M, 1.0 / cfg.M)


def likelihood(a: BeamAction, z: int, cfg: ChannelConfig) -> np.ndarray:
    """Vector of P(Z = z | action, S = m) over beams m."""
    p1 = cfg.detect_probs(a.powers)
    return p1 if z == 1 else 1.0 - p1


def update_belief(k, a: BeamAction, z: int, cfg: ChannelConfig) -> np.ndarray:
    if z not in (0, 1):
        raise ValueError(f"feedback must be 0 or 1, got {z}")
    k = np.asarray(k, dtype=float)
    if k.shape != (cfg.M,) or a.M != cfg.M:
        raise ValueError("belief/action length does not match M")
    w = k * likelihood(a, z, cfg)
    total = w.sum()
    if not total > 0:
        raise DegenerateEvidenceError(f"feedback z={z} has zero probability under the belief")
    return w / total


def belief_trajectory(policy: PolicyTree, z_prefix, cfg: ChannelConfig) -> np.ndarray:
    k = init_belief(cfg)
    z_prefix = tuple(int(z) for z in z_prefix)
    for j, z in enumerate(z_prefix):
        k = update_belief(k, policy.action(z_prefix[:j]), z, cfg)
    return k


def rank_beams(k, tol: float = TIE_TOL) -> list[int]:
    """Beam indices by decreasing posterior; near-equal masses (within ``tol``
    relative to the largest) are ordered by lowest index."""
    k = np.asarray(k, dtype=float)
    order = sorted(range(k.size), key=lambda m: (-k[m], m))
    scale = max(float(k.max()), 1e-300)
    ranked, group = [], [order[0]]
    for m in order[1:]:
        if k[group[0]] - k[m] <= tol * scale:
            group.append(m)
        else:
            ranked.extend(sorted(group))
            group = [m]
    ranked.extend(sorted(group))
    return ranked


def top_beams(k, n: int, tol: float = TIE_TOL) -> list[int]:
    return sorted(rank_beams(k, tol)[:n])
