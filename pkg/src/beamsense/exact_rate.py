"""Exact sensing rate of deterministic policies by enumeration over (S, Z^Q).

Because every action is a function of the feedback prefix, the joint law of
``(S, Z^Q)`` fixes ``X^Q`` and ``I(S; Z^Q | X^Q) = H(S) - H(S | Z^Q)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig
from .infotheory import binary_entropy, entropy
from .policy import PolicyTree, all_prefixes, prefixes

FEASIBILITY_TOL = 1e-9


@dataclass
class RateReport:
    sensing_rate: float
    unit: str
    per_slot_cost: tuple
    budget: float
    feasible: bool
    z_probs: dict = field(default_factory=dict)
    posteriors: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "sensing_rate": self.sensing_rate,
            "unit": self.unit,
            "per_slot_cost": list(self.per_slot_cost),
            "budget": self.budget,
            "feasible": self.feasible,
            "feedback_law": {
                "".join(map(str, z)): {"p": p, "posterior": list(self.posteriors[z])}
                for z, p in self.z_probs.items()
            },
        }


def joint_table(policy: PolicyTree, cfg: ChannelConfig) -> np.ndarray:
    """``P(S = s, Z^Q = z)`` with columns indexed by z in lexicographic order."""
    if policy.M != cfg.M:
        raise ValueError(f"policy has {policy.M} beams, config has {cfg.M}")
    Q = policy.Q
    p1 = {pre: cfg.detect_probs(policy.action(pre).powers) for pre in all_prefixes(Q)}
    cols = []
    for z in prefixes(Q):
        col = np.full(cfg.M, 1.0 / cfg.M)
        for j in range(Q):
            pj = p1[z[:j]]
            col = col * (pj if z[j] == 1 else 1.0 - pj)
        cols.append(col)
    return np.stack(cols, axis=1)


def power_usage(policy: PolicyTree, cfg: ChannelConfig) -> np.ndarray:
    """Expected cost of every slot, averaging node costs over P(z^{j-1})."""
    joint = joint_table(policy, cfg)
    pz = joint.sum(axis=0)
    Q = policy.Q
    costs = np.zeros(Q)
    for j in range(Q):
        # marginal of the first j bits: columns sharing a prefix are contiguous
        marg = pz.reshape(2 ** j, 2 ** (Q - j)).sum(axis=1)
        for i, pre in enumerate(prefixes(j)):
            costs[j] += marg[i] * policy.action(pre).cost
    return costs


def evaluate_policy_exact(policy: PolicyTree, cfg: ChannelConfig, unit: str = "bits") -> RateReport:
    joint = joint_table(policy, cfg)
    pz = joint.sum(axis=0)
    h_s = entropy(joint.sum(axis=1), unit)
    h_s_given_z = float(entropy(joint, unit) - entropy(pz, unit))
    rate = max(0.0, float(h_s - h_s_given_z))
    costs = power_usage(policy, cfg)
    z_probs, posts = {}, {}
    for i, z in enumerate(prefixes(policy.Q)):
        z_probs[z] = float(pz[i])
        posts[z] = tuple(joint[:, i] / pz[i]) if pz[i] > 0 else tuple(np.full(cfg.M, np.nan))
    feasible = bool(np.all(costs <= cfg.budget + FEASIBILITY_TOL))
    return RateReport(rate, unit, tuple(float(c) for c in costs), cfg.budget, feasible, z_probs, posts)


def sensing_rate_q1(probe_powers, cfg: ChannelConfig, unit: str = "bits") -> float:
    """Single-slot rate h(mean_m p_m) - mean_m h(p_m), p_m = P(Z=1 | S=m)."""
    p = cfg.detect_probs(probe_powers)
    if p.size != cfg.M:
        raise ValueError(f"expected {cfg.M} powers, got {p.size}")
    return max(0.0, binary_entropy(p.mean(), unit) - float(np.mean(binary_entropy(p, unit))))


def _normalise_mixture(mixture):
    weights = np.array([w for w, _ in mixture], dtype=float)
    if weights.size == 0 or np.any(weights < 0) or not weights.sum() > 0:
        raise ValueError("mixture weights must be nonnegative with positive sum")
    return weights / weights.sum(), [tuple(x) for _, x in mixture]


def jensen_upper_q1(mixture, cfg: ChannelConfig, unit: str = "bits") -> float:
    """Upper bound h(P_Z(1)) - E_x[mean_m h(p_m(x))] for a finite mixture of
    single-slot actions given as ``[(weight, powers), ...]``."""
    w, actions = _normalise_mixture(mixture)
    ps = [cfg.detect_probs(x) for x in actions]
    pz1 = sum(wi * p.mean() for wi, p in zip(w, ps))
    cond = sum(wi * float(np.mean(binary_entropy(p, unit))) for wi, p in zip(w, ps))
    return binary_entropy(pz1, unit) - cond


def mixture_rate_q1(mixture, cfg: ChannelConfig, unit: str = "bits") -> float:
    """Exact I(S; Z | X) when X is drawn from a finite mixture (identical
    actions are merged, as X is observed only through its value)."""
    w, actions = _normalise_mixture(mixture)
    merged: dict = {}
    for wi, x in zip(w, actions):
        merged[x] = merged.get(x, 0.0) + wi
    return sum(wi * sensing_rate_q1(x, cfg, unit) for x, wi in merged.items())
