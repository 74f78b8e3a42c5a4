"""Posterior coded beam acquisition (inner bound).

Slot ``j`` probes ``n[z^{j-1}]`` of the ``d[z^{j-1}]`` most likely beams with
per-beam power ``b[z^{j-1}]``.  While the detector is informative
(P_FA < 0.5 and P_MD(b) < 0.5) the most likely beams are exactly the beams
whose alignment history equals the feedback history, so the whole scheme
is described by integer cardinalities and the 2x2 law P(z | t).

Two sets of class sizes are tracked:

* ``m_lit[t^j]`` follows the closed recursion
  ``m[t^j] = (2 t_j - 1) n[t^{j-1}] + (1 - t_j) m[t^{j-1}]``, which counts
  classes as if the feedback prefix always equalled ``t^{j-1}``;
* ``m[(z^{j-1}, t^j)]`` is the size of the alignment class ``t^j`` under the
  actions actually taken along feedback path ``z^{j-1}``.  Only beams of the
  class matching the feedback are probed, so every other class keeps
  ``t_j = 0``.

The two agree whenever ``t^{j-1} = z^{j-1}``.  ``scheme_rate`` and
``scheme_power_profile`` use the path-resolved sizes, which give the exact
mutual information and expected cost of the induced policy;
``closed_form_objective`` evaluates the closed recursion for comparison.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .belief import DegenerateEvidenceError, belief_trajectory, rank_beams
from .channel import BeamAction, ChannelConfig
from .exact_rate import FEASIBILITY_TOL
from .policy import PolicyTree, all_prefixes, prefixes

LOG2 = math.log(2.0)


class SchemeValidityWarning(UserWarning):
    """Detector outside P_FA < 0.5, P_MD < 0.5: the top-posterior set no
    longer coincides with the alignment class matching the feedback."""


def n_update(d: int, n0: int) -> int:
    """Beams probed next given ``d`` candidate beams and initial count ``n0``."""
    if d < 0 or n0 < 1:
        raise ValueError(f"need d >= 0 and n0 >= 1, got d={d}, n0={n0}")
    if d == 0:
        return 0
    return max(min(d // 2, n0), 1)


@dataclass(frozen=True)
class CardinalityTables:
    n: dict        # prefix z^{j-1} -> beams probed at slot j
    d: dict        # prefix z^j -> candidate set size (depth 0..Q)
    m_lit: dict    # t^j -> closed-recursion class size (depth 0..Q)
    m: dict        # (z^{j-1}, t^j) -> class size along feedback path (depth 1..Q)


def cardinality_recursion(n0: int, cfg: ChannelConfig, n_override: dict | None = None) -> CardinalityTables:
    if not 1 <= n0 <= cfg.M:
        raise ValueError(f"n0 must lie in [1, {cfg.M}], got {n0}")
    Q = cfg.Q
    n, d = {(): n0}, {(): cfg.M}
    for j in range(1, Q + 1):
        for z in prefixes(j):
            parent = z[:-1]
            d[z] = n[parent] if z[-1] == 1 else d[parent] - n[parent]
            if j < Q:
                if n_override is not None and z in n_override:
                    n[z] = int(n_override[z])
                    if not 0 <= n[z] <= d[z]:
                        raise ValueError(f"n[{z}]={n[z]} outside [0, d={d[z]}]")
                else:
                    n[z] = n_update(d[z], n0)
    m_lit = {(): cfg.M}
    for j in range(1, Q + 1):
        for t in prefixes(j):
            parent = t[:-1]
            m_lit[t] = n[parent] if t[-1] == 1 else m_lit[parent] - n[parent]
    m = {}
    for j in range(1, Q + 1):
        for z in prefixes(j - 1):
            for t in prefixes(j):
                prev = m[(z[:-1], t[:-1])] if j > 1 else cfg.M
                probed = n[z] if t[:-1] == z else 0
                m[(z, t)] = probed if t[-1] == 1 else prev - probed
    return CardinalityTables(n, d, m_lit, m)


def alignment_channel(b_prev: float, cfg: ChannelConfig) -> np.ndarray:
    """2x2 matrix ``W[t, z] = P(Z = z | T = t)`` for per-beam power ``b_prev``."""
    fa = cfg.false_alarm()
    md = cfg.miss(b_prev) if b_prev > 0 else 1.0 - fa
    return np.array([[1.0 - fa, fa], [md, 1.0 - md]])


def feedback_given_alignment(t: int, b_prev: float, cfg: ChannelConfig) -> np.ndarray:
    """``(P(Z=0 | t), P(Z=1 | t))``."""
    if t not in (0, 1):
        raise ValueError(f"alignment bit must be 0 or 1, got {t}")
    if t == 1 and not b_prev > 0:
        raise ValueError("aligned slot requires positive power")
    return alignment_channel(b_prev, cfg)[t]


@dataclass(frozen=True)
class SchemeParams:
    n0: int
    b: dict                      # prefix z^{j-1} -> per-beam power, all prefixes of length < Q
    n_override: dict | None = None

    def __post_init__(self):
        b = {tuple(int(x) for x in k): float(v) for k, v in self.b.items()}
        object.__setattr__(self, "b", b)
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if () not in b or not b[()] > 0:
            raise ValueError("b for the empty prefix must be positive")
        for k, v in b.items():
            if not math.isfinite(v) or v < b[()] - 1e-12:
                raise ValueError(f"b[{k}]={v} below b[()]={b[()]}")

    @classmethod
    def uniform(cls, n0: int, Q: int, b0: float) -> "SchemeParams":
        return cls(n0, {p: b0 for p in all_prefixes(Q)})

    def tables(self, cfg: ChannelConfig) -> CardinalityTables:
        missing = [p for p in all_prefixes(cfg.Q) if p not in self.b]
        if missing:
            raise ValueError(f"no power given for prefixes {missing}")
        return cardinality_recursion(self.n0, cfg, self.n_override)

    def to_dict(self) -> dict:
        out = {"n0": self.n0,
               "b": {"".join(map(str, k)): v for k, v in sorted(self.b.items(), key=lambda kv: (len(kv[0]), kv[0]))}}
        if self.n_override:
            out["n_override"] = {"".join(map(str, k)): v for k, v in self.n_override.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SchemeParams":
        conv = lambda s: tuple(int(c) for c in s)
        over = d.get("n_override")
        return cls(int(d["n0"]), {conv(k): float(v) for k, v in d["b"].items()},
                   {conv(k): int(v) for k, v in over.items()} if over else None)

    def sort_key(self):
        return (self.n0, tuple(v for _, v in sorted(self.b.items(), key=lambda kv: (len(kv[0]), kv[0]))))


def _channels(params: SchemeParams, cfg: ChannelConfig) -> dict:
    return {p: alignment_channel(params.b[p], cfg) for p in all_prefixes(cfg.Q)}


def _paths(params: SchemeParams, cfg: ChannelConfig, tabs: CardinalityTables, W: dict, depth: int):
    """Yield ``(z, t, m, m_lit, prod_j P(z_j | t_j))`` for all pairs of length ``depth``."""
    for z in prefixes(depth):
        for t in prefixes(depth):
            prob = 1.0
            for j in range(depth):
                prob *= W[z[:j]][t[j], z[j]]
            if depth == 0:
                m = cfg.M
            else:
                m = tabs.m[(z[:-1], t)]
            yield z, t, m, tabs.m_lit[t], prob


def _objective(params, cfg, closed_form: bool) -> float:
    tabs = params.tables(cfg)
    W = _channels(params, cfg)
    Q, M = cfg.Q, cfg.M
    by_z: dict = {}
    for z, t, m, m_lit, prob in _paths(params, cfg, tabs, W, Q):
        size = m_lit if closed_form else m
        if size > 0 and prob > 0:
            by_z.setdefault(z, []).append((size, prob))
    total = 0.0
    for terms in by_z.values():
        denom = sum(s * p for s, p in terms)
        for s, p in terms:
            total += (s / M) * p * math.log(M * p / denom)
    return total / LOG2


def scheme_validity(params: SchemeParams, cfg: ChannelConfig) -> list[str]:
    """Reasons the scheme leaves its validity region (empty list if valid)."""
    problems = []
    if not cfg.false_alarm() < 0.5:
        problems.append(f"P_FA={cfg.false_alarm():.4g} >= 0.5")
    tabs = params.tables(cfg)
    for p in all_prefixes(cfg.Q):
        if tabs.n[p] > 0 and not cfg.miss(params.b[p]) < 0.5:
            problems.append(f"P_MD(b[{p}])={cfg.miss(params.b[p]):.4g} >= 0.5")
    return problems


def scheme_rate(params: SchemeParams, cfg: ChannelConfig, *, warn: bool = True) -> float:
    """Sensing rate (bits) of the scheme: exact I(S; Z^Q | X^Q)."""
    if warn:
        problems = scheme_validity(params, cfg)
        if problems:
            warnings.warn("outside scheme validity: " + "; ".join(problems), SchemeValidityWarning,
                          stacklevel=2)
    return max(0.0, _objective(params, cfg, closed_form=False))


def closed_form_objective(params: SchemeParams, cfg: ChannelConfig) -> float:
    """Objective with the closed-recursion class sizes ``m_lit[t^Q]``."""
    return _objective(params, cfg, closed_form=True)


def _profile(params, cfg, closed_form: bool) -> np.ndarray:
    tabs = params.tables(cfg)
    W = _channels(params, cfg)
    out = np.zeros(cfg.Q)
    for j in range(cfg.Q):
        for z, t, m, m_lit, prob in _paths(params, cfg, tabs, W, j):
            size = m_lit if closed_form else m
            out[j] += tabs.n[z] * params.b[z] * (size / cfg.M * prob)   # weight is 1.0 at slot 1
    return out


def scheme_power_profile(params: SchemeParams, cfg: ChannelConfig, closed_form: bool = False) -> np.ndarray:
    """Expected per-slot cost; feasible iff every entry <= q*B."""
    return _profile(params, cfg, closed_form)


def is_feasible(params: SchemeParams, cfg: ChannelConfig) -> bool:
    return bool(np.all(scheme_power_profile(params, cfg) <= cfg.budget + FEASIBILITY_TOL))


def induced_policy(params: SchemeParams, cfg: ChannelConfig) -> PolicyTree:
    """Realize the scheme with explicit index sets: at each prefix rank beams by
    posterior (ties to the lowest index), keep the top ``d`` and probe the first
    ``n`` of them.  Unreachable prefixes get the all-zero action."""
    tabs = params.tables(cfg)
    nodes: dict = {}
    for pre in all_prefixes(cfg.Q):
        partial = PolicyTree(dict(nodes), cfg.Q) if nodes else None
        try:
            k = belief_trajectory(partial, pre, cfg) if pre else np.full(cfg.M, 1.0 / cfg.M)
        except DegenerateEvidenceError:
            nodes[pre] = BeamAction.zeros(cfg.M)
            continue
        top_d = rank_beams(k)[:tabs.d[pre]]
        nodes[pre] = BeamAction.uniform(cfg.M, top_d[:tabs.n[pre]], params.b[pre])
    return PolicyTree(nodes, cfg.Q)


# --------------------------------------------------------------------------- optimizer

@dataclass(frozen=True)
class SearchControl:
    starts: int = 4
    max_sweeps: int = 60
    init_step: float = 0.25      # relative to q*B/n0
    min_step: float = 1e-4
    seed: int = 0


@dataclass
class SchemeResult:
    params: SchemeParams | None
    rate: float
    profile: np.ndarray
    log: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {"rate": self.rate,
                "params": self.params.to_dict() if self.params is not None else None,
                "profile": [float(c) for c in self.profile]}


def _min_valid_power(cfg: ChannelConfig, hi: float) -> float:
    """Smallest per-beam power with P_MD < 0.5 (assumes P_MD(hi) < 0.5)."""
    if cfg.fixed_error_rates is not None:
        return hi * 1e-6
    f = lambda b: cfg.miss(b) - 0.5
    if f(1e-12) < 0:
        return 1e-12
    root = brentq(f, 1e-12, hi, xtol=1e-12 * max(1.0, hi))
    return min(hi, root * (1 + 1e-9) + 1e-12)


class _Problem:
    """Box/ordering/budget projection and objective for a fixed n0."""

    def __init__(self, cfg: ChannelConfig, n0: int, b_lo: float):
        self.cfg, self.n0 = cfg, n0
        self.b_hi = cfg.budget / n0
        self.b_lo = b_lo
        self.tabs = cardinality_recursion(n0, cfg)
        # powers only matter where beams are probed
        self.active = [p for p in all_prefixes(cfg.Q) if p and self.tabs.n[p] > 0]
        self.keys = [()] + self.active

    def params(self, x) -> SchemeParams:
        b = {p: float(x[0]) for p in all_prefixes(self.cfg.Q)}
        for p, v in zip(self.active, x[1:]):
            b[p] = float(v)
        return SchemeParams(self.n0, b)

    def project(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[0] = min(max(x[0], self.b_lo), self.b_hi)
        x[1:] = np.maximum(x[1:], x[0])
        cfg = self.cfg
        for depth in range(1, cfg.Q):
            idx = [i for i, p in enumerate(self.active, start=1) if len(p) == depth]
            if not idx:
                continue
            prof = scheme_power_profile(self.params(x), cfg)
            if prof[depth] <= cfg.budget:
                continue
            base_x = x.copy()
            base_x[idx] = x[0]
            base = scheme_power_profile(self.params(base_x), cfg)[depth]
            excess = prof[depth] - base
            s = max(0.0, min(1.0, (cfg.budget - base) / excess)) if excess > 0 else 0.0
            x[idx] = x[0] + s * (x[idx] - x[0]) * (1 - 1e-12)
        return x

    def value(self, x) -> float:
        return scheme_rate(self.params(x), self.cfg, warn=False)


def _coordinate_search(prob: _Problem, x0, ctl: SearchControl, log: list, tag) -> tuple[np.ndarray, float]:
    x = prob.project(x0)
    fx = prob.value(x)
    step = ctl.init_step * prob.b_hi
    for sweep in range(ctl.max_sweeps):
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] += sgn * step
                y = prob.project(y)
                fy = prob.value(y)
                if fy > fx + 1e-13:
                    x, fx, improved = y, fy, True
                    break
        log.append({"n0": prob.n0, "start": tag, "sweep": sweep, "step": step, "rate": fx})
        if not improved:
            step *= 0.5
            if step < ctl.min_step * prob.b_hi:
                break
    return x, fx


def optimize_scheme(cfg: ChannelConfig, search: SearchControl = SearchControl()) -> SchemeResult:
    """Maximize the scheme rate over n0 and the per-prefix powers.

    Only operating points inside the validity region are explored, so the
    returned scheme is always a top-posterior policy.
    """
    log: list = []
    if not cfg.budget > 0 or not cfg.pfa_ok:
        return SchemeResult(None, 0.0, np.zeros(cfg.Q), log)
    rng = np.random.default_rng(search.seed)
    best = None
    for n0 in range(1, cfg.M + 1):
        hi = cfg.budget / n0
        if not cfg.miss(hi) < 0.5:
            continue
        prob = _Problem(cfg, n0, _min_valid_power(cfg, hi))
        starts = [np.full(len(prob.keys), hi)]
        for _ in range(max(0, search.starts - 1)):
            x = np.empty(len(prob.keys))
            x[0] = rng.uniform(prob.b_lo, hi)
            x[1:] = x[0] + rng.uniform(0.0, 2.0 * hi, size=x.size - 1)
            starts.append(x)
        for s_idx, x0 in enumerate(starts):
            x, fx = _coordinate_search(prob, x0, search, log, s_idx)
            cand = (fx, prob.params(x))
            if best is None or fx > best[0] + 1e-13 or (
                    abs(fx - best[0]) <= 1e-13 and cand[1].sort_key() < best[1].sort_key()):
                best = cand
    if best is None:
        return SchemeResult(None, 0.0, np.zeros(cfg.Q), log)
    rate, params = best
    return SchemeResult(params, rate, scheme_power_profile(params, cfg), log)
