"""Finite-horizon value iteration over reachable posteriors.

Actions are restricted to an :class:`ActionGrid`: probe the ``n`` most
likely beams with a common per-beam power ``b``.  Within that class the
search is exact.  The power constraint bounds the *expected* cost of every
slot, so it couples the decisions taken at different nodes.  Each node keeps
a Pareto frontier of ``(reward-to-go, expected cost of each remaining slot)``
over the deterministic subtrees rooted there, and the root picks the best
point that meets the budget in every slot.

Beliefs are stored sorted in decreasing order.  Under the top-n rule the
value of a belief depends only on the multiset of its entries, so sorted
beliefs are a canonical form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .belief import init_belief, rank_beams, update_belief
from .channel import BeamAction, ChannelConfig
from .exact_rate import FEASIBILITY_TOL, evaluate_policy_exact
from .infotheory import binary_entropy, entropy
from .policy import PolicyTree, all_prefixes

CANON_TOL = 1e-10
DEFAULT_CAP = 10 ** 6


class ExplosionError(RuntimeError):
    """A stage holds more reachable beliefs than the configured cap."""


@dataclass(frozen=True)
class ActionGrid:
    subset_sizes: tuple
    power_levels: tuple

    def __post_init__(self):
        sizes = tuple(sorted({int(n) for n in self.subset_sizes}))
        levels = tuple(sorted({float(b) for b in self.power_levels}))
        if not sizes or not levels:
            raise ValueError("action grid needs at least one size and one power level")
        if any(not math.isfinite(b) or b < 0 for b in levels):
            raise ValueError(f"power levels must be finite and >= 0: {levels}")
        object.__setattr__(self, "subset_sizes", sizes)
        object.__setattr__(self, "power_levels", levels)

    def actions(self, M: int) -> list[tuple[int, float]]:
        """Distinct (n, b) pairs sorted by (n, b); every zero-cost pair collapses to (0, 0.0)."""
        if any(n < 0 or n > M for n in self.subset_sizes):
            raise ValueError(f"subset sizes must lie in [0, {M}]")
        acts = {(0, 0.0)} if any(n == 0 for n in self.subset_sizes) or 0.0 in self.power_levels else set()
        for n in self.subset_sizes:
            for b in self.power_levels:
                if n > 0 and b > 0:
                    acts.add((n, b))
        return sorted(acts)

    @classmethod
    def default(cls, cfg: ChannelConfig, extra_levels=()) -> "ActionGrid":
        """All subset sizes with powers ``qB / 2^i`` down to ``qB / M``, plus ``extra_levels``."""
        levels = {0.0}
        if cfg.budget > 0:
            i = 0
            while 2 ** i <= cfg.M:
                levels.add(cfg.budget / 2 ** i)
                i += 1
        levels.update(float(b) for b in extra_levels)
        return cls(tuple(range(cfg.M + 1)), tuple(levels))


def _canon(k: np.ndarray) -> tuple[np.ndarray, tuple]:
    ks = np.sort(k)[::-1]
    return ks, tuple(np.round(ks / CANON_TOL).astype(np.int64).tolist())


def stage_reward(k, a: BeamAction, cfg: ChannelConfig, unit: str = "bits") -> float:
    """I(S; Z | belief k, action a) = H_k(S) - E_z[H_{k'}(S)]."""
    k = np.asarray(k, dtype=float)
    p1 = cfg.detect_probs(a.powers)
    pz1 = float(k @ p1)
    out = float(entropy(k, unit))
    for z, pz in ((1, pz1), (0, 1.0 - pz1)):
        if pz > 0:
            out -= pz * float(entropy(update_belief(k, a, z, cfg), unit))
    return max(0.0, out)


class _GridModel:
    """Per-action detection numbers and vectorised rewards on sorted beliefs."""

    def __init__(self, grid: ActionGrid, cfg: ChannelConfig):
        self.cfg = cfg
        self.actions = grid.actions(cfg.M)
        self.n = np.array([n for n, _ in self.actions])
        self.b = np.array([b for _, b in self.actions])
        self.cost = self.n * self.b
        self.fa = cfg.false_alarm()
        self.p1 = np.array([cfg.detect_prob(b) if n > 0 else self.fa for n, b in self.actions])
        self.h1 = binary_entropy(self.p1)
        self.h0 = binary_entropy(self.fa)

    def rewards(self, ks: np.ndarray):
        """Rewards and P(Z=1) of every grid action for sorted belief ``ks``."""
        cum = np.concatenate([[0.0], np.cumsum(ks)])
        K = np.clip(cum[self.n], 0.0, 1.0)
        pz1 = K * self.p1 + (1.0 - K) * self.fa
        r = binary_entropy(pz1) - (K * self.h1 + (1.0 - K) * self.h0)
        return np.maximum(r, 0.0), pz1

    def child(self, ks: np.ndarray, a: int, z: int, pz: float) -> np.ndarray:
        lik = np.full(ks.size, self.fa)
        lik[: self.n[a]] = self.p1[a]
        if z == 0:
            lik = 1.0 - lik
        return ks * lik / pz


@dataclass
class Frontier:
    """Non-dominated subtrees at one node.  ``costs[:, i]`` is the conditional
    expected cost of slot ``stage + i``; ``child`` holds frontier indices of
    the z=0 / z=1 successors (-1 when the successor is unreachable)."""

    values: np.ndarray
    costs: np.ndarray
    action: np.ndarray
    child: np.ndarray

    def best_within(self, budgets) -> tuple[float, int]:
        ok = np.all(self.costs <= np.asarray(budgets) + FEASIBILITY_TOL, axis=1)
        if not ok.any():
            return -math.inf, -1
        idx = np.flatnonzero(ok)
        i = idx[np.argmax(self.values[idx])]
        return float(self.values[i]), int(i)


@dataclass
class Node:
    belief: np.ndarray
    min_reach: float
    children: dict = field(default_factory=dict)   # action -> (p0, key0|None, p1, key1|None)
    frontier: Frontier | None = None


@dataclass
class ValueTable:
    """Per-stage map from canonical belief key to node data, plus the value and
    action chosen for each node on the extracted policy."""

    stages: list
    chosen: dict
    actions: list

    def dump(self) -> dict:
        out = []
        for j, stage in enumerate(self.stages):
            for key, node in stage.items():
                entry = {"stage": j, "belief": [float(x) for x in node.belief],
                         "frontier_size": int(node.frontier.values.size) if node.frontier is not None else 0}
                if (j, key) in self.chosen:
                    v, a = self.chosen[(j, key)]
                    entry["value"] = v
                    entry["action"] = {"n": self.actions[a][0], "b": self.actions[a][1]}
                out.append(entry)
        return {"nodes": out}


# ---------------------------------------------------------------- pareto filters

def _pareto_2d(v: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Indices of points not dominated in (max v, min c); first index wins ties."""
    if v.size == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((np.arange(v.size), -v, c))
    vs = v[order]
    keep = np.ones(v.size, dtype=bool)
    keep[1:] = vs[1:] > np.maximum.accumulate(vs)[:-1]
    return order[keep]


def _pareto_3d(v: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Pareto filter sweeping groups of equal ``c1`` in increasing order."""
    if v.size == 0:
        return np.zeros(0, dtype=int)
    kept = []
    st_c = np.zeros(0)
    st_v = np.zeros(0)
    uniq, inv = np.unique(c1, return_inverse=True)
    for g in range(uniq.size):
        idx = np.flatnonzero(inv == g)
        idx = idx[_pareto_2d(v[idx], c2[idx])]
        if st_c.size:
            pos = np.searchsorted(st_c, c2[idx], side="right") - 1
            dom = (pos >= 0) & (st_v[np.maximum(pos, 0)] >= v[idx])
            idx = idx[~dom]
        if idx.size == 0:
            continue
        kept.append(idx)
        all_c = np.concatenate([st_c, c2[idx]])
        all_v = np.concatenate([st_v, v[idx]])
        sel = _pareto_2d(all_v, all_c)
        order = np.argsort(all_c[sel], kind="stable")
        st_c, st_v = all_c[sel][order], all_v[sel][order]
    return np.sort(np.concatenate(kept)) if kept else np.zeros(0, dtype=int)


def _pareto_nd(v: np.ndarray, C: np.ndarray, block: int = 512) -> np.ndarray:
    if v.size == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((np.arange(v.size), *C.T[::-1], -v))
    vs, Cs = v[order], C[order]
    keep = np.zeros(v.size, dtype=bool)
    for start in range(0, v.size, block):
        sl = slice(start, min(start + block, v.size))
        prior = np.flatnonzero(keep[: sl.stop])
        cand = np.arange(sl.start, sl.stop)
        # earlier points (higher or equal value) dominate when no cost is larger
        dom = np.zeros(cand.size, dtype=bool)
        if prior.size:
            dom |= np.any(np.all(Cs[prior][:, None, :] <= Cs[cand][None, :, :], axis=2), axis=0)
        for i, ci in enumerate(cand):
            if dom[i]:
                continue
            earlier = cand[:i][keep[cand[:i]]]
            if earlier.size and np.any(np.all(Cs[earlier] <= Cs[ci], axis=1)):
                dom[i] = True
            else:
                keep[ci] = True
    return np.sort(order[keep])


def _pareto(v: np.ndarray, C: np.ndarray) -> np.ndarray:
    if C.shape[1] == 1:
        return _pareto_2d(v, C[:, 0])
    if C.shape[1] == 2:
        return _pareto_3d(v, C[:, 0], C[:, 1])
    return _pareto_nd(v, C)


# ---------------------------------------------------------------- forward pass

def _expand(grid: ActionGrid, cfg: ChannelConfig, cap: int):
    model = _GridModel(grid, cfg)
    k0, key0 = _canon(init_belief(cfg))
    stages = [{key0: Node(k0, 1.0)}]
    budget = cfg.budget
    for j in range(cfg.Q - 1):
        nxt: dict = {}
        for node in stages[j].values():
            _, pz1 = model.rewards(node.belief)
            for a in range(len(model.actions)):
                if node.min_reach * model.cost[a] > budget + FEASIBILITY_TOL:
                    continue
                entry = []
                for z, pz in ((0, 1.0 - pz1[a]), (1, pz1[a])):
                    if pz <= 0:
                        entry.extend([0.0, None])
                        continue
                    ks, key = _canon(model.child(node.belief, a, z, pz))
                    reach = node.min_reach * pz
                    if key in nxt:
                        nxt[key].min_reach = min(nxt[key].min_reach, reach)
                    else:
                        nxt[key] = Node(ks, reach)
                        if len(nxt) > cap:
                            raise ExplosionError(f"stage {j + 1} exceeds {cap} beliefs")
                    entry.extend([float(pz), key])
                node.children[a] = tuple(entry)
        stages.append(nxt)
    return model, stages


def reachable_beliefs(grid: ActionGrid, cfg: ChannelConfig, cap: int = DEFAULT_CAP) -> list[list[np.ndarray]]:
    """Sorted beliefs reachable at stages 0..Q-1 under budget-admissible grid actions."""
    _, stages = _expand(grid, cfg, cap)
    return [[n.belief for n in stage.values()] for stage in stages]


# ---------------------------------------------------------------- backward pass

_EMPTY = None


def _child_frontier(stage: dict, key, width: int):
    if key is None:
        return np.zeros(1), np.zeros((1, width)), np.array([-1])
    f = stage[key].frontier
    return f.values, f.costs, np.arange(f.values.size)


def _root_choice(V: np.ndarray, C: np.ndarray, budget: float) -> np.ndarray:
    # the root only needs its best budget-feasible subtree
    feas = np.flatnonzero(np.all(C <= budget + FEASIBILITY_TOL, axis=1))
    if feas.size == 0:
        return feas
    return np.array([feas[np.argmax(V[feas])]])   # first maximum -> smallest (n, b)


def _dominance_max(C: np.ndarray, V: np.ndarray, T: np.ndarray) -> np.ndarray:
    """For every threshold row ``T[i]``, the index of the largest ``V[k]`` with
    ``C[k] <= T[i]`` componentwise (-1 if none).  One or two cost columns."""
    out = np.full(T.shape[0], -1, dtype=int)
    if C.shape[1] == 1:
        order = np.argsort(C[:, 0], kind="stable")
        run = np.maximum.accumulate(V[order])
        # position of the running maximum inside ``order``
        arg = np.maximum.accumulate(np.where(V[order] >= run, np.arange(order.size), 0))
        cnt = np.searchsorted(C[order, 0], T[:, 0], side="right")
        hit = cnt > 0
        out[hit] = order[arg[cnt[hit] - 1]]
        return out
    # sweep the first cost, Fenwick prefix-max over ranks of the second
    order = np.argsort(C[:, 0], kind="stable")
    cb = np.unique(C[:, 1])
    rank = np.searchsorted(cb, C[:, 1]) + 1
    size = cb.size
    tree_v = [-math.inf] * (size + 1)
    tree_k = [-1] * (size + 1)
    qcnt = np.searchsorted(cb, T[:, 1], side="right")
    ca_sorted = C[order, 0]
    ptr = 0
    for i in np.argsort(T[:, 0], kind="stable"):
        ta = T[i, 0]
        while ptr < order.size and ca_sorted[ptr] <= ta:
            k = int(order[ptr])
            v = float(V[k])
            j = int(rank[k])
            while j <= size:
                if v > tree_v[j]:
                    tree_v[j], tree_k[j] = v, k
                j += j & -j
            ptr += 1
        j, bv, bk = int(qcnt[i]), -math.inf, -1
        while j > 0:
            if tree_v[j] > bv:
                bv, bk = tree_v[j], tree_k[j]
            j -= j & -j
        out[i] = bk
    return out


def _best_pair(p0, V0, C0, p1, V1, C1, limit: float, floor: float = -math.inf):
    """Maximise ``p0 V0[i] + p1 V1[k]`` subject to ``p0 C0[i] + p1 C1[k] <= limit``
    componentwise, without forming the full product.  Only values above
    ``floor`` are of interest.  Returns ``(value, i, k)`` or None."""
    if p1 <= 0 or p0 <= 0:
        # only one branch carries probability
        if p1 <= 0:
            ok = np.flatnonzero(np.all(p0 * C0 <= limit, axis=1))
            if ok.size == 0:
                return None
            i = ok[np.argmax(V0[ok])]
            return p0 * V0[i], int(i), 0
        ok = np.flatnonzero(np.all(p1 * C1 <= limit, axis=1))
        if ok.size == 0:
            return None
        k = ok[np.argmax(V1[ok])]
        return p1 * V1[k], 0, int(k)
    rows = np.flatnonzero(p0 * V0 + p1 * V1.max() > floor)
    if rows.size == 0:
        return None
    if C0.shape[1] == 0:
        i, k = rows[np.argmax(V0[rows])], int(np.argmax(V1))
        return p0 * V0[i] + p1 * V1[k], int(i), k
    ks = _dominance_max(C1, V1, (limit - p0 * C0[rows]) / p1)
    ok = ks >= 0
    if not ok.any():
        return None
    rows, ks = rows[ok], ks[ok]
    tot = p0 * V0[rows] + p1 * V1[ks]
    best = int(np.argmax(tot))
    if not tot[best] > floor:
        return None
    return float(tot[best]), int(rows[best]), int(ks[best])


def _root_frontier(model, node, stage1: dict, r: np.ndarray, ok: np.ndarray, width: int, budget: float) -> Frontier:
    """Best budget-feasible subtree at the root."""
    limit = budget + FEASIBILITY_TOL
    acts = np.flatnonzero(ok)
    kids = {}
    bound = np.empty(acts.size)
    for i, a in enumerate(acts):
        p0, key0, p1, key1 = node.children[a]
        kids[a] = (p0, _child_frontier(stage1, key0, width), p1, _child_frontier(stage1, key1, width))
        bound[i] = r[a] + p0 * kids[a][1][0].max() + p1 * kids[a][3][0].max()
    # promising actions first so the incumbent prunes the rest early
    best = None
    for i in np.argsort(-bound, kind="stable"):
        a = acts[i]
        if best is not None and bound[i] < best[0]:
            break
        p0, (V0, C0, I0), p1, (V1, C1, I1) = kids[a]
        floor = best[0] - r[a] if best is not None else -math.inf
        res = _best_pair(p0, V0, C0, p1, V1, C1, limit, floor)
        if res is None:
            continue
        v = r[a] + res[0]
        if best is None or v > best[0]:
            i0, i1 = res[1], res[2]
            costs = np.concatenate([[model.cost[a]], p0 * C0[i0] + p1 * C1[i1]])
            best = (v, a, costs, (I0[i0], I1[i1]))
    if best is None:
        return Frontier(np.zeros(0), np.zeros((0, width + 1)), np.zeros(0, dtype=int), np.zeros((0, 2), dtype=int))
    v, a, costs, ch = best
    return Frontier(np.array([v]), costs[None, :], np.array([a]), np.array([ch]))


def _backward(model: _GridModel, stages: list, cfg: ChannelConfig) -> None:
    Q, budget = cfg.Q, cfg.budget
    for j in range(Q - 1, -1, -1):
        width = Q - j - 1
        for node in stages[j].values():
            r, _ = model.rewards(node.belief)
            ok = node.min_reach * model.cost <= budget + FEASIBILITY_TOL
            if j == Q - 1:
                acts = np.flatnonzero(ok)
                V, C = r[acts], model.cost[acts][:, None]
                keep = _root_choice(V, C, budget) if j == 0 else _pareto(V, C)
                node.frontier = Frontier(V[keep], C[keep], acts[keep], np.full((keep.size, 2), -1))
                continue
            if j == 0:
                node.frontier = _root_frontier(model, node, stages[1], r, ok, width, budget)
                continue
            parts_v, parts_c, parts_a, parts_ch = [], [], [], []
            for a in np.flatnonzero(ok):
                p0, key0, p1, key1 = node.children[a]
                V0, C0, I0 = _child_frontier(stages[j + 1], key0, width)
                V1, C1, I1 = _child_frontier(stages[j + 1], key1, width)
                V = (r[a] + p0 * V0[:, None] + p1 * V1[None, :]).ravel()
                C = (p0 * C0[:, None, :] + p1 * C1[None, :, :]).reshape(-1, width)
                ch = np.stack(np.broadcast_arrays(I0[:, None], I1[None, :]), axis=-1).reshape(-1, 2)
                feas = np.all(node.min_reach * C <= budget + FEASIBILITY_TOL, axis=1)
                V, C, ch = V[feas], C[feas], ch[feas]
                keep = _pareto(V, C)
                V, C, ch = V[keep], C[keep], ch[keep]
                parts_v.append(V)
                parts_c.append(np.column_stack([np.full(V.size, model.cost[a]), C]))
                parts_a.append(np.full(V.size, a))
                parts_ch.append(ch)
            V = np.concatenate(parts_v)
            C = np.concatenate(parts_c)
            A = np.concatenate(parts_a)
            CH = np.concatenate(parts_ch)
            keep = _pareto(V, C)
            node.frontier = Frontier(V[keep], C[keep], A[keep], CH[keep])


def _extract(model: _GridModel, stages: list, cfg: ChannelConfig):
    Q = cfg.Q
    nodes: dict = {}
    chosen: dict = {}
    root_key = next(iter(stages[0]))
    # (prefix, stage key, frontier index, actual belief)
    todo = [((), root_key, 0, init_belief(cfg))]
    while todo:
        pre, key, idx, k = todo.pop()
        node = stages[len(pre)][key]
        f = node.frontier
        a = int(f.action[idx])
        n, b = model.actions[a]
        chosen[(len(pre), key)] = (float(f.values[idx]), a)
        beams = rank_beams(k)[:n]
        act = BeamAction.uniform(cfg.M, beams, b) if n > 0 else BeamAction.zeros(cfg.M)
        nodes[pre] = act
        if len(pre) == Q - 1:
            continue
        p0, key0, p1, key1 = node.children[a]
        for z, pz, ck in ((0, p0, key0), (1, p1, key1)):
            child_idx = int(f.child[idx][z])
            if ck is None or child_idx < 0 or pz <= 0:
                for p in all_prefixes(Q):
                    if len(p) > len(pre) and p[: len(pre) + 1] == pre + (z,):
                        nodes[p] = BeamAction.zeros(cfg.M)
                continue
            todo.append((pre + (z,), ck, child_idx, update_belief(k, act, z, cfg)))
    return PolicyTree(nodes, Q), chosen


@dataclass
class DPResult:
    outer_value: float
    policy: PolicyTree
    table: ValueTable
    grid: ActionGrid
    feasible: bool
    replay_value: float

    def to_record(self) -> dict:
        return {"outer_value": self.outer_value, "replay_value": self.replay_value,
                "feasible": self.feasible, "label": "outer bound within the grid class",
                "grid": {"subset_sizes": list(self.grid.subset_sizes),
                         "power_levels": list(self.grid.power_levels)},
                "policy": self.policy.to_dict()}


def value_iteration(grid: ActionGrid, cfg: ChannelConfig, cap: int = DEFAULT_CAP) -> DPResult:
    """Best budget-feasible grid policy; returns its value (bits), the policy
    tree obtained by forward replay, and the value table."""
    model, stages = _expand(grid, cfg, cap)
    _backward(model, stages, cfg)
    root = next(iter(stages[0].values()))
    if root.frontier.values.size == 0:
        raise ValueError("no budget-feasible action in the grid (include n=0)")
    policy, chosen = _extract(model, stages, cfg)
    report = evaluate_policy_exact(policy, cfg)
    table = ValueTable(stages, chosen, model.actions)
    return DPResult(float(root.frontier.values[0]), policy, table, grid, report.feasible, report.sensing_rate)


def frontier_value(table: ValueTable, stage: int, key, budgets) -> float:
    """Constrained reward-to-go of a node: best subtree whose conditional slot
    costs stay within ``budgets``."""
    return table.stages[stage][key].frontier.best_within(budgets)[0]
