"""Deterministic feedback-indexed policies."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .channel import BeamAction


class MissingPrefixError(KeyError):
    pass


def prefixes(depth: int):
    """All binary tuples of length ``depth`` in lexicographic order."""
    return list(product((0, 1), repeat=depth))


def all_prefixes(Q: int):
    """Prefixes of length 0..Q-1, shortest first."""
    return [p for j in range(Q) for p in prefixes(j)]


@dataclass(frozen=True)
class PolicyTree:
    """Map from feedback prefix ``z^{j-1}`` (a tuple of bits) to the slot-j action."""

    nodes: dict
    Q: int

    def __post_init__(self):
        nodes = {tuple(int(b) for b in k): v for k, v in self.nodes.items()}
        object.__setattr__(self, "nodes", nodes)
        Ms = {a.M for a in nodes.values()}
        if len(Ms) > 1:
            raise ValueError(f"actions disagree on beam count: {sorted(Ms)}")
        if any(len(k) >= self.Q for k in nodes):
            raise ValueError("prefix longer than Q-1 in policy")

    @property
    def M(self) -> int:
        return next(iter(self.nodes.values())).M

    def action(self, prefix) -> BeamAction:
        key = tuple(int(b) for b in prefix)
        try:
            return self.nodes[key]
        except KeyError:
            raise MissingPrefixError(f"policy has no action for prefix {key}") from None

    def is_complete(self) -> bool:
        return all(p in self.nodes for p in all_prefixes(self.Q))

    def permuted(self, perm) -> "PolicyTree":
        """Relabel beams: new beam ``perm[m]`` gets old beam ``m``'s power."""
        out = {}
        for k, a in self.nodes.items():
            p = [0.0] * a.M
            for m, v in enumerate(a.powers):
                p[perm[m]] = v
            out[k] = BeamAction(tuple(p))
        return PolicyTree(out, self.Q)

    @classmethod
    def constant(cls, action: BeamAction, Q: int) -> "PolicyTree":
        return cls({p: action for p in all_prefixes(Q)}, Q)

    def to_dict(self) -> dict:
        return {"Q": self.Q,
                "nodes": {"".join(map(str, k)): list(a.powers)
                          for k, a in sorted(self.nodes.items(), key=lambda kv: (len(kv[0]), kv[0]))}}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyTree":
        return cls({tuple(int(c) for c in k): BeamAction(tuple(v)) for k, v in d["nodes"].items()},
                   int(d["Q"]))
