"""Independent oracles shared by the test modules.

Everything here is written with plain loops over states and feedback
sequences so it shares no code path with the package's vectorised versions.
"""
import itertools
import sys
import math

import numpy as np
import pytest

from beamsense.channel import BeamAction, ChannelConfig
from beamsense.policy import PolicyTree


def seqs(length):
    return list(itertools.product((0, 1), repeat=length))


def p_seq_given_state(policy, s, z, cfg):
    """P(z | S = s) by walking the tree slot by slot."""
    prob = 1.0
    for j, zj in enumerate(z):
        power = policy.action(tuple(z[:j])).powers[s]
        if power > 0:
            p1 = 1.0 - cfg.miss(power)
        else:
            p1 = cfg.false_alarm()
        prob *= p1 if zj == 1 else 1.0 - p1
    return prob


def oracle_posterior(policy, z, cfg):
    w = [p_seq_given_state(policy, s, z, cfg) / cfg.M for s in range(cfg.M)]
    tot = sum(w)
    return [x / tot for x in w]


def oracle_rate(policy, cfg):
    """I(S; Z^Q) in bits from the enumerated joint, one term at a time."""
    joint = {(s, z): p_seq_given_state(policy, s, z, cfg) / cfg.M
             for s in range(cfg.M) for z in seqs(cfg.Q)}
    pz = {z: sum(joint[(s, z)] for s in range(cfg.M)) for z in seqs(cfg.Q)}
    total = 0.0
    for (s, z), p in joint.items():
        if p > 0:
            total += p * math.log2(p / ((1.0 / cfg.M) * pz[z]))
    return total


def oracle_slot_costs(policy, cfg):
    out = [0.0] * cfg.Q
    for j in range(cfg.Q):
        for pre in seqs(j):
            p_pre = sum(p_seq_given_state(policy, s, pre, cfg) for s in range(cfg.M)) / cfg.M
            out[j] += p_pre * sum(policy.action(pre).powers)
    return out


def random_action(rng, M, max_power, p_on=0.5):
    on = rng.random(M) < p_on
    return BeamAction(tuple(float(x) for x in np.where(on, rng.uniform(0.05, max_power, M), 0.0)))


def random_policy(rng, cfg, max_power=None):
    max_power = max_power or 2.0 * cfg.budget + 1.0
    nodes = {}
    for j in range(cfg.Q):
        for pre in seqs(j):
            nodes[pre] = random_action(rng, cfg.M, max_power)
    return PolicyTree(nodes, cfg.Q)


def random_noisy_config(rng, M_max=8, Q_max=3):
    M = int(rng.integers(2, M_max + 1))
    Q = int(rng.integers(1, Q_max + 1))
    q = int(rng.integers(1, 4))
    # threshold above the chi-square median keeps P_FA < 0.5
    from scipy.stats import chi2
    nu = float(chi2.median(2 * q) * rng.uniform(1.05, 1.8))
    B = float(rng.uniform(0.5, 5.0))
    return ChannelConfig(M=M, q=q, Q=Q, nu=nu, B=B)


def noiseless(M, Q, q=1, B=1.0):
    return ChannelConfig(M=M, q=q, Q=Q, nu=0.0, B=B, fixed_error_rates=(0.0, 0.0))


def bisection_policy(M, Q, power):
    """Noiseless halving: probe the lower half of the surviving interval."""
    nodes = {}
    for j in range(Q):
        for pre in seqs(j):
            lo, hi = 0, M
            for zb in pre:
                mid = (lo + hi) // 2
                lo, hi = (lo, mid) if zb == 1 else (mid, hi)
            mid = (lo + hi) // 2
            nodes[pre] = BeamAction.uniform(M, range(lo, mid), power) if hi - lo > 1 else BeamAction.zeros(M)
    return PolicyTree(nodes, Q)


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
