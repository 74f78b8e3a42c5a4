"""Monte Carlo cross-checks and experiment orchestration."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .belief import belief_trajectory
from .channel import (BeamAction, ChannelConfig, detection_statistics, gaussian_codeword_md)
from .dp_outer import ActionGrid, value_iteration
from .exact_rate import evaluate_policy_exact, sensing_rate_q1
from .inner_scheme import (SchemeParams, cardinality_recursion, induced_policy, optimize_scheme,
                           scheme_power_profile, scheme_rate, SearchControl)
from .policy import PolicyTree, all_prefixes, prefixes

RNG_ALGORITHM = "numpy.random.Philox (Philox4x64-10), streams via SeedSequence(seed, spawn_key=(point, ...))"
MODES = ("q1_sweep", "inner_opt", "dp_outer", "simulate", "validate")
PROVENANCE = ("exact", "monte_carlo", "optimized", "bound")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------------------------------------------ Monte Carlo

@dataclass(frozen=True)
class MCEstimate:
    estimate: float    # jackknife bias-corrected mutual information (bits)
    std_error: float   # jackknife
    plugin: float      # raw plug-in value; biased upward by about (cells - 1) / (2 n ln 2)
    trials: int


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def plugin_mi_jackknife(counts) -> MCEstimate:
    """I(A; B) in bits from a contingency table: plug-in value plus the
    delete-one jackknife (bias correction and standard error), computed per
    occupied cell rather than per sample."""
    N = np.asarray(counts, dtype=float)
    n = N.sum()
    if n < 2:
        raise ValueError("need at least two samples")
    Na, Nb = N.sum(axis=1), N.sum(axis=0)
    T = _xlogx(N).sum() - _xlogx(Na).sum() - _xlogx(Nb).sum() + _xlogx(n)
    theta = T / n
    d = lambda x: _xlogx(x) - _xlogx(x - 1)
    cells = np.argwhere(N > 0)
    c = N[cells[:, 0], cells[:, 1]]
    T_loo = (T - d(c) + d(Na[cells[:, 0]]) + d(Nb[cells[:, 1]]) - d(n))
    th_loo = T_loo / (n - 1)
    mean_loo = float((c * th_loo).sum() / n)
    var = (n - 1) / n * float((c * (th_loo - mean_loo) ** 2).sum())
    ln2 = math.log(2.0)
    return MCEstimate((n * theta - (n - 1) * mean_loo) / ln2, math.sqrt(max(var, 0.0)) / ln2,
                      max(theta, 0.0) / ln2, int(n))


def scheme_set_policy(params: SchemeParams, cfg: ChannelConfig) -> PolicyTree:
    """The scheme realised with explicit candidate sets: probe the lowest
    ``n`` indices of the candidate set; on z=1 keep the probed beams, on z=0
    remove them."""
    tabs = cardinality_recursion(params.n0, cfg, params.n_override)
    cand = {(): list(range(cfg.M))}
    nodes = {}
    for pre in all_prefixes(cfg.Q):
        probed = cand[pre][: tabs.n[pre]]
        nodes[pre] = BeamAction.uniform(cfg.M, probed, params.b[pre])
        cand[pre + (1,)] = probed
        cand[pre + (0,)] = [m for m in cand[pre] if m not in probed]
    return PolicyTree(nodes, cfg.Q)


def simulate_blocks(policy: PolicyTree, cfg: ChannelConfig, trials: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``trials`` independent blocks with analytic feedback.
    Returns the AoD indices and the feedback sequences encoded as integers
    (first slot most significant)."""
    Q = policy.Q
    p1 = {pre: cfg.detect_probs(policy.action(pre).powers) for pre in all_prefixes(Q)}
    table = np.stack([p1[pre] for pre in all_prefixes(Q)])   # node id = 2^j - 1 + code
    s = rng.integers(cfg.M, size=trials)
    code = np.zeros(trials, dtype=np.int64)
    for j in range(Q):
        node = (2 ** j - 1) + code
        z = rng.random(trials) < table[node, s]
        code = 2 * code + z
    return s, code


def mc_sensing_rate(policy_or_scheme, cfg: ChannelConfig, trials: int, seed: int) -> MCEstimate:
    if trials < 1000:
        raise ValueError("mc_sensing_rate needs at least 1000 trials")
    if isinstance(policy_or_scheme, SchemeParams):
        policy = scheme_set_policy(policy_or_scheme, cfg)
    else:
        policy = policy_or_scheme
    s, code = simulate_blocks(policy, cfg, trials, make_rng(seed))
    counts = np.zeros((cfg.M, 2 ** policy.Q))
    np.add.at(counts, (s, code), 1.0)
    return plugin_mi_jackknife(counts)


def mc_fa_md(cfg: ChannelConfig, power: float, trials: int, seed: int,
             signal_kind: str = "pilot") -> dict:
    """Empirical FA/MD of the waveform-level energy detector next to the
    analytic chi-square values."""
    if trials < 10_000:
        raise ValueError("mc_fa_md needs at least 10^4 trials")
    rng = make_rng(seed)
    d0 = detection_statistics(0.0, signal_kind, cfg.q, trials, rng)
    d1 = detection_statistics(power, signal_kind, cfg.q, trials, rng)
    fa_hat = float(np.mean(d0 > cfg.nu))
    md_hat = float(np.mean(d1 <= cfg.nu))
    fa, md = cfg.false_alarm(), cfg.miss(power)
    out = {
        "signal_kind": signal_kind, "power": power, "trials": trials,
        "p_fa_mc": fa_hat, "p_fa_se": math.sqrt(fa * (1 - fa) / trials), "p_fa": fa,
        "p_md_mc": md_hat, "p_md_se": math.sqrt(md * (1 - md) / trials), "p_md": md,
        "md_deviation": md_hat - md,
    }
    if signal_kind == "gaussian_codeword":
        out["p_md_gaussian_exact"] = gaussian_codeword_md(cfg.q, cfg.nu, power) if power > 0 else 1 - fa
    return out


# ------------------------------------------------------------------ experiments

@dataclass
class ResultRow:
    M: int
    q: int
    Q: int
    nu: float
    B: float
    quantity: str
    value: float
    std_error: float | None
    units: str
    provenance: str
    label: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if (self.provenance == "monte_carlo") != (self.std_error is not None):
            raise ValueError("Monte Carlo rows, and only those, carry a standard error")


ROW_FIELDS = ["M", "q", "Q", "nu", "B", "quantity", "label", "value", "std_error", "units", "provenance"]


@dataclass
class ExperimentSpec:
    cfg: ChannelConfig
    mode: str
    sweep: dict = field(default_factory=dict)   # axis name -> list of values
    trials: int = 100_000
    seed: int = 0
    output_path: str | None = None
    search: SearchControl = field(default_factory=SearchControl)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = set(self.sweep) - {"M", "q", "Q", "B", "nu"}
        if bad:
            raise ValueError(f"unknown sweep axes {sorted(bad)}")
        self.points()   # validates every grid point

    def points(self) -> list[ChannelConfig]:
        axes = ["M", "q", "Q", "B", "nu"]
        values = [list(self.sweep.get(a) or [getattr(self.cfg, a)]) for a in axes]
        return [self.cfg.replace(**dict(zip(axes, combo))) for combo in itertools.product(*values)]


def _row(cfg, quantity, value, provenance, units="bits", std_error=None, label="") -> ResultRow:
    return ResultRow(cfg.M, cfg.q, cfg.Q, cfg.nu, cfg.B, quantity, float(value),
                     None if std_error is None else float(std_error), units, provenance, label)


def _q1_sweep(cfg, spec, point):
    rows = []
    for K in range(1, cfg.M + 1):
        b = cfg.budget / K
        rate = sensing_rate_q1([b] * K + [0.0] * (cfg.M - K), cfg)
        rows.append(_row(cfg, "q1_rate", rate, "exact", label=f"K={K};b={b!r}"))
    return rows


def _inner(cfg, spec):
    return optimize_scheme(cfg, spec.search)


def _inner_rows(cfg, res):
    rows = [_row(cfg, "inner_rate", res.rate, "optimized",
                 label=f"n0={res.params.n0}" if res.params else "empty")]
    for j, c in enumerate(res.profile, start=1):
        rows.append(_row(cfg, "inner_slot_cost", c, "optimized", units="power", label=f"slot={j}"))
    return rows


def paired_grid(cfg: ChannelConfig, inner) -> ActionGrid:
    """Default DP grid enlarged by the powers of an optimized inner scheme."""
    extra = sorted(set(inner.params.b.values())) if inner.params is not None else []
    return ActionGrid.default(cfg, extra)


def _dp_rows(cfg, spec):
    inner = _inner(cfg, spec)
    dp = value_iteration(paired_grid(cfg, inner), cfg)
    return [_row(cfg, "outer_value", dp.outer_value, "bound", label="grid-class outer bound"),
            _row(cfg, "outer_replay_rate", dp.replay_value, "exact")]


def _simulate(cfg, spec, point):
    rows = []
    inner = _inner(cfg, spec)
    if inner.params is not None:
        rows.append(_row(cfg, "inner_rate", inner.rate, "optimized", label=f"n0={inner.params.n0}"))
        est = mc_sensing_rate(inner.params, cfg, spec.trials, _sub_seed(spec.seed, point, 0))
        rows.append(_row(cfg, "inner_rate_mc", est.estimate, "monte_carlo", std_error=est.std_error,
                         label="jackknife"))
        rows.append(_row(cfg, "inner_rate_mc", est.plugin, "monte_carlo", std_error=est.std_error,
                         label="plug-in"))
        power = inner.params.b[()]
    else:
        power = cfg.budget
    if cfg.fixed_error_rates is None and power > 0 and spec.trials >= 10_000:
        for i, kind in enumerate(("pilot", "gaussian_codeword"), start=1):
            r = mc_fa_md(cfg, power, spec.trials, _sub_seed(spec.seed, point, i), kind)
            rows.append(_row(cfg, "p_fa", r["p_fa"], "exact", units="probability", label=kind))
            rows.append(_row(cfg, "p_fa_mc", r["p_fa_mc"], "monte_carlo", units="probability",
                             std_error=r["p_fa_se"], label=kind))
            rows.append(_row(cfg, "p_md", r["p_md"], "exact", units="probability", label=kind))
            rows.append(_row(cfg, "p_md_mc", r["p_md_mc"], "monte_carlo", units="probability",
                             std_error=r["p_md_se"], label=kind))
            rows.append(_row(cfg, "p_md_deviation", r["md_deviation"], "monte_carlo",
                             units="probability", std_error=r["p_md_se"], label=kind))
            if kind == "gaussian_codeword":
                rows.append(_row(cfg, "p_md_gaussian_exact", r["p_md_gaussian_exact"], "exact",
                                 units="probability", label=kind))
    return rows


def _sub_seed(seed: int, point: int, sub: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(point, sub)).generate_state(1, np.uint64)[0])


def _random_action(cfg, rng, max_power):
    powers = np.where(rng.random(cfg.M) < 0.5, rng.uniform(0.1, max_power, cfg.M), 0.0)
    return BeamAction(tuple(powers))


def _enumerated_posterior(policy, z, cfg):
    """P(S | z^j) from the joint over (s, z^j) written out state by state."""
    w = np.zeros(cfg.M)
    for s in range(cfg.M):
        p = 1.0 / cfg.M
        for j in range(len(z)):
            pj = cfg.detect_prob(policy.action(z[:j]).powers[s])
            p *= pj if z[j] else 1.0 - pj
        w[s] = p
    return w / w.sum()


def validation_checks(cfg: ChannelConfig, spec: ExperimentSpec, point: int) -> list[tuple[str, bool, str]]:
    """Cross-module invariants at one configuration; returns (name, ok, detail)."""
    from .numerics import chi2_cdf, noncentral_chi2_cdf
    rng = make_rng(spec.seed, point, 99)
    out = []
    x = cfg.nu if cfg.nu > 0 else 1.0
    d = abs(noncentral_chi2_cdf(2 * cfg.q, 0.0, x) - chi2_cdf(2 * cfg.q, x))
    out.append(("ncx2_central_limit", d <= 1e-12, f"{d:.2e}"))
    d = abs(cfg.miss(0.0) + cfg.false_alarm() - 1.0)
    out.append(("fa_md_complement", d <= 1e-12, f"{d:.2e}"))

    q1cfg = cfg.replace(Q=1)
    worst = 0.0
    for _ in range(20):
        a = _random_action(cfg, rng, 2 * cfg.budget + 1.0)
        worst = max(worst, abs(sensing_rate_q1(a.powers, cfg)
                               - evaluate_policy_exact(PolicyTree({(): a}, 1), q1cfg).sensing_rate))
    out.append(("q1_consistency", worst <= 1e-12, f"{worst:.2e}"))

    pol = PolicyTree({p: _random_action(cfg, rng, 2 * cfg.budget + 1.0) for p in all_prefixes(cfg.Q)}, cfg.Q)
    worst = 0.0
    for j in range(cfg.Q + 1):
        for z in prefixes(j):
            try:
                worst = max(worst, float(np.max(np.abs(belief_trajectory(pol, z, cfg)
                                                       - _enumerated_posterior(pol, z, cfg)))))
            except ZeroDivisionError:
                continue
    out.append(("bayes_oracle", worst <= 1e-10, f"{worst:.2e}"))

    inner = _inner(cfg, spec)
    if inner.params is not None:
        induced = evaluate_policy_exact(induced_policy(inner.params, cfg), cfg)
        d = abs(induced.sensing_rate - scheme_rate(inner.params, cfg, warn=False))
        out.append(("scheme_identity", d <= 1e-9, f"{d:.2e}"))
        prof = scheme_power_profile(inner.params, cfg)
        ok = bool(np.all(prof <= cfg.budget + 1e-9))
        ok &= prof[0] == inner.params.n0 * inner.params.b[()]
        out.append(("scheme_power", ok, ",".join(f"{c:.6g}" for c in prof)))
    dp = value_iteration(paired_grid(cfg, inner), cfg)
    ceiling = math.log2(cfg.M)
    out.append(("dp_replay", abs(dp.outer_value - dp.replay_value) <= 1e-9 and dp.feasible,
                f"{dp.outer_value:.12f} vs {dp.replay_value:.12f}"))
    out.append(("bound_ordering", dp.outer_value >= inner.rate - 1e-9
                and -1e-12 <= inner.rate <= ceiling + 1e-9 and dp.outer_value <= ceiling + 1e-9,
                f"outer={dp.outer_value:.6f} inner={inner.rate:.6f}"))
    if spec.trials >= 1000:
        est = mc_sensing_rate(dp.policy, cfg, spec.trials, _sub_seed(spec.seed, point, 7))
        dev = abs(est.estimate - dp.replay_value)
        ok = dev <= 3 * est.std_error or (dp.replay_value == 0 and est.estimate == 0)
        out.append(("mc_closure", ok, f"mc={est.estimate:.5f}+-{est.std_error:.5f} exact={dp.replay_value:.5f}"))
    return out


def run_experiment(spec: ExperimentSpec) -> tuple[list[ResultRow], bool]:
    """Run ``spec.mode`` over the sweep; returns rows (sweep order) and whether
    every validation check passed (always True outside ``validate``)."""
    rows: list[ResultRow] = []
    all_ok = True
    for point, cfg in enumerate(spec.points()):
        if spec.mode == "q1_sweep":
            rows += _q1_sweep(cfg, spec, point)
        elif spec.mode == "inner_opt":
            rows += _inner_rows(cfg, _inner(cfg, spec))
        elif spec.mode == "dp_outer":
            rows += _dp_rows(cfg, spec)
        elif spec.mode == "simulate":
            rows += _simulate(cfg, spec, point)
        else:
            for name, ok, detail in validation_checks(cfg, spec, point):
                all_ok &= ok
                rows.append(_row(cfg, f"check:{name}", 1.0 if ok else 0.0, "exact", units="pass",
                                 label=detail))
    if spec.output_path:
        write_results(rows, spec, spec.output_path)
    return rows, all_ok


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([r.M, r.q, r.Q, repr(float(r.nu)), repr(float(r.B)), r.quantity, r.label,
                    repr(r.value), "" if r.std_error is None else repr(r.std_error), r.units, r.provenance])
    return buf.getvalue()


def metadata(spec: ExperimentSpec) -> dict:
    return {
        "package": "beamsense", "version": __version__,
        "mode": spec.mode, "seed": spec.seed, "trials": spec.trials,
        "rng": RNG_ALGORITHM,
        "config": spec.cfg.to_dict(),
        "sweep": {k: list(v) for k, v in sorted(spec.sweep.items())},
        "search": {"starts": spec.search.starts, "max_sweeps": spec.search.max_sweeps,
                   "init_step": spec.search.init_step, "min_step": spec.search.min_step,
                   "seed": spec.search.seed},
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }


def write_results(rows: list[ResultRow], spec: ExperimentSpec, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows), encoding="utf-8")
    Path(str(path) + ".meta.json").write_text(
        json.dumps(metadata(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
