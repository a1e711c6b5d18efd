"""Config loading, built-in instance grid, verification suites and heavy-traffic sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import yaml
from scipy import stats

from .errors import ConfigError
from .exact import build_generator, enumerate_states, stationary_distribution
from .model import AggregateState, CoxianParams, SystemConfig
from .policies import I1F, JIQ, JSQ, PolicyKind, pi_membership_check, pod
from .simulator import SimConfig, run
from .stein.constants import (
    corollary_bound_for,
    corollary_bounds,
    derived_constants,
    ssc1_min_departure,
    ssc_flags,
    theorem_bound,
)
from .stein.drift import (
    V_IDS,
    closed_form_drift,
    drift_condition_scan,
    empirical_drift_spec,
    lyapunov_drift,
    lyapunov_values,
    tail_bound_verify,
)
from .stein.solution import gradient_bound_check, identity_residual, stein_decomposition

BUILTIN_COXIAN = (CoxianParams(2.0, 1.0, 0.5), CoxianParams(4.0, 1.2, 0.9), CoxianParams(1.25, 0.5, 0.1))
BUILTIN_LAMBDA = 0.7
BUILTIN_POLICIES = (JSQ, JIQ, I1F, pod(2))
SUITES = ("stein", "drift", "tail", "ssc", "pi", "corollary")
DRIFT_TOL = 1e-10
STATIONARY_TOL = 1e-10
IDENTITY_TOL = 1e-8

# parameter sets for the departure-rate corner check: (mu1, mu2, p, b, N, lambda)
CORNER_SETS = (
    (2.0, 1.0, 0.5, 4, 1000, 1 - 1000**-0.3),
    (4.0, 1.2, 0.9, 3, 250, 0.9),
    (1.25, 0.5, 0.1, 2, 10_000, 0.95),
    (1.0, 1.0, 0.0, 2, 500, 0.8),
    (3.0, 0.75, 0.5, 5, 64_000, 1 - 64_000**-0.3),
)


# ---------------------------------------------------------------- config

SYSTEM_KEYS = {"n", "b", "mu1", "mu2", "p", "lambda", "alpha", "beta", "policy", "seed"}
SIM_KEYS = {"horizon", "warmup", "batches", "initial_state", "trace_interval"}


def _flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def read_config(path) -> dict:
    """Flat key-value document (YAML, or JSON as a YAML subset)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a key-value document")
    return _flatten(doc)


def policy_from(flat: dict) -> PolicyKind:
    kind = flat.get("policy.kind", flat.get("policy"))
    if kind is None:
        raise ConfigError("config needs policy.kind")
    d = flat.get("policy.d")
    sampling = flat.get("policy.pod_sampling", "without_replacement")
    return PolicyKind(str(kind), None if d is None else int(d), sampling)


def system_from(flat: dict) -> SystemConfig:
    known = SYSTEM_KEYS | SIM_KEYS | {"policy.kind", "policy.d", "policy.pod_sampling"}
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    missing = [k for k in ("n", "b", "mu1", "mu2", "p") if k not in flat]
    if missing:
        raise ConfigError(f"config is missing {missing}")
    try:
        cox = CoxianParams(float(flat["mu1"]), float(flat["mu2"]), float(flat["p"]))
        N, b = int(flat["n"]), int(flat["b"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric value in config: {exc}") from exc
    policy = policy_from(flat)
    if "lambda" in flat and "alpha" in flat:
        raise ConfigError("give either lambda or alpha (+beta), not both")
    if "lambda" in flat:
        return SystemConfig(N, b, float(flat["lambda"]), cox, policy)
    if "alpha" in flat:
        return SystemConfig.heavy(N, b, float(flat["alpha"]), cox, policy, float(flat.get("beta", 1.0)))
    raise ConfigError("config needs lambda or alpha")


def sim_from(flat: dict, **overrides) -> SimConfig:
    kw = {k: flat[k] for k in SIM_KEYS if k in flat}
    if "seed" in flat:
        kw["seed"] = int(flat["seed"])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if "horizon" not in kw:
        raise ConfigError("a horizon is required (config key or --horizon)")
    return SimConfig(**kw)


# ---------------------------------------------------------------- instances


def builtin_instances(lam: float = BUILTIN_LAMBDA) -> list:
    """N in 1..4, b in 1..3, four policies, three Coxian laws; pod(2) needs N >= 2."""
    out = []
    for cox in BUILTIN_COXIAN:
        for N in range(1, 5):
            for b in range(1, 4):
                for policy in BUILTIN_POLICIES:
                    if policy.kind == "pod" and policy.d > N:
                        continue
                    out.append(SystemConfig(N, b, lam, cox, policy))
    return out


def instance_params(cfg: SystemConfig) -> dict:
    return {
        "N": cfg.N,
        "b": cfg.b,
        "lambda": cfg.lam,
        "mu1": cfg.coxian.mu1,
        "mu2": cfg.coxian.mu2,
        "p": cfg.coxian.p,
        "policy": cfg.policy.label,
    }


@dataclass
class Solved:
    cfg: SystemConfig
    space: object
    gen: object
    dist: object


def solve_instance(cfg: SystemConfig) -> Solved:
    space = enumerate_states(cfg.N, cfg.b)
    gen = build_generator(space, cfg.policy, cfg)
    return Solved(cfg, space, gen, stationary_distribution(gen))


def _record(check, cfg, status, worst_slack=None, witness=None, **extra) -> dict:
    rec = {"check": check, "instance": instance_params(cfg), "status": status, "worst_slack": worst_slack}
    if witness is not None:
        rec["witness"] = witness
    rec.update(extra)
    return rec


# ---------------------------------------------------------------- suite: stein


def stationarity_check(solved: Solved, n_functions: int = 20, seed: int = 0) -> dict:
    """pi G = 0 residual plus E[G f] = 0 for random bounded f."""
    rng = np.random.default_rng(seed)
    p = solved.dist.pi
    worst = 0.0
    for _ in range(n_functions):
        f = rng.uniform(-1.0, 1.0, len(solved.space))
        worst = max(worst, abs(float(p @ (solved.gen.Q @ f))))
    ok = solved.dist.residual <= STATIONARY_TOL and worst <= IDENTITY_TOL
    return _record("stationarity", solved.cfg, "pass" if ok else "fail",
                   worst_slack=IDENTITY_TOL - worst, residual=solved.dist.residual, max_E_Gf=worst)


def _decomposition_record(check, cfg, dec) -> dict:
    worst = max(dec["identity_error"], dec["decomposition_error"], dec["J23_route_gap"])
    return _record(check, cfg, "pass" if worst <= IDENTITY_TOL else "fail", worst_slack=IDENTITY_TOL - worst,
                   detail=dec)


def suite_stein(instances: Iterable[SystemConfig]) -> list:
    recs = []
    seen = set()
    for cfg in instances:
        solved = solve_instance(cfg)
        recs.append(stationarity_check(solved))
        if cfg.N < 2:
            recs.append(_record("stein_decomposition", cfg, "inapplicable", reason="log N = 0 at N = 1"))
            continue
        c = derived_constants(cfg)
        key = (cfg.N, round(c.eta, 15))
        if key not in seen:
            seen.add(key)
            gb = gradient_bound_check(c)
            recs.append(_record("gradient_bounds", cfg, gb["status"],
                                worst_slack=min(gb["g1_worst_slack"], gb["g2_worst_slack"]), detail=gb))
            err = identity_residual(c)
            recs.append(_record("stein_identity", cfg, "pass" if err <= 1e-12 else "fail",
                                worst_slack=1e-12 - err, max_error=err))
        dec = stein_decomposition(solved.dist, solved.space, cfg.policy, cfg)
        recs.append(_decomposition_record("stein_decomposition", cfg, dec))
        # at desk-scale N eta exceeds b and every term vanishes; a threshold at
        # the stationary mean exercises the same identities with nonzero terms
        mean_total = float(solved.dist.pi @ solved.space.total_s())
        shifted = stein_decomposition(solved.dist, solved.space, cfg.policy, cfg, eta=mean_total)
        recs.append(_decomposition_record("stein_decomposition_eta_at_mean", cfg, shifted))
        bound_status = ("pass" if dec["J23_within_bound"] else "fail") if dec["bound_applicable"] else "inapplicable"
        recs.append(_record("J23_bound", cfg, bound_status, worst_slack=dec["J23_bound"] - dec["J23"],
                            J23=dec["J23"], bound=dec["J23_bound"], within=dec["J23_within_bound"]))
    return recs


# ---------------------------------------------------------------- suite: drift


def closed_form_check(cfg: SystemConfig, space=None) -> dict:
    space = space or enumerate_states(cfg.N, cfg.b)
    c = derived_constants(cfg)
    worst, witness = 0.0, None
    for st in space.states:
        for v in ("V_A", "V_B", "V_C"):
            gap = abs(lyapunov_drift(v, st, cfg.policy, cfg, c) - closed_form_drift(v, st, cfg.policy, cfg))
            if gap > worst:
                worst, witness = gap, {"state": list(st.counts), "V": v}
    status = "pass" if worst <= DRIFT_TOL else "fail"
    return _record("drift_closed_form", cfg, status, worst_slack=DRIFT_TOL - worst,
                   witness=witness if status == "fail" else None, max_gap=worst, states=len(space))


def suite_drift(instances: Iterable[SystemConfig]) -> list:
    recs = []
    for cfg in instances:
        space = enumerate_states(cfg.N, cfg.b)
        recs.append(closed_form_check(cfg, space))
        for v in V_IDS:
            scan = drift_condition_scan(v, cfg.policy, cfg, space)
            for bullet in scan["bullets"]:
                recs.append(_record(f"{scan['check']}_{bullet['check']}", cfg, bullet["status"],
                                    worst_slack=bullet["worst_slack"],
                                    witness=bullet["witnesses"][0] if bullet["witnesses"] else None,
                                    B=scan["B"], region=scan["region"], detail=bullet))
    return recs


# ---------------------------------------------------------------- suite: tail


def _tail_thresholds(v_id, solved, n_levels):
    c = derived_constants(solved.cfg)
    V = lyapunov_values(v_id, solved.space.s_array()[solved.gen.reachable], c)
    pos = np.unique(V[V > 0])
    if pos.size <= n_levels:
        return list(pos)
    return list(pos[np.linspace(0, pos.size - 1, n_levels).astype(int)])


def suite_tail(instances: Iterable[SystemConfig], sweep_levels: int = 3) -> list:
    recs = []
    for cfg in instances:
        solved = solve_instance(cfg)
        for v in V_IDS:
            levels = [None] + _tail_thresholds(v, solved, sweep_levels)
            for B in levels:
                spec = empirical_drift_spec(v, solved.gen, B=B)
                label = "lemma_B" if B is None else "swept_B"
                if not spec.B > 0:
                    recs.append(_record(f"tail_{v}_{label}", cfg, "inapplicable", reason="B must be positive",
                                        B=spec.B))
                    continue
                rep = tail_bound_verify(solved.dist, solved.space, spec)
                recs.append(_record(f"tail_{v}_{label}", cfg, rep["status"], worst_slack=rep["worst_slack"],
                                    witness=None if rep["status"] != "fail" else {"j": rep["worst_j"]},
                                    B=spec.B, gamma=spec.gamma, delta=spec.delta,
                                    alpha=rep.get("alpha"), beta=rep.get("beta"),
                                    nu_max=spec.nu_max, q_max=spec.q_max,
                                    nu_max_worst_case=rep["nu_max_worst_case"],
                                    q_max_worst_case=rep["q_max_worst_case"],
                                    j_max=rep.get("j_max"), reason=rep.get("reason")))
    return recs


# ---------------------------------------------------------------- suite: ssc


def containment_check(cfg: SystemConfig, space=None) -> dict:
    space = space or enumerate_states(cfg.N, cfg.b)
    c = derived_constants(cfg)
    bad = None
    inner = 0
    for st in space.states:
        f = ssc_flags(st, c)
        if f.in_tilde1 and f.in_tilde2:
            inner += 1
            if not f.in_ssc and bad is None:
                bad = {"state": list(st.counts)}
    return _record("ssc_containment", cfg, "fail" if bad else "pass", witness=bad,
                   states=len(space), inner_states=inner)


def corner_check(mu1, mu2, p, b, N, lam) -> dict:
    cfg = SystemConfig(N, b, lam, CoxianParams(mu1, mu2, p), JSQ)
    c = derived_constants(cfg)
    r = ssc1_min_departure(c)
    ok = r["min_ok"] and r["case1_ok"] and r["case2_ok"] and r["case2_claim_ok"] and abs(r["grid_gap"]) <= 1e-9
    ok = ok and r["box_min"] >= r["min"] - 1e-9
    return _record("ssc1_min_departure", cfg, "pass" if ok else "fail", worst_slack=r["min"] - r["target"],
                   detail=r)


def suite_ssc(instances: Iterable[SystemConfig]) -> list:
    recs = []
    seen = set()
    for cfg in instances:
        key = (cfg.N, cfg.b, cfg.lam, cfg.coxian)
        if key in seen:
            continue
        seen.add(key)
        recs.append(containment_check(cfg))
    for params in CORNER_SETS:
        recs.append(corner_check(*params))
    return recs


# ---------------------------------------------------------------- suite: pi


def _pod_guaranteed(cfg: SystemConfig) -> bool:
    """Whether d meets the sampling requirement d >= mu1 N^alpha log N."""
    from .stein.constants import effective_alpha

    alpha = effective_alpha(cfg)
    if alpha is None:
        return False
    return cfg.policy.d >= cfg.coxian.mu1 * cfg.N**alpha * math.log(cfg.N)


def suite_pi(instances: Iterable[SystemConfig], asserted: bool = False) -> list:
    """Membership in the low-busy-routing policy set.

    JSQ, JIQ and I1F are asserted members. Power-of-d is asserted only when
    ``asserted`` is set (an explicitly requested policy) or its d meets the
    sampling requirement; otherwise a violation is reported as inapplicable.
    """
    recs = []
    for cfg in instances:
        rep = pi_membership_check(cfg.policy, cfg)
        hard = asserted or cfg.policy.kind != "pod" or _pod_guaranteed(cfg)
        if rep.checked == 0:
            status = "inapplicable"
        elif rep.holds:
            status = "pass"
        else:
            status = "fail" if hard else "inapplicable"
        recs.append(_record("pi_membership", cfg, status, worst_slack=-rep.worst_excess if rep.checked else None,
                            witness={"state": list(rep.witnesses[0].counts)} if rep.witnesses else None,
                            detail=rep.to_dict()))
    return recs


# ---------------------------------------------------------------- suite: corollary


def bounds_monotone(mu1, mu2, p, b, alpha, n_values=None) -> dict:
    """Every closed-form bound decreases along an N grid starting above e^2."""
    n_values = n_values or [int(x) for x in np.unique(np.geomspace(8, 10**7, 60).astype(int))]
    cox = CoxianParams(mu1, mu2, p)
    keys = ("theorem_bound", "E_W_bound", "P_W_bound_jsq_pod", "P_W_bound_jiq_i1f", "P_B_bound", "P_B_bound_pod")
    series = {k: [] for k in keys}
    for N in n_values:
        cfg = SystemConfig.heavy(N, b, alpha, cox, JSQ)
        bd = corollary_bounds(derived_constants(cfg), cfg)
        for k in keys:
            series[k].append(bd[k])
    bad = [k for k, v in series.items() if np.any(np.diff(v) >= 0)]
    return {"monotone": not bad, "non_monotone": bad, "n_min": n_values[0], "n_max": n_values[-1]}


def suite_corollary(instances: Iterable[SystemConfig], alpha: float = 0.3) -> list:
    recs = []
    cox = CoxianParams(2.0, 1.0, 0.5)
    for N in (250, 1000, 4000, 16000, 64000):
        cfg = SystemConfig.heavy(N, 4, alpha, cox, JSQ)
        bd = corollary_bounds(derived_constants(cfg), cfg)
        recs.append(_record("corollary_bounds", cfg, "pass", detail=bd))
    mono = bounds_monotone(2.0, 1.0, 0.5, 4, alpha)
    recs.append({"check": "bounds_monotone_in_N", "instance": {"mu1": 2.0, "mu2": 1.0, "p": 0.5, "b": 4,
                 "alpha": alpha}, "status": "pass" if mono["monotone"] else "fail", "worst_slack": None,
                 "detail": mono})
    for cfg in instances:
        if cfg.N < 2 or not cfg.coxian.normalized:
            continue
        bd = corollary_bounds(derived_constants(cfg), cfg)
        recs.append(_record("corollary_bounds", cfg, "pass", detail=bd))
    return recs


# ---------------------------------------------------------------- suite driver


def run_suite(suite: str, instances: Optional[list] = None, asserted_pi: bool = False) -> dict:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {SUITES}")
    instances = builtin_instances() if instances is None else instances
    if suite == "stein":
        recs = suite_stein(instances)
    elif suite == "drift":
        recs = suite_drift(instances)
    elif suite == "tail":
        recs = suite_tail(instances)
    elif suite == "ssc":
        recs = suite_ssc(instances)
    elif suite == "pi":
        recs = suite_pi(instances, asserted_pi)
    else:
        recs = suite_corollary(instances)
    counts = {s: sum(r["status"] == s for r in recs) for s in ("pass", "fail", "inapplicable")}
    return {"suite": suite, "status": "fail" if counts["fail"] else "pass", "counts": counts, "records": recs}


# ---------------------------------------------------------------- sweep


CSV_COLUMNS = (
    "N", "lambda", "policy", "d", "p_wait", "p_wait_ci", "p_block", "p_block_ci", "mean_total",
    "mean_total_ci", "excess_mean", "excess_mean_ci", "theorem_bound", "corollary_bound",
    "theorem_applicable", "corollary_applicable", "insufficient_data", "events", "seed",
)


@dataclass
class SweepSpec:
    n_grid: list
    alpha: float
    beta: float = 1.0
    policies: list = field(default_factory=lambda: [JSQ])
    b: int = 4
    coxian: CoxianParams = field(default_factory=lambda: CoxianParams(2.0, 1.0, 0.5))
    horizon: float = 1000.0
    warmup_fraction: float = 0.2
    batches: int = 32
    seed: int = 0
    initial_state: str = "empty"

    def __post_init__(self):
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid must be nonempty and strictly increasing")
        if not 0.0 < self.alpha < 0.5:
            raise ConfigError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        for N in self.n_grid:
            lam = 1.0 - self.beta * N ** (-self.alpha)
            if not 0.0 < lam < 1.0:
                raise ConfigError(f"lambda = {lam} at N = {N} is outside (0, 1)")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")


def point_seed(base: int, N: int) -> int:
    return int(np.random.SeedSequence([int(base), int(N)]).generate_state(1, np.uint64)[0])


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".17g")


def sweep_point(spec: SweepSpec, policy: PolicyKind, N: int) -> dict:
    cfg = SystemConfig.heavy(N, spec.b, spec.alpha, spec.coxian, policy, spec.beta)
    horizon = max(spec.horizon, 200.0 / (1.0 - cfg.lam))
    seed = point_seed(spec.seed, N)
    sim = SimConfig(horizon=horizon, warmup=spec.warmup_fraction * horizon, seed=seed, batches=spec.batches,
                    initial_state=spec.initial_state)
    rep = run(cfg, sim)
    c = derived_constants(cfg)
    bd = corollary_bounds(c, cfg)
    applicable = bd["jsq_pod_applicable"] if policy.kind in ("jsq", "pod") else bd["jiq_i1f_applicable"]
    if policy.kind == "pod":
        applicable = applicable and bd["pod_d_ok"]
    return {
        "N": N,
        "lambda": cfg.lam,
        "policy": policy.kind,
        "d": policy.d,
        "p_wait": rep.p_wait.mean,
        "p_wait_ci": rep.p_wait.ci95,
        "p_block": rep.p_block.mean,
        "p_block_ci": rep.p_block.ci95,
        "mean_total": rep.mean_total.mean,
        "mean_total_ci": rep.mean_total.ci95,
        "excess_mean": rep.excess_mean.mean,
        "excess_mean_ci": rep.excess_mean.ci95,
        "theorem_bound": theorem_bound(c),
        "corollary_bound": corollary_bound_for(policy.kind, bd),
        "theorem_applicable": bd["theorem_applicable"],
        "corollary_applicable": bool(applicable),
        "insufficient_data": rep.insufficient,
        "events": rep.events,
        "seed": seed,
        "_wall_clock": rep.wall_clock,
        "_p_wait_upper": rep.upper_bounds.get("p_wait_observed"),
    }


def run_sweep(spec: SweepSpec, progress=None) -> list:
    rows = []
    for policy in spec.policies:
        for N in spec.n_grid:
            row = sweep_point(spec, policy, N)
            rows.append(row)
            if progress:
                progress(row)
    return rows


def rows_to_csv(rows: list, timing: bool = False) -> str:
    cols = list(CSV_COLUMNS) + (["wall_clock"] if timing else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r["_wall_clock"] if c == "wall_clock" else r[c]) for c in cols])
    return buf.getvalue()


def regressor(kind: str, metric: str, N, alpha: float):
    N = np.asarray(N, dtype=float)
    log_n = np.log(N)
    if metric == "excess_mean":
        return np.log(1.0 / (np.sqrt(N) * log_n))
    if kind in ("jsq", "pod"):
        return np.log(log_n / np.sqrt(N))
    return np.log(1.0 / (N ** (0.5 - alpha) * log_n))


def fit_scaling(N, values, x=None, min_points: int = 4, excluded=None) -> dict:
    """OLS of log(value) on the regressor; points that are not positive and finite are dropped."""
    N = np.asarray(N, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    if excluded is not None:
        keep &= ~np.asarray(excluded, dtype=bool)
    usable = int(keep.sum())
    out = {"points": int(N.size), "usable": usable, "dropped_N": [int(n) for n in N[~keep]]}
    if usable < min_points:
        out.update(status="skipped", reason=f"{usable} usable points, need {min_points}",
                   slope=None, intercept=None, r2=None)
        return out
    res = stats.linregress(x[keep], np.log(y[keep]))
    out.update(status="ok", slope=float(res.slope), intercept=float(res.intercept), r2=float(res.rvalue**2))
    return out


def fit_rows(rows: list, alpha: float) -> dict:
    fits = {}
    for kind in dict.fromkeys(r["policy"] for r in rows):
        sub = [r for r in rows if r["policy"] == kind]
        N = [r["N"] for r in sub]
        bad = [r["insufficient_data"] for r in sub]
        for metric in ("p_wait", "excess_mean"):
            fit = fit_scaling(N, [r[metric] for r in sub], regressor(kind, metric, N, alpha), excluded=bad)
            fit["regressor"] = {
                ("p_wait", True): "log(log N / sqrt N)",
                ("p_wait", False): "log(1 / (N^(0.5-alpha) log N))",
            }.get((metric, kind in ("jsq", "pod")), "log(1 / (sqrt N log N))")
            fits[f"{kind}:{metric}"] = fit
    return fits


def fit_self_test(c: float = 0.37, n_grid=(250, 1000, 4000, 16000, 64000)) -> dict:
    """Synthetic data c (log N / sqrt N) must give slope 1."""
    N = np.asarray(n_grid, dtype=float)
    y = c * np.log(N) / np.sqrt(N)
    return fit_scaling(N, y, regressor("jsq", "p_wait", N, 0.3))


def monotone_nonincreasing(values, cis) -> bool:
    """Each step either decreases or stays within the joint CI width."""
    v = np.asarray(values, dtype=float)
    ci = np.nan_to_num(np.asarray(cis, dtype=float))
    return bool(np.all(v[1:] <= v[:-1] + ci[1:] + ci[:-1]))


def sweep_summary(rows: list, spec: SweepSpec) -> dict:
    fits = fit_rows(rows, spec.alpha)
    summary = {"alpha": spec.alpha, "beta": spec.beta, "b": spec.b,
               "coxian": [spec.coxian.mu1, spec.coxian.mu2, spec.coxian.p], "fits": fits, "policies": {}}
    for kind in dict.fromkeys(r["policy"] for r in rows):
        sub = [r for r in rows if r["policy"] == kind]
        last = sub[-1]
        summary["policies"][kind] = {
            "p_wait_monotone": monotone_nonincreasing([r["p_wait"] for r in sub], [r["p_wait_ci"] for r in sub]),
            "excess_mean_nonincreasing": bool(np.all(np.diff([r["excess_mean"] for r in sub]) <= 0)),
            "largest_N": last["N"],
            "excess_mean_at_largest_N": last["excess_mean"],
            "theorem_bound_at_largest_N": last["theorem_bound"],
            "excess_within_theorem_bound": last["excess_mean"] <= last["theorem_bound"],
            "theorem_applicable_at_largest_N": last["theorem_applicable"],
        }
    return summary


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _json_default(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, CoxianParams):
        return [o.mu1, o.mu2, o.p]
    if isinstance(o, AggregateState):
        return list(o.counts)
    raise TypeError(f"cannot serialise {type(o).__name__}")
