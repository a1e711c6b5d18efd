"""Lyapunov drifts, drift-condition scans and the conditioned geometric tail bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..model import AggregateState, SystemConfig, apply_generator, q_to_s
from ..policies import PolicyKind, routing_distribution
from .constants import DerivedConstants, derived_constants

V_IDS = ("V_A", "V_B", "V_C", "V_D")
SLACK_TOL = 1e-12
MAX_WITNESSES = 5


def lyapunov_value(v_id: str, s: np.ndarray, c: DerivedConstants) -> float:
    """V evaluated on a b x 2 s-matrix."""
    if v_id == "V_A":
        return s[0, 1] - c.p / c.mu2
    if v_id == "V_B":
        return c.lam / c.mu1 - s[0, 0]
    if v_id == "V_C":
        return c.p * c.lam / c.mu2 - s[0, 1]
    if v_id == "V_D":
        return min(c.eta - s[0].sum(), s[1:].sum())
    raise ValueError(f"unknown Lyapunov function {v_id!r}; expected one of {V_IDS}")


def lyapunov_values(v_id: str, s_array: np.ndarray, c: DerivedConstants) -> np.ndarray:
    """Vectorised :func:`lyapunov_value` over an (n, b, 2) array."""
    if v_id == "V_A":
        return s_array[:, 0, 1] - c.p / c.mu2
    if v_id == "V_B":
        return c.lam / c.mu1 - s_array[:, 0, 0]
    if v_id == "V_C":
        return c.p * c.lam / c.mu2 - s_array[:, 0, 1]
    if v_id == "V_D":
        return np.minimum(c.eta - s_array[:, 0].sum(axis=1), s_array[:, 1:].sum(axis=(1, 2)))
    raise ValueError(f"unknown Lyapunov function {v_id!r}; expected one of {V_IDS}")


def lyapunov_drift(v_id: str, state: AggregateState, policy: PolicyKind, cfg: SystemConfig,
                   consts: Optional[DerivedConstants] = None) -> float:
    """sum_{s'} q(s, s') (V(s') - V(s)), through the generator."""
    c = derived_constants(cfg) if consts is None else consts
    cfg = cfg.replace(policy=policy)
    return apply_generator(lambda st: lyapunov_value(v_id, q_to_s(st), c), state, None, cfg)


def closed_form_drift(v_id: str, state: AggregateState, policy: PolicyKind, cfg: SystemConfig) -> float:
    """Drift from the hand-derived formulas (V_A, V_B, V_C only)."""
    cox = cfg.coxian
    s = q_to_s(state)
    phase = cox.p * cox.mu1 * s[0, 0] - cox.mu2 * s[0, 1]
    if v_id == "V_A":
        return phase
    if v_id == "V_C":
        return -phase
    if v_id == "V_B":
        a1 = routing_distribution(policy, state).a1
        s21, s22 = (s[1, 0], s[1, 1]) if state.b > 1 else (0.0, 0.0)
        return -cfg.lam * (1.0 - a1) + cox.mu1 * s[0, 0] - (1.0 - cox.p) * cox.mu1 * s21 - cox.mu2 * s22
    raise ValueError(f"no closed form for {v_id!r}")


@dataclass(frozen=True)
class LemmaSpec:
    """Threshold, conditioning set and the two claimed drift bounds of one lemma."""

    v_id: str
    B: float
    region: Callable[[np.ndarray], bool]
    region_label: str
    gamma_claim: float
    delta_claim: Optional[float]


def lemma_spec(v_id: str, c: DerivedConstants) -> LemmaSpec:
    L = c.log_ratio
    if v_id == "V_A":
        return LemmaSpec(v_id, L / 4, lambda s: True, "all states", c.mu1 * c.mu2 / 4 * L, None)
    if v_id == "V_B":
        cut = c.p / c.mu2 + L / 2
        return LemmaSpec(v_id, L / 2, lambda s: s[0, 1] <= cut, "s12 <= p/mu2 + L/2", c.mu1 / 3 * L, 1.0)
    if v_id == "V_C":
        return LemmaSpec(v_id, (c.p * c.mu1 / c.mu2 + 0.5) * L, lambda s: s[0, 0] >= c.L11,
                         "s11 >= L11", c.mu2 / 2 * L, 1.0)
    if v_id == "V_D":
        return LemmaSpec(v_id, c.c1 * L, lambda s: s[0, 0] >= c.L11 and s[0, 1] >= c.L12,
                         "s11 >= L11 and s12 >= L12", c.w_u * c.mu1 * L, c.w_u)
    raise ValueError(f"unknown Lyapunov function {v_id!r}; expected one of {V_IDS}")


def _side_conditions(v_id: str, a1: float, c: DerivedConstants) -> tuple[bool, list]:
    """Whether the per-state hypotheses behind the on-region bound hold, with the failed ones."""
    log_n = math.log(c.N)
    missing = []
    if v_id in ("V_B", "V_D") and a1 > 1.0 / math.sqrt(c.N) + SLACK_TOL:
        missing.append("A_1(s) <= 1/sqrt(N)")
    if v_id == "V_B" and log_n < 6.0 / c.mu1:
        missing.append("log N >= 6/mu1")
    if v_id == "V_D":
        if c.w_u * c.mu1 * log_n < 1.0:
            missing.append("w_u mu1 log N >= 1")
        if (c.mu1 + c.mu2 - c.w_u) * log_n < 1.0:
            missing.append("(mu1 + mu2 - w_u) log N >= 1")
    return not missing, missing


def _bullet(check_id, premise, slack, side_ok, witnesses):
    n_premise = int(premise.sum())
    if n_premise == 0:
        return {"check": check_id, "status": "inapplicable", "reason": "premise unsatisfiable at this N",
                "premise_states": 0, "worst_slack": None, "witnesses": []}
    worst = float(slack[premise].min())
    bad = premise & (slack < -SLACK_TOL)
    hard_bad = bad & side_ok
    if hard_bad.any():
        status, reason = "fail", "counterexample meets every stated hypothesis"
    elif bad.any():
        status, reason = "inapplicable", "violations only where the stated side conditions fail"
    else:
        status, reason = "pass", None
    return {"check": check_id, "status": status, "reason": reason, "premise_states": n_premise,
            "violations": int(bad.sum()), "hard_violations": int(hard_bad.sum()),
            "worst_slack": worst, "witnesses": witnesses(hard_bad if hard_bad.any() else bad)}


def drift_condition_scan(v_id: str, policy: PolicyKind, cfg: SystemConfig, space=None) -> dict:
    """Scan every state in the premise of each bullet of the drift lemma for ``v_id``.

    A violation counts as ``fail`` only when the state also meets the
    lemma's side conditions (busy-routing cap, lower limits on log N);
    otherwise the bullet is ``inapplicable`` at this instance.
    """
    from ..exact import enumerate_states

    c = derived_constants(cfg)
    cfg = cfg.replace(policy=policy)
    if space is None:
        space = enumerate_states(cfg.N, cfg.b)
    spec = lemma_spec(v_id, c)
    s_arr = space.s_array()
    n = len(space)
    V = lyapunov_values(v_id, s_arr, c)
    drift = np.empty(n)
    in_region = np.empty(n, dtype=bool)
    side_ok = np.empty(n, dtype=bool)
    a1 = np.empty(n)
    for k, st in enumerate(space.states):
        drift[k] = lyapunov_drift(v_id, st, policy, cfg, c)
        in_region[k] = spec.region(s_arr[k])
        a1[k] = routing_distribution(policy, st).a1
        side_ok[k] = _side_conditions(v_id, a1[k], c)[0]
    above = V >= spec.B - SLACK_TOL

    def witnesses(mask):
        out = []
        for k in np.flatnonzero(mask)[:MAX_WITNESSES]:
            out.append({"state": list(space.states[k].counts), "V": float(V[k]), "drift": float(drift[k]),
                        "A_1": float(a1[k]),
                        "missing_conditions": _side_conditions(v_id, a1[k], c)[1]})
        return out

    bullets = [_bullet("on_region", above & in_region, -spec.gamma_claim - drift, side_ok, witnesses)]
    if spec.delta_claim is not None:
        ones = np.ones(n, dtype=bool)
        bullets.append(_bullet("off_region", above & ~in_region, spec.delta_claim - drift, ones, witnesses))
    statuses = [bl["status"] for bl in bullets]
    overall = "fail" if "fail" in statuses else "pass" if all(s == "pass" for s in statuses) else "inapplicable"
    return {
        "check": f"drift_{v_id}",
        "N": cfg.N,
        "b": cfg.b,
        "lambda": cfg.lam,
        "coxian": [cfg.coxian.mu1, cfg.coxian.mu2, cfg.coxian.p],
        "policy": policy.label,
        "B": spec.B,
        "region": spec.region_label,
        "gamma_claim": spec.gamma_claim,
        "delta_claim": spec.delta_claim,
        "bullets": bullets,
        "status": overall,
    }


@dataclass
class DriftSpec:
    v_id: str
    B: float
    gamma: float
    delta: float
    nu_max: float
    q_max: float
    region: Callable[[np.ndarray], bool]
    consts: DerivedConstants
    region_label: str = ""

    @property
    def alpha(self) -> float:
        if math.isinf(self.gamma):
            return 0.0
        return self.q_max * self.nu_max / (self.q_max * self.nu_max + self.gamma)

    @property
    def beta(self) -> float:
        if math.isinf(self.gamma):
            return 1.0
        return self.delta / self.gamma + 1.0


def _drift_vector(Q, V):
    return np.asarray(Q @ V).ravel()


def empirical_drift_spec(v_id: str, gen, B: Optional[float] = None,
                         region: Optional[Callable[[np.ndarray], bool]] = None,
                         region_label: Optional[str] = None) -> DriftSpec:
    """Drift constants measured on the reachable class of an assembled generator.

    ``B`` and the region default to the lemma's own; ``gamma`` and ``delta``
    are the tightest values for which both drift conditions hold. An empty
    on-region premise gives ``gamma = inf``.
    """
    c = derived_constants(gen.cfg)
    spec = lemma_spec(v_id, c)
    B = spec.B if B is None else B
    if region is None:
        region, region_label = spec.region, spec.region_label
    idx = np.flatnonzero(gen.reachable)
    s_arr = gen.space.s_array()[idx]
    V = lyapunov_values(v_id, s_arr, c)
    Qr = gen.Q[idx][:, idx].tocsr()
    drift = _drift_vector(Qr, V)
    in_region = np.array([bool(region(s)) for s in s_arr])
    above = V >= B - SLACK_TOL

    coo = Qr.tocoo()
    off = coo.row != coo.col
    rows, cols, rates = coo.row[off], coo.col[off], coo.data[off]
    jumps = V[cols] - V[rows]
    nu_max = float(np.abs(jumps).max()) if jumps.size else 0.0
    up = np.bincount(rows, weights=np.where(jumps > 0, rates, 0.0), minlength=len(idx))
    q_max = float(up.max()) if up.size else 0.0

    on = above & in_region
    gamma = -float(drift[on].max()) if on.any() else math.inf
    offr = above & ~in_region
    delta = max(0.0, float(drift[offr].max())) if offr.any() else 0.0
    return DriftSpec(v_id, B, gamma, delta, nu_max, q_max, region, c, region_label or "")


def tail_bound_verify(pi, space, spec: DriftSpec, j_max: Optional[int] = None) -> dict:
    """Compare exact tails P(V >= B + 2 nu j) with alpha^j + beta P(S not in E).

    ``j_max`` defaults to the first j whose level clears the support of V.
    """
    p = pi.pi if hasattr(pi, "pi") else np.asarray(pi)
    c = spec.consts
    s_arr = space.s_array()
    V = lyapunov_values(spec.v_id, s_arr, c)
    outside = np.array([not spec.region(s) for s in s_arr])
    p_out = float(p @ outside)
    record = {
        "check": f"tail_{spec.v_id}",
        "N": c.N,
        "b": c.b,
        "lambda": c.lam,
        "B": spec.B,
        "region": spec.region_label,
        "gamma": spec.gamma,
        "delta": spec.delta,
        "nu_max": spec.nu_max,
        "q_max": spec.q_max,
        "nu_max_worst_case": 1.0 / c.N,
        "q_max_worst_case": c.mu_max * c.N,
        "p_outside_region": p_out,
    }
    if not spec.gamma > 0:
        record.update(status="inapplicable", reason="gamma <= 0: drift condition fails on this instance",
                      worst_slack=None, rows=[])
        return record
    alpha, beta = spec.alpha, spec.beta
    support = V[p > 0]
    if j_max is None:
        if spec.nu_max > 0:
            j_max = max(0, int(math.ceil((support.max() - spec.B) / (2 * spec.nu_max)))) + 1
        else:
            j_max = 1
    rows = []
    worst = math.inf
    witness = None
    for j in range(j_max + 1):
        level = spec.B + 2 * spec.nu_max * j
        lhs = float(p[V >= level - SLACK_TOL].sum())
        rhs = alpha**j + beta * p_out
        slack = rhs - lhs
        rows.append({"j": j, "level": level, "tail": lhs, "bound": rhs, "slack": slack})
        if slack < worst:
            worst, witness = slack, j
    record.update(
        alpha=alpha,
        beta=beta,
        j_max=j_max,
        worst_slack=worst,
        worst_j=witness,
        status="pass" if worst >= -SLACK_TOL else "fail",
        rows=rows,
    )
    return record
