"""Load-dependent constants, collapse regions and closed-form performance bounds."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..model import AggregateState, SystemConfig, q_to_s

# slack used when a state sits on a region boundary up to rounding
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class DerivedConstants:
    N: int
    b: int
    lam: float
    mu1: float
    mu2: float
    p: float
    w_u: float
    w_l: float
    mu_max: float
    k: float
    c1: float
    eta: float
    L11: float
    L12: float
    T_Q_bar: float

    @property
    def log_ratio(self) -> float:
        """log N / sqrt(N)."""
        return math.log(self.N) / math.sqrt(self.N)

    @property
    def spread(self) -> float:
        """(1 + mu1 + mu2) / w_l, which also equals k - c1."""
        return (1.0 + self.mu1 + self.mu2) / self.w_l

    def to_dict(self) -> dict:
        return asdict(self)


def derived_constants(cfg: SystemConfig) -> DerivedConstants:
    cox = cfg.coxian
    if not cox.normalized:
        raise ConfigError(
            f"theorem constants need mean-one service, got mean {cox.mean!r}"
        )
    mu1, mu2, p = cox.mu1, cox.mu2, cox.p
    N, b, lam = cfg.N, cfg.b, cfg.lam
    w_u = max((1.0 - p) * mu1, mu2)
    w_l = min((1.0 - p) * mu1, mu2)
    spread = (1.0 + mu1 + mu2) / w_l
    ratio = w_u * b / w_l
    k = (1.0 + ratio) * (spread + 2.0 * mu1)
    c1 = ratio * (spread + 2.0 * mu1) + 2.0 * mu1
    L = math.log(N) / math.sqrt(N)
    return DerivedConstants(
        N=N,
        b=b,
        lam=lam,
        mu1=mu1,
        mu2=mu2,
        p=p,
        w_u=w_u,
        w_l=w_l,
        mu_max=max(mu1, mu2),
        k=k,
        c1=c1,
        eta=lam + k * L,
        L11=lam / mu1 - L,
        L12=p * lam / mu2 - mu1 * L,
        T_Q_bar=min(1.0 / mu1, 1.0 / mu2),
    )


def effective_alpha(cfg: SystemConfig) -> Optional[float]:
    """Heavy-traffic exponent: configured, else solved from lam = 1 - N^-alpha."""
    if cfg.heavy_traffic is not None:
        return cfg.heavy_traffic[0]
    if cfg.N > 1 and 0.0 < cfg.lam < 1.0:
        return -math.log(1.0 - cfg.lam) / math.log(cfg.N)
    return None


def large_n_threshold(c: DerivedConstants) -> float:
    """Lower limit on log N required by the collapse and main bounds."""
    m = c.mu_max
    return 3.5 / min(c.mu1 / (16 * m), c.mu2 / (12 * m), c.mu1 * c.mu2 / (40 * m))


def n_condition(c: DerivedConstants, alpha: Optional[float]) -> dict:
    log_n = math.log(c.N)
    lower = log_n >= large_n_threshold(c)
    upper = None
    if alpha is not None:
        upper = c.w_l * c.N ** (0.5 - alpha) / (1.0 + c.mu1 + c.mu2) >= log_n
    return {
        "log_n": log_n,
        "log_n_required": large_n_threshold(c),
        "lower_ok": lower,
        "upper_ok": upper,
        "holds": bool(lower and upper),
    }


@dataclass(frozen=True)
class SSCFlags:
    in_ssc1: bool
    in_ssc2: bool
    in_tilde1: bool
    in_tilde2: bool

    @property
    def in_ssc(self) -> bool:
        return self.in_ssc1 or self.in_ssc2


def ssc_flags(state, c: DerivedConstants) -> SSCFlags:
    """Membership of a state (or a b x 2 s-matrix) in the collapse regions.

    The two outer regions admit a ``BOUNDARY_TOL`` slack so that the
    containment of the inner intersection survives rounding.
    """
    s = q_to_s(state) if isinstance(state, AggregateState) else np.asarray(state, dtype=float)
    L = c.log_ratio
    s11, s12 = s[0, 0], s[0, 1]
    s1 = s11 + s12
    total = float(s.sum())
    upper_levels = total - s1
    in_ssc1 = (
        s1 >= c.lam + (c.spread - c.mu1) * L - BOUNDARY_TOL
        and s11 >= c.L11 - BOUNDARY_TOL
        and s12 >= c.L12 - BOUNDARY_TOL
    )
    in_ssc2 = total <= c.eta + BOUNDARY_TOL
    in_tilde1 = s11 >= c.L11 and s12 >= c.L12
    in_tilde2 = min(c.eta - s1, upper_levels) <= (c.c1 + c.mu1) * L
    return SSCFlags(bool(in_ssc1), bool(in_ssc2), bool(in_tilde1), bool(in_tilde2))


def _departure(c: DerivedConstants, s11: float, s12: float) -> float:
    return (1.0 - c.p) * c.mu1 * s11 + c.mu2 * s12


def ssc1_min_departure(c: DerivedConstants, grid: int = 100, width: float = 0.5) -> dict:
    """Minimise the departure rate over the first collapse region.

    The region is a polyhedron in (s11, s12) whose lower boundary is the
    segment between two corners; the minimum of a positive linear objective
    sits at one of them. A ``grid x grid`` sweep over the region (corners
    included) and a second sweep over a coarser box cross-check that.
    """
    L = c.log_ratio
    floor = c.lam + (c.spread - c.mu1) * L
    corner1 = (c.L11, floor - c.L11)
    corner2 = (floor - c.L12, c.L12)
    d1 = _departure(c, *corner1)
    d2 = _departure(c, *corner2)
    target = c.lam + L
    case1_claim = c.lam + (1.0 + c.mu2) * L
    case2_claim = c.lam + (1.0 + c.mu1 + c.mu2 - c.mu1 * c.mu2) * L

    u = np.linspace(0.0, 1.0, grid)
    v = np.linspace(0.0, width, grid)
    uu, vv = np.meshgrid(u, v)
    gs11 = corner1[0] + uu * (corner2[0] - corner1[0]) + vv
    gs12 = corner1[1] + uu * (corner2[1] - corner1[1]) + vv
    grid_vals = _departure(c, gs11, gs12)

    bs11, bs12 = np.meshgrid(
        np.linspace(c.L11, c.L11 + 1.0, grid), np.linspace(c.L12, c.L12 + 1.0, grid)
    )
    inside = bs11 + bs12 >= floor
    box_min = float(_departure(c, bs11, bs12)[inside].min()) if inside.any() else math.inf

    corner_min = min(d1, d2)
    grid_min = float(grid_vals.min())
    return {
        "corner1": corner1,
        "corner2": corner2,
        "d1_corner1": d1,
        "d1_corner2": d2,
        "min": corner_min,
        "argmin": "corner1" if d1 <= d2 else "corner2",
        "target": target,
        "min_ok": corner_min >= target - 1e-12,
        "case1_claim": case1_claim,
        "case1_ok": d1 >= case1_claim - 1e-12,
        "case2_claim": case2_claim,
        "case2_ok": d2 >= case2_claim - 1e-12,
        "case2_claim_ok": case2_claim >= target - 1e-12,
        "grid_points": int(grid_vals.size),
        "grid_min": grid_min,
        "grid_gap": grid_min - corner_min,
        "box_min": box_min,
        "corners_feasible": all(a + b_ <= 1.0 for a, b_ in (corner1, corner2)),
    }


def theorem_bound(c: DerivedConstants) -> float:
    """Upper bound on E[max(sum_i S_i - eta, 0)]."""
    return 7.0 * c.mu_max / (math.sqrt(c.N) * math.log(c.N))


def corollary_bounds(c: DerivedConstants, cfg: SystemConfig, alpha: Optional[float] = None) -> dict:
    """Waiting-time, waiting-probability and blocking bounds with their side conditions."""
    if alpha is None:
        alpha = effective_alpha(cfg)
    N, lam, b, mu = c.N, c.lam, c.b, c.mu_max
    log_n = math.log(N)
    root = math.sqrt(N)
    L = log_n / root
    slack = b - lam
    cond = n_condition(c, alpha)
    out = {
        "alpha": alpha,
        "theorem_bound": theorem_bound(c),
        "E_W_bound": 2 * c.k * L + (14 * mu + 16 * mu / slack) / (root * log_n),
        "P_W_bound_jsq_pod": 1.0 / N
        + (mu / lam) * (c.k * L + (7 * mu + 8 * mu / slack) / (root * log_n)),
        "P_B_bound": 8 * mu / slack / (root * log_n),
        "P_B_bound_pod": 1.0 / N + 8 * mu / slack / (root * log_n),
        "P_W_bound_jiq_i1f": None,
        "n_condition": cond,
        "theorem_applicable": cond["holds"],
    }
    if alpha is not None:
        gap = N ** (0.5 - alpha)
        out["P_W_bound_jiq_i1f"] = 14 * mu / (gap * log_n)
        jsq_side = root >= 8 * c.k * log_n / slack + 8 * b * gap / (slack * c.mu1)
        jiq_side = gap >= 2 * c.k * log_n
        out["jsq_pod_side_condition"] = jsq_side
        out["jiq_i1f_side_condition"] = jiq_side
        out["pod_min_d"] = c.mu1 * N**alpha * log_n
        out["jsq_pod_applicable"] = bool(cond["holds"] and jsq_side)
        out["jiq_i1f_applicable"] = bool(cond["holds"] and jiq_side)
    else:
        out["jsq_pod_applicable"] = out["jiq_i1f_applicable"] = False
    if cfg.policy.kind == "pod":
        out["pod_d_ok"] = alpha is not None and cfg.policy.d >= out["pod_min_d"]
    return out


def corollary_bound_for(policy_kind: str, bounds: dict) -> Optional[float]:
    """The waiting-probability bound matching a policy family."""
    if policy_kind in ("jsq", "pod"):
        return bounds["P_W_bound_jsq_pod"]
    return bounds["P_W_bound_jiq_i1f"]
