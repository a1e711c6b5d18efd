"""Event-driven simulation of the aggregate chain with batch-means estimates.

Cost per event is O(b) and does not depend on N. Each replication draws
from its own Philox stream, ``SeedSequence(seed, spawn_key=(replication,))``,
consumed two uniforms per event, so a run is reproducible from
``(cfg, sim)`` on any platform numpy supports.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import ConfigError
from .model import AggregateState, SystemConfig, enabled_transitions
from .policies import PolicyKind, routing_distribution

RNG_ALGORITHM = "numpy Philox4x64-10 via SeedSequence(seed, spawn_key=(replication,))"
BLOCK_UNIFORMS = 1 << 20
MIN_ARRIVALS = 10


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    warmup: Optional[float] = None
    seed: int = 0
    batches: int = 32
    initial_state: Union[str, Sequence[int]] = "empty"
    replication: int = 0
    trace_interval: Optional[float] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        warm = self.warmup_time
        if not 0.0 <= warm < self.horizon:
            raise ConfigError(f"warmup {warm} must lie in [0, horizon={self.horizon})")
        if int(self.batches) != self.batches or self.batches < 10:
            raise ConfigError(f"batches must be an integer >= 10, got {self.batches}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.trace_interval is not None and not self.trace_interval > 0:
            raise ConfigError("trace_interval must be positive")

    @property
    def warmup_time(self) -> float:
        return 0.2 * self.horizon if self.warmup is None else float(self.warmup)


def rng_for(sim: SimConfig) -> np.random.Generator:
    ss = np.random.SeedSequence(int(sim.seed), spawn_key=(int(sim.replication),))
    return np.random.Generator(np.random.Philox(ss))


def initial_counts(cfg: SystemConfig, spec) -> np.ndarray:
    """Flat count vector for "empty", "equilibrium" or an explicit vector."""
    N, b = cfg.N, cfg.b
    out = np.zeros(2 * b + 1, dtype=np.int64)
    if isinstance(spec, str):
        if spec == "empty":
            out[0] = N
        elif spec == "equilibrium":
            cox = cfg.coxian
            n11 = min(N, int(round(N * cfg.lam / cox.mu1)))
            n12 = min(N - n11, int(round(N * cox.p * cfg.lam / cox.mu2)))
            out[1], out[2] = n11, n12
            out[0] = N - n11 - n12
        else:
            raise ConfigError(f"unknown initial state {spec!r}")
        return out
    vec = np.asarray(spec, dtype=np.int64)
    if vec.shape != out.shape or vec.min() < 0 or vec.sum() != N:
        raise ConfigError(f"initial state must be {2 * b + 1} nonnegative counts summing to N={N}")
    return vec.copy()


def gillespie_step(state: AggregateState, policy: PolicyKind, cfg: SystemConfig, rng: np.random.Generator):
    """One jump of the chain: (dwell, event, next state).

    Blocked arrivals are events that leave the state unchanged. With zero
    total rate the chain is frozen and ``(inf, None, state)`` is returned.
    """
    cfg = cfg.replace(policy=policy)
    events = enabled_transitions(state, routing_distribution(policy, state), cfg)
    rates = np.array([ev.rate for ev in events])
    total = rates.sum() if len(events) else 0.0
    if total <= 0.0:
        return math.inf, None, state
    dwell = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    ev = events[min(k, len(events) - 1)]
    return dwell, ev, ev.apply(state)


def batch_ci(values: np.ndarray, level: float) -> float:
    """Half-width of the t-interval on the batch means."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        return math.nan
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * v.std(ddof=1) / math.sqrt(n))


def zero_count_upper(n: int, level: float = 0.95) -> float:
    """Exact upper confidence limit for a proportion when 0 of n trials hit."""
    return 1.0 - (1.0 - level) ** (1.0 / n) if n > 0 else 1.0


@dataclass
class Estimate:
    mean: float
    ci95: float
    ci99: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "ci95": self.ci95, "ci99": self.ci99}


def _estimate(batch_values: np.ndarray, point: Optional[float] = None) -> Estimate:
    bv = np.asarray(batch_values, dtype=float)
    m = float(bv.mean()) if point is None else float(point)
    return Estimate(m, batch_ci(bv, 0.95), batch_ci(bv, 0.99))


@dataclass
class SimReport:
    N: int
    b: int
    lam: float
    policy: str
    seed: int
    replication: int
    horizon: float
    warmup: float
    batches: int
    E_S: list
    mean_total: Estimate
    p_wait: Estimate
    p_block: Estimate
    mean_wait: Optional[Estimate]
    excess_mean: Optional[Estimate]
    p_not_ssc: Optional[Estimate]
    a1_time_average: Estimate
    p_wait_observed: float
    p_block_observed: float
    arrivals: int
    events: int
    upper_bounds: dict
    flags: list
    wall_clock: float = 0.0
    simulator: str = "aggregate"
    rng: str = RNG_ALGORITHM
    trace: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def insufficient(self) -> bool:
        return "insufficient data" in self.flags

    def to_dict(self, timing: bool = False) -> dict:
        def opt(e):
            return None if e is None else e.to_dict()

        out = {
            "simulator": self.simulator,
            "N": self.N,
            "b": self.b,
            "lambda": self.lam,
            "policy": self.policy,
            "seed": self.seed,
            "replication": self.replication,
            "rng": self.rng,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "batches": self.batches,
            "E_S": [[e.to_dict() for e in row] for row in self.E_S],
            "mean_total": self.mean_total.to_dict(),
            "p_wait": self.p_wait.to_dict(),
            "p_block": self.p_block.to_dict(),
            "mean_wait": opt(self.mean_wait),
            "excess_mean": opt(self.excess_mean),
            "p_not_ssc": opt(self.p_not_ssc),
            "a1_time_average": self.a1_time_average.to_dict(),
            "p_wait_observed": self.p_wait_observed,
            "p_block_observed": self.p_block_observed,
            "arrivals": self.arrivals,
            "events": self.events,
            "upper_bounds": self.upper_bounds,
            "flags": list(self.flags),
        }
        if timing:
            out["wall_clock"] = self.wall_clock
        return out

    def write_json(self, path, timing: bool = False) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(timing), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "total_s"])
            if self.trace is not None:
                for t, v in self.trace:
                    w.writerow([format(float(t), ".17g"), format(float(v), ".17g")])


def _ssc_params(cfg: SystemConfig):
    if not cfg.coxian.normalized or cfg.N < 2:
        return np.zeros(6), False
    from .stein.constants import BOUNDARY_TOL, derived_constants

    c = derived_constants(cfg)
    shift = (c.spread - c.mu1) * c.log_ratio
    return np.array([c.lam, shift, c.L11, c.L12, c.eta, BOUNDARY_TOL]), True


def summarize(cfg: SystemConfig, sim: SimConfig, tacc: np.ndarray, aacc: np.ndarray, events: int,
              use_ssc: bool, simulator: str = "aggregate") -> SimReport:
    """Turn per-batch accumulators into a report."""
    b = cfg.b
    lengths = tacc[:, 2 * b + K.T_LEN]
    tm = tacc / lengths[:, None]
    E_S = [[_estimate(tm[:, 2 * i + m]) for m in range(2)] for i in range(b)]
    total = _estimate(tm[:, 2 * b + K.T_TOTAL])
    a1_time = _estimate(tm[:, 2 * b + K.T_A1])

    counts = aacc[:, K.A_COUNT]
    n_arr = int(counts.sum())
    flags = []
    with np.errstate(invalid="ignore", divide="ignore"):
        pw_b = aacc[:, K.A_SUM_A1] / counts
        pb_b = aacc[:, K.A_SUM_AB] / counts
    if n_arr < MIN_ARRIVALS or (counts == 0).any():
        flags.append("insufficient data")
    if n_arr:
        pw_point = aacc[:, K.A_SUM_A1].sum() / n_arr
        pb_point = aacc[:, K.A_SUM_AB].sum() / n_arr
    else:
        pw_point = pb_point = math.nan
    pw_valid = pw_b[counts > 0]
    pb_valid = pb_b[counts > 0]
    p_wait = _estimate(pw_valid, pw_point) if pw_valid.size else Estimate(math.nan, math.nan, math.nan)
    p_block = _estimate(pb_valid, pb_point) if pb_valid.size else Estimate(math.nan, math.nan, math.nan)

    mean_wait = None
    accepted = cfg.lam * (1.0 - pb_b)
    if cfg.lam > 0 and np.all(accepted[counts > 0] > 0) and pw_valid.size:
        mw_b = tm[counts > 0, 2 * b + K.T_TOTAL] / accepted[counts > 0] - 1.0
        mean_wait = _estimate(mw_b, total.mean / (cfg.lam * (1.0 - pb_point)) - 1.0)

    excess = not_ssc = None
    upper = {}
    if use_ssc:
        excess = _estimate(tm[:, 2 * b + K.T_EXCESS])
        not_ssc = _estimate(tm[:, 2 * b + K.T_NOT_SSC])
        if tacc[:, 2 * b + K.T_NOT_SSC].sum() == 0:
            upper["p_not_ssc"] = zero_count_upper(events)
    blocked = int(aacc[:, K.A_BLOCKED].sum())
    busy = int(aacc[:, K.A_BUSY].sum())
    if blocked == 0:
        upper["p_block_observed"] = zero_count_upper(n_arr)
    if busy == 0:
        upper["p_wait_observed"] = zero_count_upper(n_arr)
    return SimReport(
        N=cfg.N,
        b=b,
        lam=cfg.lam,
        policy=cfg.policy.label,
        seed=int(sim.seed),
        replication=int(sim.replication),
        horizon=float(sim.horizon),
        warmup=sim.warmup_time,
        batches=int(sim.batches),
        E_S=E_S,
        mean_total=total,
        p_wait=p_wait,
        p_block=p_block,
        mean_wait=mean_wait,
        excess_mean=excess,
        p_not_ssc=not_ssc,
        a1_time_average=a1_time,
        p_wait_observed=busy / n_arr if n_arr else math.nan,
        p_block_observed=blocked / n_arr if n_arr else math.nan,
        arrivals=n_arr,
        events=int(events),
        upper_bounds=upper,
        flags=flags,
        simulator=simulator,
    )


def run(cfg: SystemConfig, sim: SimConfig) -> SimReport:
    """Simulate one replication and return batch-means estimates."""
    started = time.perf_counter()
    policy = cfg.policy
    b = cfg.b
    counts = initial_counts(cfg, sim.initial_state)
    warm = sim.warmup_time
    edges = warm + (sim.horizon - warm) * np.arange(sim.batches + 1) / sim.batches
    edges[-1] = sim.horizon
    tacc = np.zeros((sim.batches, 2 * b + K.N_TIME_EXTRA))
    aacc = np.zeros((sim.batches, K.N_ARRIVAL))
    ssc, use_ssc = _ssc_params(cfg)
    if sim.trace_interval:
        n_trace = int(math.floor(sim.horizon / sim.trace_interval)) + 1
        trace_state = np.array([0.0, float(sim.trace_interval), 0.0])
    else:
        n_trace = 0
        trace_state = np.array([math.inf, 1.0, 0.0])
    trace_t = np.zeros(n_trace)
    trace_v = np.zeros(n_trace)
    rng = rng_for(sim)
    code = K.POLICY_CODES[policy.kind]
    d = policy.d or 1
    t, kb, events, done = 0.0, 0, 0, False
    while not done:
        u = rng.random(BLOCK_UNIFORMS)
        t, kb, events, done = K.simulate_block(
            counts, t, float(sim.horizon), edges, kb, u, cfg.lam, cfg.coxian.mu1, cfg.coxian.mu2,
            cfg.coxian.p, code, d, policy.with_replacement, ssc, use_ssc, tacc, aacc,
            trace_t, trace_v, trace_state, events,
        )
    report = summarize(cfg, sim, tacc, aacc, events, use_ssc)
    if n_trace:
        k = int(trace_state[2])
        report.trace = np.column_stack([trace_t[:k], trace_v[:k]])
    report.wall_clock = time.perf_counter() - started
    return report


def run_replications(cfg: SystemConfig, sim: SimConfig, replications: int) -> list:
    """Independent replications on streams 0..replications-1, ordered by stream."""
    from dataclasses import replace

    return [run(cfg, replace(sim, replication=r)) for r in range(replications)]
