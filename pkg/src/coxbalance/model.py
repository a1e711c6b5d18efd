"""Aggregate CTMC for N servers with Coxian-2 service.

A server is in class ``(j, m)`` when it holds ``j`` jobs and the job in
service is in phase ``m``; class ``(0, 1)`` is idle. The chain state is the
vector of server counts per class, flattened as::

    [n_idle, n[1][1], n[1][2], n[2][1], n[2][2], ..., n[b][1], n[b][2]]

Fractions ``q`` and suffix sums ``s`` are derived views; all bookkeeping
stays in integers so ``q <-> s`` conversions are exact.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from .errors import ConfigError, RoutingError

if TYPE_CHECKING:
    from .policies import PolicyKind, RoutingDistribution

NORMALIZATION_TOL = 1e-12

ARRIVAL = "arrival"
PHASE1_DEPARTURE = "phase1_departure"
PHASE1_TO_PHASE2 = "phase1_to_phase2"
PHASE2_DEPARTURE = "phase2_departure"


def class_index(j: int, m: int) -> int:
    """Position of class (j, m) in the flat count vector."""
    if j == 0:
        if m != 1:
            raise ValueError("class (0, 2) does not exist")
        return 0
    return 2 * j - 1 + (m - 1)


@dataclass(frozen=True)
class CoxianParams:
    """Coxian-2 service: phase 1 at rate mu1, then phase 2 at rate mu2 w.p. p."""

    mu1: float
    mu2: float
    p: float

    def __post_init__(self):
        if not (self.mu1 > 0 and math.isfinite(self.mu1)):
            raise ConfigError(f"mu1 must be positive and finite, got {self.mu1}")
        if not (self.mu2 > 0 and math.isfinite(self.mu2)):
            raise ConfigError(f"mu2 must be positive and finite, got {self.mu2}")
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"p must lie in [0, 1), got {self.p}")

    @classmethod
    def mean_one(cls, mu1: float, p: float) -> "CoxianParams":
        """Pick mu2 so that the mean service time is one (needs mu1 > 1 when p > 0)."""
        if p == 0.0:
            if mu1 != 1.0:
                raise ConfigError("with p = 0 a mean-one law needs mu1 = 1")
            return cls(1.0, 1.0, 0.0)
        if mu1 <= 1.0:
            raise ConfigError("mu1 must exceed 1 for a mean-one law with p > 0")
        return cls(mu1, p / (1.0 - 1.0 / mu1), p)

    @property
    def mean(self) -> float:
        return mean_service_time(self)

    @property
    def normalized(self) -> bool:
        return abs(self.mean - 1.0) <= NORMALIZATION_TOL

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` service times."""
        t = rng.exponential(1.0 / self.mu1, size)
        second = rng.random(size) < self.p
        t[second] += rng.exponential(1.0 / self.mu2, int(second.sum()))
        return t


def mean_service_time(params: CoxianParams) -> float:
    return 1.0 / params.mu1 + params.p / params.mu2


@dataclass(frozen=True)
class SystemConfig:
    """N servers with at most b jobs each, Poisson(lam * N) arrivals.

    ``heavy_traffic`` is an optional ``(alpha, beta)`` pair; when present
    ``lam`` must equal ``1 - beta * N**-alpha``. Use :meth:`heavy` to build
    such a config.
    """

    N: int
    b: int
    lam: float
    coxian: CoxianParams
    policy: "PolicyKind"
    heavy_traffic: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if int(self.b) != self.b or self.b < 1:
            raise ConfigError(f"b must be a positive integer, got {self.b}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.heavy_traffic is not None:
            alpha, beta = self.heavy_traffic
            if not 0.0 < alpha < 0.5:
                raise ConfigError(f"alpha must lie in (0, 0.5), got {alpha}")
            if beta <= 0:
                raise ConfigError(f"beta must be positive, got {beta}")
            expected = 1.0 - beta * self.N ** (-alpha)
            if abs(self.lam - expected) > 1e-12:
                raise ConfigError(
                    f"lambda {self.lam} disagrees with 1 - beta*N^-alpha = {expected}"
                )
        d = getattr(self.policy, "d", None)
        if d is not None and d > self.N and not getattr(self.policy, "with_replacement", False):
            raise ConfigError(f"pod needs d <= N when sampling without replacement (d={d}, N={self.N})")

    @classmethod
    def heavy(cls, N, b, alpha, coxian, policy, beta=1.0) -> "SystemConfig":
        lam = 1.0 - beta * N ** (-alpha)
        if not 0.0 < lam < 1.0:
            raise ConfigError(f"1 - beta*N^-alpha = {lam} is not in (0, 1)")
        return cls(N, b, lam, coxian, policy, (alpha, beta))

    @property
    def arrival_rate(self) -> float:
        return self.lam * self.N

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class AggregateState:
    counts: tuple

    def __post_init__(self):
        c = tuple(int(x) for x in self.counts)
        if len(c) < 3 or len(c) % 2 == 0:
            raise ValueError(f"count vector must have length 2b+1, got {len(c)}")
        if min(c) < 0:
            raise ValueError(f"negative server count in {c}")
        if sum(c) == 0:
            raise ValueError("a state needs at least one server")
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, N: int, b: int) -> "AggregateState":
        return cls((N,) + (0,) * (2 * b))

    @classmethod
    def from_matrix(cls, n_idle: int, n) -> "AggregateState":
        """Build from the idle count and a b x 2 matrix ``n[j-1][m-1]``."""
        flat = [int(n_idle)]
        for row in n:
            flat.extend(int(x) for x in row)
        return cls(tuple(flat))

    @property
    def b(self) -> int:
        return (len(self.counts) - 1) // 2

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def n_idle(self) -> int:
        return self.counts[0]

    def n(self, j: int, m: int) -> int:
        return self.counts[class_index(j, m)]

    def matrix(self) -> np.ndarray:
        return np.asarray(self.counts[1:], dtype=np.int64).reshape(self.b, 2)

    def level_counts(self) -> np.ndarray:
        """Servers holding exactly j jobs, j = 0..b."""
        m = self.matrix()
        return np.concatenate(([self.n_idle], m.sum(axis=1)))

    def s_counts(self) -> np.ndarray:
        """N * s as integers: servers with at least i jobs in phase m."""
        return np.cumsum(self.matrix()[::-1], axis=0)[::-1]

    def q(self) -> np.ndarray:
        """(b+1) x 2 fractions; row 0 is (idle, 0)."""
        out = np.zeros((self.b + 1, 2))
        out[0, 0] = self.n_idle / self.N
        out[1:] = self.matrix() / self.N
        return out

    def s(self) -> np.ndarray:
        return q_to_s(self)

    def total_jobs(self) -> int:
        levels = np.arange(1, self.b + 1)
        return int((self.matrix().sum(axis=1) * levels).sum())

    def total_s(self) -> float:
        """sum_i s_i, the mean number of jobs per server."""
        return self.total_jobs() / self.N

    def shift(self, src: int, dst: int) -> "AggregateState":
        """Move one server between flat indices."""
        c = list(self.counts)
        c[src] -= 1
        c[dst] += 1
        return AggregateState(tuple(c))


def q_to_s(state: AggregateState) -> np.ndarray:
    """b x 2 matrix of s_{i,m} = sum_{j>=i} q_{j,m}."""
    return state.s_counts() / state.N


def s_to_q(s, N: int) -> AggregateState:
    """Inverse of :func:`q_to_s`; ``N * s`` must be integral."""
    s = np.asarray(s, dtype=float)
    sc = np.rint(s * N).astype(np.int64)
    if np.max(np.abs(sc - s * N)) > 1e-6:
        raise ValueError("N * s is not integral")
    n = sc.copy()
    n[:-1] -= sc[1:]
    if (n < 0).any():
        raise ValueError("s columns are not nonincreasing")
    idle = N - int(n.sum())
    if idle < 0:
        raise ValueError("s_{1,1} + s_{1,2} exceeds one")
    return AggregateState.from_matrix(idle, n)


@dataclass(frozen=True)
class TransitionEvent:
    """One enabled transition.

    For arrivals ``level`` is the queue length j of the receiving server
    *before* the arrival and ``phase`` its in-service phase; ``level == b``
    means the job is blocked. For service events ``level`` is the queue
    length i of the server where the event fires.
    """

    kind: str
    level: int
    phase: int
    rate: float

    def blocked(self, b: int) -> bool:
        return self.kind == ARRIVAL and self.level == b

    def apply(self, state: AggregateState) -> AggregateState:
        i, b = self.level, state.b
        if self.kind == ARRIVAL:
            if i == b:
                return state
            return state.shift(class_index(i, self.phase), class_index(i + 1, self.phase))
        if self.kind == PHASE1_DEPARTURE:
            return state.shift(class_index(i, 1), class_index(i - 1, 1))
        if self.kind == PHASE1_TO_PHASE2:
            return state.shift(class_index(i, 1), class_index(i, 2))
        if self.kind == PHASE2_DEPARTURE:
            return state.shift(class_index(i, 2), class_index(i - 1, 1))
        raise ValueError(f"unknown event kind {self.kind!r}")


def _check_routing(state: AggregateState, routing: "RoutingDistribution") -> np.ndarray:
    r = np.asarray(routing.r, dtype=float)
    b = state.b
    if r.shape != (b + 1, 2):
        raise RoutingError(f"routing has shape {r.shape}, expected {(b + 1, 2)}")
    if r[0, 1] != 0.0:
        raise RoutingError("class (0, 2) cannot receive mass")
    if r[0, 0] > 0 and state.n_idle == 0:
        raise RoutingError("routing mass on idle servers but none are idle")
    m = state.matrix()
    bad = (r[1:] > 0) & (m == 0)
    if bad.any():
        j, ph = np.argwhere(bad)[0]
        raise RoutingError(f"routing mass on empty class ({j + 1}, {ph + 1})")
    return r


def enabled_transitions(
    state: AggregateState, routing: "RoutingDistribution", cfg: SystemConfig
) -> list:
    """All transitions with positive rate out of ``state``, blocked arrivals included."""
    r = _check_routing(state, routing)
    cox = cfg.coxian
    lam_n = cfg.lam * state.N
    events = []
    if lam_n > 0:
        if r[0, 0] > 0:
            events.append(TransitionEvent(ARRIVAL, 0, 1, lam_n * r[0, 0]))
        for j in range(1, state.b + 1):
            for m in (1, 2):
                if r[j, m - 1] > 0:
                    events.append(TransitionEvent(ARRIVAL, j, m, lam_n * r[j, m - 1]))
    d1 = (1.0 - cox.p) * cox.mu1
    up = cox.p * cox.mu1
    for i in range(1, state.b + 1):
        n1, n2 = state.n(i, 1), state.n(i, 2)
        if n1:
            if d1 > 0:
                events.append(TransitionEvent(PHASE1_DEPARTURE, i, 1, d1 * n1))
            if up > 0:
                events.append(TransitionEvent(PHASE1_TO_PHASE2, i, 1, up * n1))
        if n2:
            events.append(TransitionEvent(PHASE2_DEPARTURE, i, 2, cox.mu2 * n2))
    return events


def apply_generator(
    f: Callable[[AggregateState], float],
    state: AggregateState,
    routing: Optional["RoutingDistribution"],
    cfg: SystemConfig,
) -> float:
    """(G f)(state) = sum over events of rate * (f(next) - f(state))."""
    if routing is None:
        from .policies import routing_distribution

        routing = routing_distribution(cfg.policy, state)
    f0 = f(state)
    total = 0.0
    for ev in enabled_transitions(state, routing, cfg):
        if ev.blocked(state.b):
            continue
        total += ev.rate * (f(ev.apply(state)) - f0)
    return total


def total_departure_rate(state: AggregateState, coxian: CoxianParams) -> float:
    """Per-server departure rate (1-p) mu1 s_{1,1} + mu2 s_{1,2}."""
    s = q_to_s(state)
    return (1.0 - coxian.p) * coxian.mu1 * s[0, 0] + coxian.mu2 * s[0, 1]
