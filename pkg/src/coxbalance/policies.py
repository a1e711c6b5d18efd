"""Routing distributions of JSQ, JIQ, I1F and power-of-d on the aggregate state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError
from .model import AggregateState, SystemConfig

KINDS = ("jsq", "jiq", "i1f", "pod")
SAMPLINGS = ("without_replacement", "with_replacement")


@dataclass(frozen=True)
class PolicyKind:
    kind: str
    d: Optional[int] = None
    sampling: str = "without_replacement"

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown policy {self.kind!r}; expected one of {KINDS}")
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f"unknown pod sampling {self.sampling!r}")
        if kind == "pod":
            if self.d is None or int(self.d) != self.d or self.d < 1:
                raise ConfigError(f"pod needs an integer d >= 1, got {self.d}")
            object.__setattr__(self, "d", int(self.d))
        elif self.d is not None:
            raise ConfigError(f"d only applies to pod, not {kind}")

    @property
    def with_replacement(self) -> bool:
        return self.sampling == "with_replacement"

    @property
    def label(self) -> str:
        if self.kind != "pod":
            return self.kind
        suffix = ",repl" if self.with_replacement else ""
        return f"pod(d={self.d}{suffix})"


JSQ = PolicyKind("jsq")
JIQ = PolicyKind("jiq")
I1F = PolicyKind("i1f")


def pod(d: int, sampling: str = "without_replacement") -> PolicyKind:
    return PolicyKind("pod", d, sampling)


@dataclass(frozen=True)
class RoutingDistribution:
    """``r[j, m-1]``: probability an arrival picks a server of class (j, m).

    Row ``b`` is the blocked mass (the chosen server is full).
    """

    r: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2 or r.shape[1] != 2:
            raise ValueError(f"routing matrix must be (b+1) x 2, got {r.shape}")
        if (r < 0).any() or abs(r.sum() - 1.0) > 1e-12:
            raise ValueError(f"routing matrix is not a distribution (sum={r.sum()})")
        object.__setattr__(self, "r", r)

    @property
    def b(self) -> int:
        return self.r.shape[0] - 1

    def A(self, i: int, m: int) -> float:
        """Probability of routing to a server with at least i jobs, phase m."""
        return float(self.r[i:, m - 1].sum())

    def A_level(self, i: int) -> float:
        return float(self.r[i:].sum())

    @property
    def a1(self) -> float:
        return 1.0 - float(self.r[0, 0])

    @property
    def blocked(self) -> float:
        """A_b(s): the mass sent to full servers."""
        return float(self.r[self.b].sum())


def _tail_probability(tail: int, N: int, d: int, with_replacement: bool) -> Fraction:
    """P(all d sampled servers hold at least j jobs), tail = #servers with >= j jobs."""
    if with_replacement:
        return Fraction(tail, N) ** d
    return Fraction(math.comb(tail, d), math.comb(N, d))


def level_weights(policy: PolicyKind, levels) -> np.ndarray:
    """Probability that an arrival joins a server with exactly j jobs, j = 0..b."""
    c = [int(x) for x in levels]
    N = sum(c)
    w = [Fraction(0)] * len(c)
    kind = policy.kind
    if kind == "jsq":
        j = next(i for i, x in enumerate(c) if x)
        w[j] = Fraction(1)
    elif kind in ("jiq", "i1f"):
        preferred = (0,) if kind == "jiq" else (0, 1)
        for j in preferred:
            if j < len(c) and c[j]:
                w[j] = Fraction(1)
                break
        else:
            w = [Fraction(x, N) for x in c]
    else:
        d = policy.d
        if d > N and not policy.with_replacement:
            raise ConfigError(f"pod with d={d} > N={N} sampling without replacement")
        tails = np.cumsum(c[::-1])[::-1].tolist() + [0]
        probs = [_tail_probability(t, N, d, policy.with_replacement) for t in tails]
        w = [probs[j] - probs[j + 1] for j in range(len(c))]
    return np.array([float(x) for x in w])


def routing_distribution(policy: PolicyKind, state: AggregateState) -> RoutingDistribution:
    """Routing law of ``policy`` at ``state``.

    Ties among servers of the chosen queue length are broken uniformly, so
    the phase split inside level j is n[j][1] : n[j][2].
    """
    levels = state.level_counts()
    w = level_weights(policy, levels)
    r = np.zeros((state.b + 1, 2))
    r[0, 0] = w[0]
    m = state.matrix()
    for j in range(1, state.b + 1):
        if w[j] > 0:
            r[j] = w[j] * m[j - 1] / levels[j]
    return RoutingDistribution(r)


def a1(policy: PolicyKind, state: AggregateState) -> float:
    """Probability an arrival is routed to a busy server."""
    return routing_distribution(policy, state).a1


@dataclass
class MembershipReport:
    policy: str
    N: int
    threshold: float
    bound: float
    holds: bool
    threshold_exceeds_one: bool
    checked: int
    exhaustive: bool
    worst_excess: float
    witnesses: list

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "N": self.N,
            "threshold": self.threshold,
            "bound": self.bound,
            "holds": self.holds,
            "threshold_exceeds_one": self.threshold_exceeds_one,
            "checked": self.checked,
            "exhaustive": self.exhaustive,
            "worst_excess": self.worst_excess,
            "witnesses": [list(s.counts) for s in self.witnesses],
        }


def membership_threshold(cfg: SystemConfig) -> float:
    """s_1 level below which members of the policy set must route to idle servers."""
    cox = cfg.coxian
    w_l = min((1.0 - cox.p) * cox.mu1, cox.mu2)
    N = cfg.N
    return cfg.lam + (1.0 + cox.mu1 + cox.mu2) / w_l * math.log(N) / math.sqrt(N)


def _sampled_states(N: int, b: int, n_random: int, seed: int) -> Iterable[AggregateState]:
    # one canonical state per busy count, then uniform random compositions
    for busy in range(N + 1):
        yield AggregateState((N - busy, busy) + (0,) * (2 * b - 1))
    rng = np.random.default_rng(seed)
    k = 2 * b + 1
    for _ in range(n_random):
        bars = np.sort(rng.choice(N + k - 1, k - 1, replace=False))
        edges = np.concatenate(([-1], bars, [N + k - 1]))
        yield AggregateState(tuple(int(x) for x in np.diff(edges) - 1))


def pi_membership_check(
    policy: PolicyKind,
    cfg: SystemConfig,
    states: Optional[Iterable[AggregateState]] = None,
    *,
    enumerate_limit: int = 200_000,
    n_random: int = 2000,
    seed: int = 0,
    max_witnesses: int = 10,
) -> MembershipReport:
    """Check A_1(s) <= N^-1/2 on every state with s_1 at or below the threshold.

    When the threshold reaches one the condition would include the all-busy
    states, which no policy can meet; the check is then restricted to states
    with at least one idle server and ``threshold_exceeds_one`` is set.
    """
    N, b = cfg.N, cfg.b
    threshold = membership_threshold(cfg)
    exceeds = threshold >= 1.0
    bound = 1.0 / math.sqrt(N)
    exhaustive = False
    if states is None:
        if math.comb(N + 2 * b, 2 * b) <= enumerate_limit:
            from .exact import enumerate_states

            states = enumerate_states(N, b).states
            exhaustive = True
        else:
            states = _sampled_states(N, b, n_random, seed)
    checked = 0
    worst = -math.inf
    witnesses = []
    for st in states:
        busy = N - st.n_idle
        s1 = busy / N
        if exceeds:
            if busy == N:
                continue
        elif s1 > threshold + 1e-12:
            continue
        checked += 1
        excess = a1(policy, st) - bound
        worst = max(worst, excess)
        if excess > 1e-12 and len(witnesses) < max_witnesses:
            witnesses.append(st)
    return MembershipReport(
        policy=policy.label,
        N=N,
        threshold=threshold,
        bound=bound,
        holds=not witnesses,
        threshold_exceeds_one=exceeds,
        checked=checked,
        exhaustive=exhaustive,
        worst_excess=worst if checked else float("nan"),
        witnesses=witnesses,
    )
