"""Exact stationary analysis of the aggregate chain for small N.

The whole count space is enumerated, the generator assembled from the same
transition list the simulator uses, and the stationary law solved on the
class reachable from the empty state.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .errors import StateCapExceeded
from .model import AggregateState, SystemConfig, enabled_transitions
from .policies import PolicyKind, routing_distribution

DEFAULT_STATE_CAP = 2_000_000
DENSE_LIMIT = 20_000
RESIDUAL_TOL = 1e-10


def state_cap() -> int:
    raw = os.environ.get("COXBALANCE_STATE_CAP")
    return int(raw) if raw else DEFAULT_STATE_CAP


def state_space_size(N: int, b: int) -> int:
    return math.comb(N + 2 * b, 2 * b)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass
class StateSpace:
    N: int
    b: int
    states: list
    index: dict = field(repr=False)

    def __len__(self):
        return len(self.states)

    def lookup(self, state: Union[AggregateState, tuple]) -> int:
        key = state.counts if isinstance(state, AggregateState) else tuple(state)
        return self.index[key]

    def counts_array(self) -> np.ndarray:
        return np.array([s.counts for s in self.states], dtype=np.int64)

    def s_array(self) -> np.ndarray:
        """(n_states, b, 2) array of s_{i,m}."""
        n = self.counts_array()[:, 1:].reshape(len(self), self.b, 2)
        return np.cumsum(n[:, ::-1], axis=1)[:, ::-1] / self.N

    def total_s(self) -> np.ndarray:
        return self.s_array().sum(axis=(1, 2))


def enumerate_states(N: int, b: int, cap: Optional[int] = None) -> StateSpace:
    """All compositions of N servers into 2b+1 classes, in lexicographic order."""
    cap = state_cap() if cap is None else cap
    size = state_space_size(N, b)
    if size > cap:
        raise StateCapExceeded(size, cap)
    states = [AggregateState(c) for c in _compositions(N, 2 * b + 1)]
    return StateSpace(N, b, states, {s.counts: i for i, s in enumerate(states)})


@dataclass
class GeneratorMatrix:
    Q: sp.csr_matrix
    space: StateSpace
    cfg: SystemConfig
    reachable: np.ndarray
    a1: np.ndarray
    ab: np.ndarray

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.Q.sum(axis=1)).ravel()


def build_generator(space: StateSpace, policy: PolicyKind, cfg: SystemConfig) -> GeneratorMatrix:
    """Sparse generator over the full space; blocked-arrival self-loops are dropped."""
    cfg = cfg.replace(policy=policy)
    n = len(space)
    rows, cols, vals = [], [], []
    a1 = np.empty(n)
    ab = np.empty(n)
    for k, st in enumerate(space.states):
        routing = routing_distribution(policy, st)
        a1[k] = routing.a1
        ab[k] = routing.blocked
        for ev in enabled_transitions(st, routing, cfg):
            if ev.blocked(space.b):
                continue
            rows.append(k)
            cols.append(space.lookup(ev.apply(st)))
            vals.append(ev.rate)
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = np.asarray(off.sum(axis=1)).ravel()
    Q = (off - sp.diags(diag)).tocsr()
    start = space.lookup(AggregateState.empty(space.N, space.b))
    order = breadth_first_order(off, start, directed=True, return_predecessors=False)
    reachable = np.zeros(n, dtype=bool)
    reachable[order] = True
    return GeneratorMatrix(Q, space, cfg, reachable, a1, ab)


@dataclass
class StationaryDistribution:
    pi: np.ndarray
    residual: float
    method: str
    n_reachable: int
    n_states: int

    @property
    def reducible(self) -> bool:
        return self.n_reachable < self.n_states


def _solve_dense(Qr: sp.csr_matrix) -> np.ndarray:
    A = Qr.T.toarray()
    A[-1, :] = 1.0
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    return scipy.linalg.solve(A, rhs)


def _solve_power(Qr: sp.csr_matrix, tol: float, max_iter: int) -> np.ndarray:
    exit_rates = -Qr.diagonal()
    unif = 1.01 * exit_rates.max()
    P = (sp.identity(Qr.shape[0], format="csr") + Qr / unif).T.tocsr()
    x = np.full(Qr.shape[0], 1.0 / Qr.shape[0])
    QT = Qr.T.tocsr()
    for it in range(max_iter):
        x = P @ x
        if it % 50 == 0:
            x /= x.sum()
            if np.abs(QT @ x).max() <= tol:
                return x
    raise RuntimeError(f"power iteration did not reach residual {tol} in {max_iter} steps")


def stationary_distribution(
    gen: GeneratorMatrix, method: str = "auto", tol: float = RESIDUAL_TOL, max_iter: int = 10_000_000
) -> StationaryDistribution:
    """Solve pi Q = 0, sum(pi) = 1 on the class reachable from the empty state.

    ``method`` is ``"dense"`` (LU with one balance equation replaced by the
    normalization), ``"power"`` (uniformized power iteration) or ``"auto"``,
    which picks dense up to 20 000 reachable states.
    """
    idx = np.flatnonzero(gen.reachable)
    Qr = gen.Q[idx][:, idx].tocsr()
    if method == "auto":
        method = "dense" if len(idx) <= DENSE_LIMIT else "power"
    if len(idx) == 1:
        x = np.ones(1)
    elif method == "dense":
        x = _solve_dense(Qr)
    elif method == "power":
        x = _solve_power(Qr, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    pi = np.zeros(len(gen.space))
    pi[idx] = x
    residual = float(np.abs(gen.Q.T @ pi).max())
    return StationaryDistribution(pi, residual, method, len(idx), len(gen.space))


def _as_array(pi) -> np.ndarray:
    return pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi)


def expectation(f: Callable[[AggregateState], float], pi, space: StateSpace) -> float:
    """sum_s pi(s) f(s), skipping states of zero mass."""
    p = _as_array(pi)
    return float(sum(p[k] * f(space.states[k]) for k in np.flatnonzero(p)))


@dataclass
class ExactMetrics:
    mean_s: np.ndarray
    mean_total: float
    p_wait: float
    p_block: float
    mean_wait: Optional[float]
    p_not_ssc: Optional[float]
    excess_mean: Optional[float]
    eta: Optional[float]

    @property
    def mean_s1(self) -> float:
        return float(self.mean_s[0].sum())

    def to_dict(self) -> dict:
        return {
            "mean_s": self.mean_s.tolist(),
            "mean_total": self.mean_total,
            "p_wait": self.p_wait,
            "p_block": self.p_block,
            "mean_wait": self.mean_wait,
            "mean_wait_defined": self.mean_wait is not None,
            "p_not_ssc": self.p_not_ssc,
            "excess_mean": self.excess_mean,
            "eta": self.eta,
        }


def exact_metrics(pi, space: StateSpace, policy: PolicyKind, cfg: SystemConfig) -> ExactMetrics:
    """Stationary performance measures.

    P(W) and P(B) are the expected routing masses to busy and to full
    servers (PASTA); E[W] follows from Little's law and is ``None`` when the
    accepted arrival rate is zero. SSC and excess measures need mean-one
    service and are ``None`` otherwise.
    """
    from .stein.constants import derived_constants, ssc_flags

    p = _as_array(pi)
    s = space.s_array()
    mean_s = np.tensordot(p, s, axes=1)
    totals = s.sum(axis=(1, 2))
    mean_total = float(p @ totals)
    a1 = np.zeros(len(space))
    ab = np.zeros(len(space))
    for k in np.flatnonzero(p):
        r = routing_distribution(policy, space.states[k])
        a1[k], ab[k] = r.a1, r.blocked
    p_wait = float(p @ a1)
    p_block = float(p @ ab)
    accepted = cfg.lam * (1.0 - p_block)
    mean_wait = mean_total / accepted - 1.0 if accepted > 0 else None
    p_not_ssc = excess = eta = None
    if cfg.coxian.normalized:
        consts = derived_constants(cfg)
        eta = consts.eta
        excess = float(p @ np.maximum(totals - eta, 0.0))
        outside = np.array(
            [0.0 if p[k] == 0 else float(not ssc_flags(space.states[k], consts).in_ssc) for k in range(len(space))]
        )
        p_not_ssc = float(p @ outside)
    return ExactMetrics(mean_s, mean_total, p_wait, p_block, mean_wait, p_not_ssc, excess, eta)


def write_distribution(path, space: StateSpace, pi) -> None:
    """One CSV row per state: flat count vector then probability."""
    p = _as_array(pi)
    header = ["n_idle"] + [f"n_{j}_{m}" for j in range(1, space.b + 1) for m in (1, 2)] + ["probability"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for st, prob in zip(space.states, p):
            w.writerow(list(st.counts) + [format(float(prob), ".17g")])


def solve(cfg: SystemConfig, cap: Optional[int] = None, method: str = "auto"):
    """Enumerate, build, solve; returns (space, generator, distribution)."""
    space = enumerate_states(cfg.N, cfg.b, cap)
    gen = build_generator(space, cfg.policy, cfg)
    return space, gen, stationary_distribution(gen, method)
