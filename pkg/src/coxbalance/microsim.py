"""Server-level simulator used to cross-check the aggregate chain.

Each server keeps its own queue length and service phase, and dispatchers
act on individual servers (sampled servers for power-of-d, explicit tie
breaking for JSQ). Waiting and blocking are recorded from the actual
routing outcome of each arrival, not from the aggregate routing law.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import _kernels as K
from .errors import ConfigError
from .model import SystemConfig
from .simulator import SimConfig, SimReport, _ssc_params, initial_counts, rng_for, summarize

MAX_SERVERS = 256


class _Pool:
    """Set of server ids with O(1) insert, remove and uniform draw."""

    def __init__(self):
        self.items = []
        self.pos = {}

    def add(self, x):
        self.pos[x] = len(self.items)
        self.items.append(x)

    def remove(self, x):
        i = self.pos.pop(x)
        last = self.items.pop()
        if last != x:
            self.items[i] = last
            self.pos[last] = i

    def draw(self, rng):
        return self.items[int(rng.random() * len(self.items))]

    def __len__(self):
        return len(self.items)


class _Servers:
    def __init__(self, counts: np.ndarray, b: int):
        self.b = b
        self.q = []
        self.ph = []
        for cls, n in enumerate(counts):
            level = 0 if cls == 0 else (cls + 1) // 2
            phase = 0 if cls == 0 else 2 - cls % 2
            self.q += [level] * int(n)
            self.ph += [phase] * int(n)
        self.N = len(self.q)
        self.by_level = [_Pool() for _ in range(b + 1)]
        self.by_phase = [None, _Pool(), _Pool()]
        for k in range(self.N):
            self.by_level[self.q[k]].add(k)
            if self.ph[k]:
                self.by_phase[self.ph[k]].add(k)
        self.counts = counts.copy()

    def _cls(self, k):
        return 0 if self.q[k] == 0 else 2 * self.q[k] - 1 + (self.ph[k] - 1)

    def _set(self, k, level, phase):
        self.counts[self._cls(k)] -= 1
        self.by_level[self.q[k]].remove(k)
        if self.ph[k]:
            self.by_phase[self.ph[k]].remove(k)
        self.q[k], self.ph[k] = level, phase
        self.counts[self._cls(k)] += 1
        self.by_level[level].add(k)
        if phase:
            self.by_phase[phase].add(k)

    def arrive(self, k):
        if self.q[k] == self.b:
            return
        self._set(k, self.q[k] + 1, self.ph[k] or 1)

    def complete(self, k):
        level = self.q[k] - 1
        self._set(k, level, 1 if level else 0)

    def advance(self, k):
        self._set(k, self.q[k], 2)


def _choose(servers: _Servers, policy, rng) -> int:
    kind = policy.kind
    if kind == "jsq":
        for pool in servers.by_level:
            if len(pool):
                return pool.draw(rng)
    if kind in ("jiq", "i1f"):
        preferred = (0,) if kind == "jiq" else (0, 1)
        for j in preferred:
            if j <= servers.b and len(servers.by_level[j]):
                return servers.by_level[j].draw(rng)
        return int(rng.random() * servers.N)
    sample = rng.choice(servers.N, size=policy.d, replace=policy.with_replacement)
    best = min(servers.q[k] for k in sample)
    ties = [k for k in sample if servers.q[k] == best]
    return int(ties[int(rng.random() * len(ties))])


def per_server_microsim(cfg: SystemConfig, sim: SimConfig) -> SimReport:
    """Simulate N explicit servers; estimators match :func:`simulator.run`."""
    if cfg.N > MAX_SERVERS:
        raise ConfigError(f"per-server simulation is limited to N <= {MAX_SERVERS}, got {cfg.N}")
    started = time.perf_counter()
    policy = cfg.policy
    b = cfg.b
    cox = cfg.coxian
    servers = _Servers(initial_counts(cfg, sim.initial_state), b)
    N = servers.N
    warm = sim.warmup_time
    edges = warm + (sim.horizon - warm) * np.arange(sim.batches + 1) / sim.batches
    edges[-1] = sim.horizon
    tacc = np.zeros((sim.batches, 2 * b + K.N_TIME_EXTRA))
    aacc = np.zeros((sim.batches, K.N_ARRIVAL))
    ssc, use_ssc = _ssc_params(cfg)
    rng = rng_for(sim)
    lam_n = cfg.lam * N
    levels = np.empty(b + 1, dtype=np.int64)
    w = np.empty(b + 1)
    code = K.POLICY_CODES[policy.kind]
    d = policy.d or 1
    t, kb, events = 0.0, 0, 0
    while True:
        n1, n2 = len(servers.by_phase[1]), len(servers.by_phase[2])
        rate = lam_n + cox.mu1 * n1 + cox.mu2 * n2
        K._levels(servers.counts, b, levels)
        K.level_weights_kernel(levels, N, code, d, policy.with_replacement, w)
        if rate <= 0:
            kb = K._accumulate_time(t, sim.horizon, edges, kb, servers.counts, b, N, 1.0 - w[0], ssc, use_ssc, tacc)
            break
        t_next = t - math.log(1.0 - rng.random()) / rate
        kb = K._accumulate_time(t, t_next, edges, kb, servers.counts, b, N, 1.0 - w[0], ssc, use_ssc, tacc)
        if t_next >= sim.horizon:
            break
        t = t_next
        events += 1
        x = rng.random() * rate
        if x < lam_n:
            k = _choose(servers, policy, rng)
            if t >= edges[0]:
                kk = int(np.searchsorted(edges, t, side="right")) - 1
                kk = min(kk, sim.batches - 1)
                busy = servers.q[k] > 0
                blocked = servers.q[k] == b
                aacc[kk, K.A_COUNT] += 1
                aacc[kk, K.A_SUM_A1] += busy
                aacc[kk, K.A_SUM_AB] += blocked
                aacc[kk, K.A_BUSY] += busy
                aacc[kk, K.A_BLOCKED] += blocked
            servers.arrive(k)
        elif x < lam_n + cox.mu1 * n1:
            k = servers.by_phase[1].draw(rng)
            if rng.random() < cox.p:
                servers.advance(k)
            else:
                servers.complete(k)
        else:
            servers.complete(servers.by_phase[2].draw(rng))
    report = summarize(cfg, sim, tacc, aacc, events, use_ssc, simulator="per_server")
    report.wall_clock = time.perf_counter() - started
    return report
