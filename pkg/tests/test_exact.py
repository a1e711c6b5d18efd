import csv

import numpy as np
import pytest

from coxbalance.errors import StateCapExceeded
from coxbalance.exact import (
    build_generator, enumerate_states, exact_metrics, expectation, solve, state_space_size,
    stationary_distribution, write_distribution,
)
from coxbalance.model import AggregateState, CoxianParams, SystemConfig
from coxbalance.policies import I1F, JIQ, JSQ, pod
from oracles import erlang_b, mmnk_metrics, per_server_chain

EXP_LIKE = CoxianParams(2.0, 1.0, 0.5)  # Laplace transform collapses to 1/(1+s)


def test_state_count_n3_b2():
    space = enumerate_states(3, 2)
    assert len(space) == 35 == state_space_size(3, 2)
    assert len(set(s.counts for s in space.states)) == 35
    assert all(s.N == 3 for s in space.states)


def test_cap_exceeded():
    with pytest.raises(StateCapExceeded) as exc:
        enumerate_states(50, 5, cap=1000)
    assert exc.value.required == state_space_size(50, 5)


def test_cap_from_environment(monkeypatch):
    monkeypatch.setenv("COXBALANCE_STATE_CAP", "10")
    with pytest.raises(StateCapExceeded):
        enumerate_states(3, 2)


def test_single_server_hand_solution():
    cfg = SystemConfig(1, 1, 0.5, CoxianParams(2.0, 1.0, 0.5), JSQ)
    space, gen, dist = solve(cfg)
    pi = {s.counts: dist.pi[k] for k, s in enumerate(space.states)}
    assert pi[(1, 0, 0)] == pytest.approx(2 / 3, abs=1e-13)
    assert pi[(0, 1, 0)] == pytest.approx(1 / 6, abs=1e-13)
    assert pi[(0, 0, 1)] == pytest.approx(1 / 6, abs=1e-13)


def test_generator_rows_sum_to_zero():
    cfg = SystemConfig(3, 2, 0.7, EXP_LIKE, pod(2))
    gen = build_generator(enumerate_states(3, 2), pod(2), cfg)
    assert np.abs(gen.row_sums()).max() <= 1e-12


@pytest.mark.parametrize("b", [1, 2, 4])
@pytest.mark.parametrize("lam", [0.3, 0.7, 0.95])
def test_single_server_is_mm1k(b, lam):
    cfg = SystemConfig(1, b, lam, EXP_LIKE, JSQ)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, JSQ, cfg)
    p_wait, p_block, mean_jobs = mmnk_metrics(1, b, lam)
    assert m.p_wait == pytest.approx(p_wait, abs=1e-10)
    assert m.p_block == pytest.approx(p_block, abs=1e-10)
    assert m.mean_total == pytest.approx(mean_jobs, abs=1e-10)
    # Little's law on accepted jobs with unit mean service
    assert m.mean_wait == pytest.approx(m.mean_total / (lam * (1 - p_block)) - 1, abs=1e-12)


@pytest.mark.parametrize("policy", [JSQ, JIQ, I1F])
@pytest.mark.parametrize("N", [1, 2, 3, 4, 6])
def test_one_slot_servers_are_erlang_loss(policy, N):
    cfg = SystemConfig(N, 1, 0.8, CoxianParams.mean_one(3.0, 0.6), policy)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, policy, cfg)
    # the loss system is insensitive to the service law beyond its mean
    assert m.p_block == pytest.approx(erlang_b(N, 0.8 * N), abs=1e-10)
    assert m.p_wait == pytest.approx(m.p_block, abs=1e-12)


@pytest.mark.parametrize("policy", [JSQ, JIQ, I1F, pod(2), pod(2, "with_replacement")])
@pytest.mark.parametrize("N,b", [(2, 2), (3, 2), (2, 3)])
def test_lumping_matches_labelled_servers(policy, N, b):
    cox = CoxianParams(4.0, 1.2, 0.9)
    cfg = SystemConfig(N, b, 0.75, cox, policy)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, policy, cfg)
    lumped, p_wait, p_block = per_server_chain(
        N, b, 0.75, cox.mu1, cox.mu2, cox.p, policy.kind, policy.d, policy.with_replacement
    )
    for k, s in enumerate(space.states):
        assert dist.pi[k] == pytest.approx(lumped.get(s.counts, 0.0), abs=1e-11)
    assert m.p_wait == pytest.approx(p_wait, abs=1e-11)
    assert m.p_block == pytest.approx(p_block, abs=1e-11)


def test_p_zero_never_uses_phase_two():
    cfg = SystemConfig(3, 2, 0.7, CoxianParams(1.0, 1.0, 0.0), I1F)
    space, gen, dist = solve(cfg)
    for k, s in enumerate(space.states):
        if s.matrix()[:, 1].any():
            assert dist.pi[k] == 0.0
            assert not gen.reachable[k]
    assert dist.reducible


def test_power_matches_dense():
    cfg = SystemConfig(3, 3, 0.9, EXP_LIKE, pod(2))
    _, gen, dense = solve(cfg, method="dense")
    power = stationary_distribution(gen, method="power", tol=1e-13)
    assert power.method == "power"
    assert np.abs(power.pi - dense.pi).max() <= 1e-10
    assert power.residual <= 1e-10


def test_expectation_and_metrics_consistent():
    cfg = SystemConfig(3, 2, 0.7, EXP_LIKE, I1F)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, I1F, cfg)
    assert m.mean_total == pytest.approx(expectation(AggregateState.total_s, dist, space), abs=1e-14)
    assert m.mean_s.sum() == pytest.approx(m.mean_total, abs=1e-14)
    assert 0 <= m.p_block <= m.p_wait <= 1
    assert m.p_not_ssc is not None and 0 <= m.p_not_ssc <= 1


def test_unnormalized_service_skips_ssc_metrics():
    cfg = SystemConfig(2, 2, 0.5, CoxianParams(1.0, 1.0, 0.5), JSQ)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, JSQ, cfg)
    assert m.eta is None and m.excess_mean is None and m.p_not_ssc is None


def test_zero_arrivals_leave_mass_on_empty():
    cfg = SystemConfig(2, 2, 0.0, EXP_LIKE, JSQ)
    space, gen, dist = solve(cfg)
    assert dist.n_reachable == 1
    assert dist.pi[space.lookup(AggregateState.empty(2, 2))] == 1.0
    assert exact_metrics(dist, space, JSQ, cfg).mean_wait is None


def test_write_distribution(tmp_path):
    cfg = SystemConfig(3, 2, 0.7, EXP_LIKE, JSQ)
    space, gen, dist = solve(cfg)
    path = tmp_path / "pi.csv"
    write_distribution(path, space, dist)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["n_idle", "n_1_1", "n_1_2", "n_2_1", "n_2_2", "probability"]
    assert len(rows) == 36
    assert sum(float(r[-1]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-12)


def test_small_state_counts():
    assert sorted(s.counts for s in enumerate_states(1, 1).states) == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
    assert len(enumerate_states(2, 1)) == 6


def test_single_server_generator_rates():
    cox = CoxianParams(2.0, 1.0, 0.5)
    cfg = SystemConfig(1, 1, 0.5, cox, JSQ)
    space = enumerate_states(1, 1)
    Q = build_generator(space, JSQ, cfg).Q.toarray()
    idle, ph1, ph2 = (space.lookup(c) for c in [(1, 0, 0), (0, 1, 0), (0, 0, 1)])
    assert Q[idle, ph1] == 0.5
    assert Q[ph1, idle] == 1.0 and Q[ph1, ph2] == 1.0
    assert Q[ph2, idle] == 1.0
    assert Q[ph2, ph1] == 0.0 and Q[idle, ph2] == 0.0


def test_single_server_metrics():
    cfg = SystemConfig(1, 1, 0.5, CoxianParams(2.0, 1.0, 0.5), JSQ)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, JSQ, cfg)
    assert m.p_wait == pytest.approx(1 / 3, abs=1e-13)
    assert m.p_block == pytest.approx(1 / 3, abs=1e-13)
    assert m.mean_total == pytest.approx(1 / 3, abs=1e-13)
    assert expectation(lambda s: 1.0, dist, space) == pytest.approx(1.0, abs=1e-15)
    assert expectation(lambda s: s.s()[0].sum(), dist, space) == pytest.approx(1 / 3, abs=1e-13)


def test_single_server_exponential():
    cfg = SystemConfig(1, 1, 0.5, CoxianParams(1.0, 1.0, 0.0), JSQ)
    space, gen, dist = solve(cfg)
    assert dist.pi[space.lookup((1, 0, 0))] == pytest.approx(2 / 3, abs=1e-13)
    assert dist.pi[space.lookup((0, 1, 0))] == pytest.approx(1 / 3, abs=1e-13)


def test_generator_expectations_vanish():
    rng = np.random.default_rng(5)
    from coxbalance.model import apply_generator

    for policy in (JSQ, JIQ, I1F, pod(2)):
        cfg = SystemConfig(3, 2, 0.7, CoxianParams(4.0, 1.2, 0.9), policy)
        space, gen, dist = solve(cfg)
        for _ in range(5):
            table = dict(zip((s.counts for s in space.states), rng.uniform(-1, 1, len(space))))

            def f(s):
                return table[s.counts]

            assert abs(expectation(lambda s: apply_generator(f, s, None, cfg), dist, space)) <= 1e-8


@pytest.mark.parametrize("N", [1, 2, 3, 4, 5])
def test_pod_full_sample_stationary_law_is_jsq(N):
    b = 2 if N <= 4 else 1
    cox = CoxianParams(4.0, 1.2, 0.9)
    _, _, jsq = solve(SystemConfig(N, b, 0.8, cox, JSQ))
    _, _, full = solve(SystemConfig(N, b, 0.8, cox, pod(N)))
    assert np.abs(jsq.pi - full.pi).max() <= 1e-10


@pytest.mark.parametrize("N,b", [(1, 1), (2, 1), (3, 1), (1, 2), (1, 3)])
def test_exponential_jiq_closed_forms(N, b):
    # with p = 0 and either one slot per server or a single server the count is a birth-death chain
    cfg = SystemConfig(N, b, 0.65, CoxianParams(1.0, 1.0, 0.0), JIQ)
    space, gen, dist = solve(cfg)
    m = exact_metrics(dist, space, JIQ, cfg)
    p_wait, p_block, mean_jobs = mmnk_metrics(N, N * b, 0.65 * N)
    assert m.p_wait == pytest.approx(p_wait, abs=1e-10)
    assert m.p_block == pytest.approx(p_block, abs=1e-10)
    assert m.mean_total * N == pytest.approx(mean_jobs, abs=1e-10)
