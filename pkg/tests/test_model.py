import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coxbalance.errors import ConfigError
from coxbalance.model import (
    AggregateState, CoxianParams, SystemConfig, apply_generator, class_index, enabled_transitions,
    mean_service_time, q_to_s, s_to_q, total_departure_rate,
)
from coxbalance.policies import I1F, JIQ, JSQ, pod, routing_distribution
from oracles import suffix_sums

COX = CoxianParams(2.0, 1.0, 0.5)

# figure state with N = 10, b = 5: rows are levels 1..5, columns phases 1, 2
TABLE1_N = np.array([[2, 1], [2, 1], [1, 1], [0, 0], [0, 2]])
TABLE1_S = {(1, 1): 0.5, (2, 1): 0.3, (3, 1): 0.1, (1, 2): 0.5, (2, 2): 0.4, (3, 2): 0.3, (4, 2): 0.2, (5, 2): 0.2}


def table1_state():
    return AggregateState.from_matrix(0, TABLE1_N)


def cfg_for(N, b, policy=JSQ, lam=0.7, cox=COX):
    return SystemConfig(N, b, lam, cox, policy)


@st.composite
def states(draw, max_n=12, max_b=4):
    b = draw(st.integers(1, max_b))
    counts = draw(st.lists(st.integers(0, max_n), min_size=2 * b + 1, max_size=2 * b + 1))
    if sum(counts) == 0:
        counts[0] = 1
    return AggregateState(tuple(counts))


def test_mean_service_time_examples():
    assert mean_service_time(CoxianParams(2.0, 1.0, 0.5)) == 1.0
    assert mean_service_time(CoxianParams(1.0, 7.0, 0.0)) == 1.0
    assert mean_service_time(CoxianParams(4.0, 1.2, 0.9)) == pytest.approx(1.0, abs=1e-12)
    assert CoxianParams(4.0, 1.2, 0.9).normalized
    assert not CoxianParams(1.0, 1.0, 0.5).normalized


def test_coxian_rejects_bad_parameters():
    for args in [(0.0, 1.0, 0.5), (1.0, -1.0, 0.5), (1.0, 1.0, 1.0), (1.0, 1.0, -0.1)]:
        with pytest.raises(ConfigError):
            CoxianParams(*args)


def test_coxian_sample_mean():
    rng = np.random.default_rng(3)
    x = COX.sample(rng, 200_000)
    assert x.mean() == pytest.approx(1.0, abs=0.01)


def test_heavy_traffic_lambda():
    cfg = SystemConfig.heavy(1000, 4, 0.3, COX, JSQ, beta=1.0)
    assert cfg.lam == pytest.approx(1 - 1000 ** -0.3, abs=1e-12)
    with pytest.raises(ConfigError):
        SystemConfig(1000, 4, 0.9, COX, JSQ, heavy_traffic=(0.3, 1.0))
    with pytest.raises(ConfigError):
        SystemConfig.heavy(10, 2, 0.6, COX, JSQ)


def test_table1_q_to_s_exact():
    s = q_to_s(table1_state())
    for (i, m), v in TABLE1_S.items():
        assert s[i - 1, m - 1] == v
    assert s[3, 0] == 0.0 and s[4, 0] == 0.0


def test_q_to_s_trivial_examples():
    assert not q_to_s(AggregateState.empty(5, 3)).any()
    s = q_to_s(AggregateState.from_matrix(0, [[4, 6], [0, 0]]))
    assert s.tolist() == [[0.4, 0.6], [0.0, 0.0]]


@given(states())
def test_q_s_round_trip(state):
    s = q_to_s(state)
    assert s_to_q(s, state.N) == state
    assert np.allclose(s, suffix_sums(state.q()[1:]))
    assert (np.diff(s, axis=0) <= 0).all()
    assert s[0].sum() <= 1.0


def test_s_to_q_rejects_invalid():
    with pytest.raises(ValueError):
        s_to_q([[0.25, 0.0]], 3)
    with pytest.raises(ValueError):
        s_to_q([[0.2, 0.0], [0.4, 0.0]], 10)
    with pytest.raises(ValueError):
        s_to_q([[0.7, 0.5]], 10)


def test_class_index_layout():
    assert class_index(0, 1) == 0
    assert class_index(1, 1) == 1 and class_index(1, 2) == 2
    assert class_index(3, 2) == 6
    with pytest.raises(ValueError):
        class_index(0, 2)


def test_empty_state_only_arrivals():
    cfg = cfg_for(4, 2)
    state = AggregateState.empty(4, 2)
    for policy in (JSQ, JIQ, I1F, pod(2)):
        events = enabled_transitions(state, routing_distribution(policy, state), cfg)
        assert len(events) == 1
        ev = events[0]
        assert (ev.kind, ev.level, ev.phase) == ("arrival", 0, 1)
        assert ev.rate == pytest.approx(0.7 * 4)


def test_single_busy_server_events():
    cox = CoxianParams(2.0, 1.0, 0.5)
    cfg = SystemConfig(1, 1, 0.5, cox, JSQ)
    state = AggregateState((0, 1, 0))
    events = enabled_transitions(state, routing_distribution(JSQ, state), cfg)
    rates = {(e.kind, e.level): e.rate for e in events}
    assert rates == {("arrival", 1): 0.5, ("phase1_departure", 1): 1.0, ("phase1_to_phase2", 1): 1.0}
    blocked = [e for e in events if e.blocked(1)]
    assert len(blocked) == 1 and blocked[0].apply(state) == state


def test_table1_jsq_arrival_split():
    state = table1_state()
    cfg = cfg_for(10, 5)
    events = [e for e in enabled_transitions(state, routing_distribution(JSQ, state), cfg) if e.kind == "arrival"]
    split = {(e.level, e.phase): e.rate / (0.7 * 10) for e in events}
    assert split.keys() == {(1, 1), (1, 2)}
    assert split[(1, 1)] == pytest.approx(2 / 3, abs=1e-15)
    assert split[(1, 2)] == pytest.approx(1 / 3, abs=1e-15)


def test_event_deltas():
    state = AggregateState.from_matrix(1, [[1, 1], [1, 0]])
    cfg = cfg_for(4, 2, policy=JIQ)
    moved = {}
    for ev in enabled_transitions(state, routing_distribution(JIQ, state), cfg):
        moved[(ev.kind, ev.level, ev.phase)] = ev.apply(state).counts
    assert moved[("arrival", 0, 1)] == (0, 2, 1, 1, 0)
    assert moved[("phase1_departure", 1, 1)] == (2, 0, 1, 1, 0)
    assert moved[("phase1_to_phase2", 1, 1)] == (1, 0, 2, 1, 0)
    assert moved[("phase2_departure", 1, 2)] == (2, 1, 0, 1, 0)
    # a phase-2 completion at level 2 leaves a phase-1 job behind
    assert moved[("phase1_departure", 2, 1)] == (1, 2, 1, 0, 0)


@settings(max_examples=60)
@given(states(), st.sampled_from(["jsq", "jiq", "i1f", "pod2"]))
def test_events_conserve_servers(state, name):
    policy = pod(min(2, state.N)) if name == "pod2" else {"jsq": JSQ, "jiq": JIQ, "i1f": I1F}[name]
    cfg = cfg_for(state.N, state.b, policy)
    for ev in enabled_transitions(state, routing_distribution(policy, state), cfg):
        assert ev.rate > 0
        assert ev.apply(state).N == state.N


def test_inconsistent_routing_rejected():
    from coxbalance.errors import RoutingError
    from coxbalance.policies import RoutingDistribution

    state = AggregateState.from_matrix(2, [[0, 0], [0, 0]])
    r = np.zeros((3, 2))
    r[1, 0] = 1.0
    with pytest.raises(RoutingError):
        enabled_transitions(state, RoutingDistribution(r), cfg_for(2, 2))


@settings(max_examples=60)
@given(states())
def test_generator_constants_and_linear_fields(state):
    cfg = cfg_for(state.N, state.b, JIQ)
    assert apply_generator(lambda x: 3.5, state, None, cfg) == 0.0
    s = q_to_s(state)
    got = apply_generator(lambda x: q_to_s(x)[0, 1], state, None, cfg)
    assert got == pytest.approx(0.5 * 2.0 * s[0, 0] - 1.0 * s[0, 1], abs=1e-12)
    r = routing_distribution(JIQ, state)
    got = apply_generator(lambda x: x.total_s(), state, r, cfg)
    want = 0.7 * (1 - r.blocked) - 1.0 * s[0, 0] - 1.0 * s[0, 1]
    assert got == pytest.approx(want, abs=1e-12)


@settings(max_examples=40)
@given(states(max_n=6, max_b=3), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_generator_is_linear(state, a, c, seed):
    rng = np.random.default_rng(seed)
    table_f, table_g = {}, {}

    def f(x):
        return table_f.setdefault(x.counts, rng.normal())

    def g(x):
        return table_g.setdefault(x.counts, rng.normal())

    cfg = cfg_for(state.N, state.b, I1F)
    lhs = apply_generator(lambda x: a * f(x) + c * g(x), state, None, cfg)
    rhs = a * apply_generator(f, state, None, cfg) + c * apply_generator(g, state, None, cfg)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_total_departure_rate():
    assert total_departure_rate(AggregateState.empty(4, 2), COX) == 0.0
    half = AggregateState.from_matrix(1, [[2, 1], [0, 0]])
    assert total_departure_rate(half, COX) == pytest.approx(0.75)
    assert total_departure_rate(AggregateState.from_matrix(0, [[0, 4]]), COX) == pytest.approx(1.0)


def test_state_validation():
    with pytest.raises(ValueError):
        AggregateState((1, 0))
    with pytest.raises(ValueError):
        AggregateState((1, -1, 0))
    assert math.isclose(table1_state().total_s(), sum(TABLE1_S.values()))
