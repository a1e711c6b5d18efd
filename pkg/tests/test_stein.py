import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coxbalance.errors import ConfigError
from coxbalance.exact import solve
from coxbalance.model import AggregateState, CoxianParams, SystemConfig
from coxbalance.policies import I1F, JIQ, JSQ, pod
from coxbalance.stein.constants import (
    corollary_bound_for, corollary_bounds, derived_constants, effective_alpha, n_condition, ssc1_min_departure,
    ssc_flags, theorem_bound,
)
from coxbalance.stein.solution import (
    SteinFn, gradient_bound_check, identity_residual, stein_decomposition, stein_g,
)

COX = CoxianParams(2.0, 1.0, 0.5)


def consts(N=100, b=4, lam=0.7, cox=COX, policy=JSQ):
    return derived_constants(SystemConfig(N, b, lam, cox, policy))


def test_constants_examples():
    c = consts(b=4)
    assert (c.w_u, c.w_l, c.mu_max, c.k, c.c1) == (1.0, 1.0, 2.0, 40.0, 36.0)
    c = consts(b=2, cox=CoxianParams(1.0, 1.0, 0.0))
    assert (c.w_u, c.w_l, c.k, c.c1) == (1.0, 1.0, 15.0, 12.0)


@given(st.floats(1.01, 20), st.floats(0.01, 0.95), st.integers(1, 6))
def test_k_minus_c1_identity(mu1, p, b):
    cox = CoxianParams.mean_one(mu1, p)
    c = derived_constants(SystemConfig(50, b, 0.7, cox, JSQ))
    assert c.k - c.c1 == pytest.approx((1 + cox.mu1 + cox.mu2) / c.w_l, abs=1e-13 * c.k)


def test_unnormalized_refused():
    with pytest.raises(ConfigError):
        derived_constants(SystemConfig(10, 2, 0.7, CoxianParams(1.0, 1.0, 0.5), JSQ))


def test_stein_g_example():
    fn = SteinFn(0.9, 100)
    g, g1, g2 = stein_g(1.0, fn)
    assert float(g) == pytest.approx(-(10 / (2 * math.log(100))) * 0.01, rel=1e-12)
    assert float(g) == pytest.approx(-0.0108574, abs=5e-8)
    assert float(g1) == pytest.approx(-0.217147, abs=5e-7)
    assert float(g1) * (-math.log(100) / 10) == pytest.approx(0.1, abs=1e-15)
    assert float(fn.h(1.0)) == pytest.approx(0.1, abs=1e-15)


def test_stein_g_below_and_at_eta():
    fn = SteinFn(0.9, 100)
    assert [float(v) for v in stein_g(0.5, fn)] == [0.0, 0.0, 0.0]
    g, g1, _ = stein_g(0.9, fn)
    assert float(g) == 0.0 and float(g1) == 0.0
    g, g1, g2 = stein_g(10.9, fn)
    assert float(g2) == -math.sqrt(100) / math.log(100)


def test_stein_fn_needs_two_servers():
    with pytest.raises(ValueError):
        SteinFn(0.5, 1)


def test_gradient_bound_boundary():
    N = 100
    fn = SteinFn(0.9, N)
    x = 0.9 + 2 / N
    lhs = abs(float(fn.g1(x)))
    cap = 2 / (math.sqrt(N) * math.log(N))
    assert lhs == pytest.approx(0.04343, abs=1e-5)
    assert cap == pytest.approx(0.04343, abs=1e-5)
    assert lhs <= cap * (1 + 1e-12)


@pytest.mark.parametrize("N", [2, 10, 100, 64000])
def test_gradient_bounds_and_identity(N):
    c = consts(N=N)
    rep = gradient_bound_check(c, samples=10_000)
    assert rep["status"] == "pass" and rep["g1_violations"] == 0 and rep["g2_violations"] == 0
    assert rep["g1_points"] >= 10_000
    assert identity_residual(c, samples=10_000) <= 1e-12


@given(st.floats(-5, 5), st.integers(2, 10**6))
def test_stein_identity_property(x, N):
    fn = SteinFn(0.8, N)
    assert float(fn.g1(x)) * (-fn.drift) == pytest.approx(float(fn.h(x)), abs=1e-12)


def test_decomposition_trivial_when_eta_above_support():
    cfg = SystemConfig(3, 2, 0.7, COX, JSQ)
    space, gen, dist = solve(cfg)
    rec = stein_decomposition(dist, space, JSQ, cfg)
    assert rec["eta"] > cfg.b
    assert rec["E_h"] == rec["J1"] == rec["J23"] == 0.0
    assert rec["status"] == "pass"


def test_decomposition_fixture_eta_at_mean():
    # frozen from the exact solver; the identities themselves are the oracle
    cfg = SystemConfig(3, 2, 0.7, COX, JSQ)
    space, gen, dist = solve(cfg)
    rec = stein_decomposition(dist, space, JSQ, cfg, eta=0.871267275393262)
    assert rec["E_h"] == pytest.approx(0.23695328242412728, abs=1e-12)
    assert rec["J1"] == pytest.approx(0.035233104360238465, abs=1e-12)
    assert rec["J2"] == pytest.approx(0.08317495831762624, abs=1e-12)
    assert rec["J3"] == pytest.approx(0.11854521974626257, abs=1e-12)
    assert rec["decomposition_error"] <= 1e-12
    assert rec["J23_route_gap"] <= 1e-12
    assert abs(rec["E_Gg"]) <= 1e-12
    assert rec["status"] == "pass"


@pytest.mark.parametrize("policy", [JSQ, JIQ, I1F, pod(2)])
@pytest.mark.parametrize("N,b", [(2, 3), (3, 2), (4, 2)])
def test_decomposition_routes_agree(policy, N, b):
    cox = CoxianParams(4.0, 1.2, 0.9)
    cfg = SystemConfig(N, b, 0.7, cox, policy)
    space, gen, dist = solve(cfg)
    for eta in (0.3, 0.9, 1.4):
        rec = stein_decomposition(dist, space, policy, cfg, eta=eta)
        assert rec["identity_error"] <= 1e-12
        assert rec["J23_route_gap"] <= 1e-12


def test_decomposition_single_server_inapplicable():
    cfg = SystemConfig(1, 2, 0.7, COX, JSQ)
    space, gen, dist = solve(cfg)
    assert stein_decomposition(dist, space, JSQ, cfg)["status"] == "inapplicable"


def test_ssc_flags_examples():
    c = consts(N=100)
    f = ssc_flags(AggregateState.empty(100, 4), c)
    assert f.in_ssc2 and not f.in_ssc1
    L = math.log(100) / 10
    floor = c.lam + ((1 + 2 + 1) / 1 - 2) * L
    s = np.zeros((4, 2))
    s[0] = [c.lam / 2, floor - c.lam / 2]
    assert s[0, 1] >= 0.5 * c.lam / 1
    f = ssc_flags(s, c)
    assert f.in_ssc1 and f.in_tilde1


@st.composite
def s_matrices(draw):
    b = draw(st.integers(1, 5))
    cols = []
    for _ in range(2):
        vals = sorted(draw(st.lists(st.floats(0, 0.5), min_size=b, max_size=b)), reverse=True)
        cols.append(vals)
    return np.array(cols).T, b


@settings(max_examples=300)
@given(s_matrices(), st.sampled_from([10, 100, 10**4, 10**6, 10**9]),
       st.sampled_from([(2.0, 1.0, 0.5), (4.0, 1.2, 0.9), (1.0, 1.0, 0.0)]), st.floats(0.3, 0.99))
def test_inner_sets_contained_in_collapse(sb, N, par, lam):
    s, b = sb
    cox = CoxianParams(*par) if par[2] > 0 or par[0] == 1.0 else CoxianParams.mean_one(par[0], par[2])
    c = derived_constants(SystemConfig(N, b, lam, cox, JSQ))
    f = ssc_flags(s, c)
    if f.in_tilde1 and f.in_tilde2:
        assert f.in_ssc


@pytest.mark.parametrize("par", [(2.0, 1.0, 0.5), (4.0, 1.2, 0.9), (1.0, 1.0, 0.0), (1.25, 0.5, 0.1)])
@pytest.mark.parametrize("N", [10**4, 10**6, 10**9])
def test_corner_minimum(par, N):
    c = consts(N=N, cox=CoxianParams(*par), lam=1 - N ** -0.3)
    rec = ssc1_min_departure(c, grid=100)
    assert rec["grid_points"] == 10_000
    assert rec["min_ok"] and rec["case1_ok"] and rec["case2_ok"] and rec["case2_claim_ok"]
    assert rec["grid_gap"] >= -1e-9
    assert rec["box_min"] >= rec["min"] - 1e-9


def test_theorem_bound_formula():
    c = consts(N=64000)
    assert theorem_bound(c) == pytest.approx(14 / (math.sqrt(64000) * math.log(64000)), rel=1e-14)


def test_jiq_bound_example():
    cfg = SystemConfig.heavy(64000, 4, 0.3, COX, JIQ)
    bd = corollary_bounds(derived_constants(cfg), cfg)
    want = 28 / (64000 ** 0.2 * math.log(64000))
    assert bd["P_W_bound_jiq_i1f"] == pytest.approx(want, rel=1e-14)
    # the hand-rounded 0.2754 uses 64000^0.2 ~ 9.186; the exact power is 9.147
    assert bd["P_W_bound_jiq_i1f"] == pytest.approx(0.276634, abs=1e-6)
    assert corollary_bound_for("jiq", bd) == bd["P_W_bound_jiq_i1f"]
    assert corollary_bound_for("pod", bd) == bd["P_W_bound_jsq_pod"]


def test_jiq_side_condition_false_at_100():
    cfg = SystemConfig(100, 4, 1 - 100 ** -0.3, COX, JIQ, heavy_traffic=(0.3, 1.0))
    bd = corollary_bounds(derived_constants(cfg), cfg)
    assert bd["jiq_i1f_side_condition"] is False or not bd["jiq_i1f_side_condition"]
    assert not bd["jiq_i1f_applicable"]


def test_bounds_decrease_in_n():
    Ns = np.unique(np.geomspace(8, 1e7, 80).astype(int))
    keys = ("theorem_bound", "E_W_bound", "P_W_bound_jsq_pod", "P_B_bound", "P_W_bound_jiq_i1f")
    prev = None
    for N in Ns:
        cfg = SystemConfig.heavy(int(N), 4, 0.3, COX, JSQ)
        bd = corollary_bounds(derived_constants(cfg), cfg)
        cur = [bd[k] for k in keys]
        if prev is not None:
            assert all(a <= b for a, b in zip(cur, prev))
        prev = cur


def test_effective_alpha_and_n_condition():
    cfg = SystemConfig(1000, 4, 1 - 1000 ** -0.3, COX, JSQ)
    assert effective_alpha(cfg) == pytest.approx(0.3, rel=1e-12)
    cond = n_condition(derived_constants(cfg), 0.3)
    assert not cond["holds"] and cond["log_n"] == pytest.approx(math.log(1000))
