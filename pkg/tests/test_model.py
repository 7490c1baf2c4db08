import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlmv.errors import ModelError
from nlmv.model import (CoefficientSpec, FactorProcess, MarketModel, TimeGrid, check_feasibility,
                        discount_factor, discount_on_grid, validate_model)


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.dt == 0.25
    assert g.refine(4).N == 32
    np.testing.assert_allclose(g.midpoints, g.nodes[:-1] + 0.125)
    for bad in [(1.0, 0), (0.0, 5), (-1.0, 5)]:
        with pytest.raises(ValueError):
            TimeGrid(*bad)


def test_model_a_valid(model_a, grid_a):
    rep = validate_model(model_a, grid_a)
    assert rep.valid and rep.to_dict() == {"valid": True, "violations": []}


def test_theta_ordering_reported_at_all_nodes(grid_a):
    m = MarketModel.constant(0.03, [0.5], [0.4], [[0.2]])
    rep = validate_model(m, grid_a)
    kinds = {v.kind for v in rep.violations}
    assert kinds == {"theta ordering"}
    assert sorted(v.t for v in rep.violations) == pytest.approx(list(grid_a.nodes))


def test_singular_sigma_reported(grid_a):
    m = MarketModel.constant(0.0, [0.1, 0.1], [0.2, 0.2], [[1, 1], [1, 1]])
    rep = validate_model(m, grid_a)
    assert not rep.valid
    assert all(v.kind == "nondegeneracy" for v in rep.violations)


def test_factor_model_probed(factor_model):
    grid = TimeGrid(1.0, 10)
    assert validate_model(factor_model, grid).valid
    bad = MarketModel.from_dict({
        "r": 0.0,
        "theta_lower": [{"kind": "factor", "poly": [0.0, 1.0]}],
        "theta_upper": [0.5],
        "sigma": [[1.0]],
        "factor": {"kappa": 1.0, "vol": 0.5},
    })
    rep = validate_model(bad, grid, probe_states=[-1.0, 0.0, 1.0])
    assert {v.state for v in rep.violations} == {1.0}


def test_non_finite_coefficient_is_hard_error():
    c = CoefficientSpec(kind="factor", poly=(0.0, 1.0))
    with pytest.raises(ModelError), np.errstate(invalid="ignore"):
        c(0.0, np.array([np.inf]))
    with pytest.raises(ModelError):
        CoefficientSpec.const(np.nan)


def test_feasibility_examples():
    g = TimeGrid(1.0, 50)
    res = check_feasibility(MarketModel.constant(0.03, [0.2], [0.4], [[0.2]]), g)
    assert res.feasible and res.lhs_values[0] == pytest.approx(0.04)
    res = check_feasibility(MarketModel.constant(0.03, [0.0], [0.0], [[0.2]]), g)
    assert not res.feasible and res.lhs_values == (0.0, 0.0)
    res = check_feasibility(MarketModel.constant(0.03, [-0.4], [-0.2], [[0.2]]), g)
    assert res.feasible and res.lhs_values[0] == 0.0
    assert res.lhs_values[1] == pytest.approx(0.04)


def test_feasibility_mc(factor_model):
    g = TimeGrid(1.0, 20)
    with pytest.raises(ValueError):
        check_feasibility(factor_model, g, mc_paths=0)
    res = check_feasibility(factor_model, g, mc_paths=2000, seed=3)
    assert res.feasible and res.method == "monte_carlo"


@given(st.floats(-0.5, 0.5))
def test_feasibility_equal_thetas_iff_nonzero(theta):
    g = TimeGrid(1.0, 10)
    res = check_feasibility(MarketModel.constant(0.01, [theta], [theta], [[0.3]]), g)
    assert res.feasible == (abs(theta) * 0.3 > 1e-10)


def test_discount_factor(model_a):
    assert discount_factor(model_a, 0.0, 1.0) == pytest.approx(np.exp(-0.03), rel=1e-15)
    assert discount_factor(model_a, 1.0, 1.0) == 1.0
    zero = MarketModel.constant(0.0, [0.1], [0.2], [[0.2]])
    assert discount_factor(zero, 0.3, 1.0) == 1.0
    with pytest.raises(ValueError):
        discount_factor(model_a, 1.5, 1.0)


def test_discount_piecewise_exact():
    r = {"kind": "piecewise", "knots": [0.0, 0.5, 1.0], "values": [0.02, 0.06]}
    m = MarketModel.from_dict({"r": r, "theta_lower": [0.1], "theta_upper": [0.2],
                               "sigma": [[0.3]]})
    assert discount_factor(m, 0.0, 1.0) == pytest.approx(np.exp(-0.04), rel=1e-14)
    assert discount_factor(m, 0.25, 1.0) == pytest.approx(np.exp(-0.035), rel=1e-14)
    d = discount_on_grid(m, TimeGrid(1.0, 10))
    assert np.all(np.diff(d) > 0) and d[-1] == 1.0


@given(st.floats(-0.2, 0.2))
def test_discount_monotone_by_rate_sign(r):
    m = MarketModel.constant(r, [0.1], [0.2], [[0.2]])
    d = discount_on_grid(m, TimeGrid(1.0, 20))
    diffs = np.diff(d)
    assert np.all(diffs * np.sign(r) >= -1e-15)


def test_random_rate_rejected():
    with pytest.raises(ModelError):
        MarketModel.from_dict({"r": {"kind": "factor", "poly": [0.0, 1.0]},
                               "theta_lower": [0.1], "theta_upper": [0.2], "sigma": [[0.2]],
                               "factor": {"vol": 0.1}})


def test_dimension_mismatch_rejected():
    with pytest.raises(ModelError):
        MarketModel.from_dict({"dimension": 2, "r": 0.0, "theta_lower": [0.1],
                               "theta_upper": [0.2], "sigma": [[0.2]]})


def test_factor_zero_vol_is_deterministic():
    f = FactorProcess(kappa=2.0, mean=1.0, vol=0.0, y0=0.0)
    m = MarketModel.from_dict({"r": 0.0,
                               "theta_lower": [{"kind": "factor", "poly": [0.1, 0.1]}],
                               "theta_upper": [0.5], "sigma": [[0.2]],
                               "factor": vars(f)})
    rng = np.random.default_rng(0)
    y = m.simulate_factor(rng.standard_normal((5, 20, 1)), 0.05)
    assert np.ptp(y, axis=0).max() == 0.0
    assert np.all(np.diff(y[0]) > 0)


coef_strategy = st.one_of(
    st.floats(-1, 1).map(CoefficientSpec.const),
    st.lists(st.floats(-1, 1), min_size=1, max_size=4).map(
        lambda v: CoefficientSpec(kind="piecewise",
                                  knots=tuple(np.linspace(0, 1, len(v) + 1)),
                                  values=tuple(v))),
)


@given(coef_strategy, coef_strategy, st.floats(0.05, 1.0))
def test_model_json_round_trip(tl, r, s):
    m = MarketModel(r=r, theta_lower=[tl], theta_upper=[tl], sigma=[[CoefficientSpec.const(s)]])
    back = MarketModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.to_dict() == m.to_dict()
    assert back.hash() == m.hash()


def test_coefficient_forms():
    tab = CoefficientSpec.from_dict({"kind": "factor",
                                     "table": {"states": [-1, 1], "values": [0.0, 1.0]}})
    np.testing.assert_allclose(tab(0.0, np.array([0.0, -5.0, 5.0])), [0.5, 0.0, 1.0])
    th = CoefficientSpec.from_dict({"kind": "factor", "tanh": [0.2, 0.1, 1.0]})
    np.testing.assert_allclose(th(0.0, np.array([0.0, 1.0])), [0.2, 0.2 + 0.1 * np.tanh(1.0)])
    pw = CoefficientSpec.from_dict({"kind": "piecewise", "knots": [0, 1, 2], "values": [1, 3]})
    assert pw.integral(0.5, 1.5) == pytest.approx(2.0)
    with pytest.raises(ModelError):
        CoefficientSpec.from_dict({"kind": "spline"})
