import json

import numpy as np
import pytest
from hypothesis import given

from pavtraffic.equilibrium import (
    alpha_max,
    eliminated_index,
    fixed_point_map,
    flow_balance_equilibrium,
    multistart_equilibria,
    random_simplex_states,
    reduce_system,
    solve_equilibrium,
)
from pavtraffic.errors import AnalysisCapError, ConvergenceError, ValidationError
from pavtraffic.integrator import IntegrationConfig, simulate
from pavtraffic.model import (
    ModelParams,
    StateVector,
    assemble_generator,
    drift,
    leader_independent_params,
    leader_probabilities,
)

from conftest import params_and_state, small_params


def test_fixed_point_map_one_step_mass_transfer():
    # every rate <= 0.5 so that alpha = 1 sits inside the cap
    p = ModelParams(gamma=0.0, lambda1=0.1, lambda3=0.5, k=1)
    assert alpha_max(p) == pytest.approx(1.0)
    y = fixed_point_map(p, StateVector.initial(1, 1.0, 0.0), 1.0)
    assert y.x_h[0] == pytest.approx(0.9)
    assert y.x_h[1] == pytest.approx(0.1)


def test_fixed_point_map_rejects_large_alpha():
    p = ModelParams(k=5)
    with pytest.raises(ValidationError):
        fixed_point_map(p, StateVector.initial(5), 1.01 * alpha_max(p))


def test_fixed_point_map_keeps_equilibrium():
    p = leader_independent_params(0.1, 0.5, k=4)
    x = flow_balance_equilibrium(p)
    np.testing.assert_allclose(fixed_point_map(p, x, alpha_max(p)).values, x.values, atol=1e-16)


@given(params_and_state())
def test_fixed_point_map_preserves_sum(ps):
    params, x = ps
    y = fixed_point_map(params, x, 0.5 * alpha_max(params))
    assert abs(y.values.sum() - 1.0) <= 1e-12


def test_self_map_closure_at_cap(rng):
    count = 0
    for _ in range(100):
        p = ModelParams(
            lambda1=rng.uniform(0.01, 1), lambda2=rng.uniform(0.01, 1),
            lambda3=rng.uniform(0.01, 1), lambda4=rng.uniform(0.01, 1),
            gamma=rng.uniform(), k=int(rng.integers(1, 20)),
        )
        alpha = alpha_max(p)
        for x in random_simplex_states(p, 100, rng):
            y = fixed_point_map(p, x, alpha).values
            assert y.min() >= 0.0
            assert abs(y.sum() - 1.0) <= 1e-12
            count += 1
    assert count == 10_000


def test_closed_form_leader_independent_equilibrium():
    p = leader_independent_params(0.1, 0.5, k=200)
    x = flow_balance_equilibrium(p)
    assert x.x_h[0] == pytest.approx(10 / 18, abs=1e-14)
    assert x.x_a[0] == pytest.approx(2 / 18, abs=1e-14)
    assert x.x_h[1:].sum() == pytest.approx(1 / 6, abs=1e-14)
    assert x.x_a[1:].sum() == pytest.approx(1 / 6, abs=1e-14)
    assert np.abs(drift(p, x)).max() <= 1e-15


def test_closed_form_requires_leader_independence():
    with pytest.raises(ValidationError):
        flow_balance_equilibrium(ModelParams())


def test_solver_matches_closed_form():
    p = leader_independent_params(0.1, 0.5, k=200)
    res = solve_equilibrium(p)
    assert res.residual_inf <= 1e-10
    assert res.x_star.x_h[0] == pytest.approx(10 / 18, abs=1e-8)
    assert res.x_star.x_a[0] == pytest.approx(2 / 18, abs=1e-8)


def test_symmetric_rates_split_evenly():
    p = ModelParams(lambda1=0.3, lambda2=0.3, lambda3=0.3, lambda4=0.3, k=10)
    h, a = solve_equilibrium(p).x_star.sums()
    assert h == pytest.approx(0.5, abs=1e-10)
    assert a == pytest.approx(0.5, abs=1e-10)


def test_default_leader_dependent_equilibrium_matches_long_run():
    p = ModelParams()
    res = solve_equilibrium(p)
    assert res.residual_inf <= 1e-10
    assert res.method in ("self-map", "damped-newton")
    traj = simulate(p, StateVector.initial(p.k), IntegrationConfig(horizon_t=300.0, record_stride=30000))
    assert np.abs(traj.terminal - res.x_star.values).max() <= 1e-6


def test_solver_without_newton():
    p = ModelParams(k=10)
    res = solve_equilibrium(p, tol=1e-9, newton=False)
    assert res.method == "self-map"
    assert res.residual_inf <= 1e-9


def test_solver_reports_best_residual_on_failure():
    with pytest.raises(ConvergenceError) as info:
        solve_equilibrium(ModelParams(k=10), tol=1e-14, max_iter=5, newton=False)
    assert info.value.best_residual > 0
    assert info.value.best_state is not None


def test_solver_rejects_bad_tolerance():
    with pytest.raises(ValidationError):
        solve_equilibrium(ModelParams(k=2), tol=0.0)


def test_equilibrium_json_record():
    p = ModelParams(k=3)
    res = solve_equilibrium(p)
    record = json.loads(res.to_json(p))
    assert set(record) == {"params", "x_star", "residual", "iterations", "method"}
    assert record["params"]["k"] == 3
    assert len(record["x_star"]) == p.n_states


def test_reduce_system_k1_hand_built():
    p = ModelParams(k=1)
    red = reduce_system(p, 1.0)
    mu = 1 / 3
    # full generator at q = 1 over [H0, H1, A0, A1]: lambda_HA = 0.1, lambda_AH = 0.15
    full = np.array([
        [-0.1, 0.0, 0.0, mu],
        [0.1, -mu, 0.0, 0.0],
        [0.0, mu, -0.15, 0.0],
        [0.0, 0.0, 0.15, -mu],
    ])
    np.testing.assert_allclose(assemble_generator(p, 1.0), full, atol=1e-15)
    expected = full[:3, :3] - full[:3, [3]]
    np.testing.assert_allclose(red.a_prime, expected, atol=1e-15)
    np.testing.assert_allclose(red.c, full[:3, 3], atol=1e-15)
    assert red.eliminated_index == 3


def test_reduce_system_eliminates_a0_without_downward_chain():
    p = ModelParams(k=3, t_lock_a=0.0)
    red = reduce_system(p, 0.5)
    assert red.eliminated_index == p.k + 1 == eliminated_index(p)
    assert red.a_prime.shape == (p.k + 1, p.k + 1)


def test_reduce_system_cap():
    with pytest.raises(AnalysisCapError):
        reduce_system(ModelParams(k=33), 0.5)


def test_reduced_equilibrium_consistency():
    p = ModelParams(k=6)
    x = solve_equilibrium(p).x_star
    red = reduce_system(p, leader_probabilities(p, x).q_hdv)
    assert np.abs(red.rhs(x.values[red.kept])).max() <= 1e-10


@given(params_and_state(max_k=6))
def test_reduced_full_consistency(ps):
    params, x = ps
    q = leader_probabilities(params, x).q_hdv
    red = reduce_system(params, q)
    full = assemble_generator(params, q) @ x.values
    np.testing.assert_allclose(red.rhs(x.values[red.kept]), full[red.kept], atol=1e-12)


@pytest.mark.parametrize(
    "params",
    [
        ModelParams(k=10),
        ModelParams(k=10, lambda1=0.01, lambda2=0.9, lambda3=0.19, lambda4=0.1),
        ModelParams(k=10, lambda1=0.9, lambda2=0.01, lambda3=0.1, lambda4=0.19, gamma=0.0),
        ModelParams(k=10, t_lock_a=0.0),
        leader_independent_params(0.1, 0.5, k=10),
    ],
)
def test_multistart_finds_a_single_equilibrium(params):
    found = multistart_equilibria(params, n_starts=20, seed=1)
    assert len(found) == 1
    assert found[0].residual_inf <= 1e-10


@given(small_params(max_k=4))
def test_solver_residual_property(params):
    res = solve_equilibrium(params)
    assert res.residual_inf <= 1e-10
    assert np.abs(drift(params, res.x_star)).max() <= 1e-10
