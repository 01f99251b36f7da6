import numpy as np
import pytest

from pavtraffic.equilibrium import multistart_equilibria, reduce_system, solve_equilibrium
from pavtraffic.errors import AnalysisCapError, ValidationError
from pavtraffic.integrator import IntegrationConfig, simulate
from pavtraffic.model import ModelParams, StateVector, leader_independent_params
from pavtraffic.stability import (
    PolytopeVertices,
    build_vertices,
    check_hurwitz_grid,
    find_common_lyapunov,
    lyapunov_form,
    search_common_lyapunov,
    spectral_abscissa,
    verify_certificate,
)


def _vertices(m0, m1):
    return PolytopeVertices(np.array(m0, dtype=float), np.array(m1, dtype=float))


def test_scalar_case():
    cert = find_common_lyapunov(_vertices([[-1.0]], [[-1.0]]))
    assert cert is not None
    np.testing.assert_allclose(cert.p, [[1.0]], atol=1e-12)
    assert cert.margin == pytest.approx(2.0)


def test_non_hurwitz_vertex_is_rejected_first():
    out = search_common_lyapunov(_vertices([[0, 1], [-1, 0]], [[-1, 0], [0, -1]]))
    assert out.status == "not-hurwitz"
    assert out.certificate is None
    assert out.offending_real_part == pytest.approx(0.0, abs=1e-12)


def test_two_by_two_certificate_verified_by_eigendecomposition():
    v = _vertices(np.diag([-1.0, -2.0]), [[-1.0, 0.1], [0.1, -2.0]])
    cert = find_common_lyapunov(v)
    assert cert is not None
    p = cert.p
    assert np.abs(p - p.T).max() <= 1e-10
    assert np.trace(p) == pytest.approx(2.0)
    assert np.linalg.eigvalsh(p).min() >= 1e-6
    for m in (v.m0, v.m1):
        assert np.linalg.eigvalsh(m.T @ p + p @ m).max() <= -1e-6


def test_rejects_malformed_vertices():
    with pytest.raises(ValidationError):
        search_common_lyapunov(_vertices([[1.0, 2.0]], [[1.0, 2.0]]))
    with pytest.raises(ValidationError):
        search_common_lyapunov(_vertices([[np.nan]], [[-1.0]]))
    with pytest.raises(ValidationError):
        search_common_lyapunov(_vertices([[-1.0]], np.eye(2)))


def test_verify_certificate_recomputes_margin():
    m = np.array([[-2.0, 0.0], [0.0, -3.0]])
    cert = verify_certificate((m, m), np.eye(2))
    assert cert.margin == pytest.approx(4.0)
    assert cert.p_min_eig == pytest.approx(1.0)


def test_leader_independent_vertices_coincide():
    v = build_vertices(leader_independent_params(0.2, 0.4, k=3))
    np.testing.assert_allclose(v.m0, v.m1, atol=1e-15)


def test_vertices_match_reduced_system_k1():
    p = ModelParams(k=1)
    v = build_vertices(p)
    np.testing.assert_allclose(v.m0, reduce_system(p, 0.0).a_prime, atol=1e-15)
    np.testing.assert_allclose(v.m1, reduce_system(p, 1.0).a_prime, atol=1e-15)
    assert v.dimension == 3


@pytest.mark.parametrize("q", [0.0, 0.3, 0.5, 0.77, 1.0])
def test_vertices_are_affine_in_q(q):
    p = ModelParams(k=4)
    v = build_vertices(p)
    np.testing.assert_allclose(v.at(q), reduce_system(p, q).a_prime, atol=1e-12)
    np.testing.assert_allclose(v.at(q), (1 - q) * v.m0 + q * v.m1, atol=1e-12)


def test_build_vertices_cap():
    with pytest.raises(AnalysisCapError):
        build_vertices(ModelParams(k=64))


def test_hurwitz_grid_examples():
    assert check_hurwitz_grid(leader_independent_params(0.1, 0.5, k=5)).worst_abscissa < 0
    p = ModelParams(k=5)
    single = check_hurwitz_grid(p, n_samples=1)
    assert single.q_values.tolist() == [0.0]
    assert single.worst_abscissa == pytest.approx(spectral_abscissa(build_vertices(p).m0))


def test_hurwitz_grid_scales_with_rates():
    base = ModelParams(lambda1=0.1, lambda2=0.15, lambda3=0.45, lambda4=0.05, k=5)
    doubled = ModelParams(lambda1=0.2, lambda2=0.3, lambda3=0.9, lambda4=0.1, k=5, t_lock_h=1.5, t_lock_a=1.5)
    a = check_hurwitz_grid(base).worst_abscissa
    b = check_hurwitz_grid(doubled).worst_abscissa
    assert b == pytest.approx(2 * a, rel=1e-9)


def test_default_parameters_certificate():
    v = build_vertices(ModelParams(k=5))
    out = search_common_lyapunov(v)
    assert out.status == "feasible"
    cert = out.certificate
    assert np.trace(cert.p) == pytest.approx(v.dimension)
    for m in (v.m0, v.m1):
        assert np.linalg.eigvalsh(lyapunov_form(m, cert.p)).max() <= -5e-7
    assert np.linalg.eigvalsh(cert.p).min() >= 1e-6


def test_certificate_decays_along_reduced_trajectory():
    p = ModelParams(k=5)
    cert = find_common_lyapunov(build_vertices(p))
    assert cert is not None
    x_star = solve_equilibrium(p).x_star.values
    red = reduce_system(p, 0.5)
    traj = simulate(p, StateVector.initial(5, 0.9, 0.1), IntegrationConfig(horizon_t=20.0, record_stride=20))
    z = traj.states[:, red.kept] - x_star[red.kept]
    v = np.einsum("ti,ij,tj->t", z, cert.p, z)
    assert len(v) >= 100
    assert np.all(np.diff(v[:100]) < 0)


def test_certified_cells_also_converge_from_many_starts():
    grid = [0.05, 0.35, 0.65, 0.95]
    certified = 0
    for l1 in grid:
        for l2 in grid:
            p = ModelParams(k=5, lambda1=l1, lambda2=l2)
            if find_common_lyapunov(build_vertices(p)) is None:
                continue
            certified += 1
            assert len(multistart_equilibria(p, n_starts=20, seed=7)) == 1
    assert certified > 0
