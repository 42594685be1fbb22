import numpy as np
import pytest

from oracles import cca_generalized_eig, spd_power
from sicca.datamodel import CovarianceTriple, Dataset, empirical_covariances, whitened_operator
from sicca.erm import erm_canonical_correlation, solve_erm_exact
from sicca.errors import GapTooSmall, SingularCovariance
from sicca.metrics import Normalization, align


def _identity(sxy):
    dx, dy = sxy.shape
    return CovarianceTriple(np.eye(dx), np.asarray(sxy, float), np.eye(dy))


def test_diag_example():
    sol = solve_erm_exact(_identity(np.diag([0.6, 0.1])))
    np.testing.assert_allclose(sol.u, [1, 0], atol=1e-15)
    np.testing.assert_allclose(sol.v, [1, 0], atol=1e-15)
    assert sol.correlation_estimate == pytest.approx(0.6)
    assert sol.normalization is Normalization.EMPIRICAL_UNIT
    assert erm_canonical_correlation(_identity(np.diag([0.6, 0.1]))) == pytest.approx(0.6)


def _random_dataset(rng, dx, dy, n):
    mix = rng.standard_normal((dx + dy, dx + dy))
    Z = rng.standard_normal((n, dx + dy)) @ mix
    return Dataset(Z[:, :dx], Z[:, dx:])


@pytest.mark.parametrize("seed", range(10))
def test_normalization_and_eig_oracle(seed):
    rng = np.random.default_rng(seed)
    cov = empirical_covariances(_random_dataset(rng, 5, 5, 200))
    sol = solve_erm_exact(cov)
    assert sol.u @ cov.sxx @ sol.u == pytest.approx(1.0, abs=1e-10)
    assert sol.v @ cov.syy @ sol.v == pytest.approx(1.0, abs=1e-10)
    u, v, vals = cca_generalized_eig(cov.sxx, cov.sxy, cov.syy)
    from sicca.metrics import CcaSolution

    ref = CcaSolution(u, v)
    if u @ cov.sxx @ sol.u < 0:
        ref = ref.flipped()
    assert align(sol, ref, cov) >= 1 - 1e-8
    assert sol.correlation_estimate == pytest.approx(vals[0], abs=1e-10)


def test_objective_optimality():
    rng = np.random.default_rng(1)
    cov = empirical_covariances(_random_dataset(rng, 4, 3, 150))
    sol = solve_erm_exact(cov)
    best = sol.u @ cov.sxy @ sol.v
    U = rng.standard_normal((1000, 4))
    V = rng.standard_normal((1000, 3))
    U /= np.sqrt(np.einsum("ij,jk,ik->i", U, cov.sxx, U))[:, None]
    V /= np.sqrt(np.einsum("ij,jk,ik->i", V, cov.syy, V))[:, None]
    vals = np.einsum("ij,jk,ik->i", U, cov.sxy, V)
    assert np.all(best >= vals - 1e-9)


def test_lemma5_perturbation_bound():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = rng.standard_normal((4, 3)) * 0.2
        e = rng.standard_normal((4, 3)) * rng.uniform(0.001, 0.1)
        r = erm_canonical_correlation(_identity(t))
        rh = erm_canonical_correlation(_identity(t + e))
        assert abs(rh - r) <= np.linalg.norm(e, 2) + 1e-12


def test_matches_svd_oracle_on_whitened():
    rng = np.random.default_rng(3)
    cov = empirical_covariances(_random_dataset(rng, 3, 4, 80))
    t = spd_power(cov.sxx, -0.5) @ cov.sxy @ spd_power(cov.syy, -0.5)
    assert erm_canonical_correlation(cov) == pytest.approx(np.linalg.svd(t, compute_uv=False)[0], abs=1e-10)


def test_sign_inherited_from_whitened_operator():
    rng = np.random.default_rng(4)
    cov = empirical_covariances(_random_dataset(rng, 3, 3, 60))
    sol = solve_erm_exact(cov)
    a = whitened_operator(cov).left_vectors[:, 0]
    np.testing.assert_allclose(spd_power(cov.sxx, 0.5) @ sol.u, a, atol=1e-10)


def test_gap_too_small():
    with pytest.raises(GapTooSmall):
        solve_erm_exact(_identity(0.5 * np.eye(2)))


def test_singular_and_ridge():
    cov = CovarianceTriple(np.diag([1.0, 0.0]), np.array([[0.3], [0.0]]), np.eye(1))
    with pytest.raises(SingularCovariance):
        solve_erm_exact(cov)
    assert solve_erm_exact(cov, ridge=0.1).correlation_estimate > 0
