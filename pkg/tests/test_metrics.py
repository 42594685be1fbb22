import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sicca.datamodel import CovarianceTriple, whitened_operator
from sicca.errors import DegenerateDirection
from sicca.generators import GeneralGaussianModel, SingleCanonicalPairModel, population_solution
from sicca.metrics import (
    CcaSolution,
    Normalization,
    align,
    correlation_ratio,
    joint_alignment,
    singular_gap,
)


def _identity_cov(dx, dy, sxy=None):
    return CovarianceTriple(np.eye(dx), np.zeros((dx, dy)) if sxy is None else sxy, np.eye(dy))


def test_align_self_and_rescaled():
    m = GeneralGaussianModel.random(4, 3, [0.7, 0.2], 0.4, 1)
    truth, _ = population_solution(m)
    assert align(truth, truth, m.pop) == pytest.approx(1.0, abs=1e-12)
    scaled = CcaSolution(2 * truth.u, 3 * truth.v)
    assert align(scaled, truth, m.pop) == pytest.approx(1.0, abs=1e-12)


def test_align_identity_oracle():
    rng = np.random.default_rng(0)
    model = SingleCanonicalPairModel.random(5, 4, 0.5, 3)
    truth, _ = population_solution(model)
    cov = model.population_covariances()
    for _ in range(20):
        u, v = rng.standard_normal(5), rng.standard_normal(4)
        oracle = 0.5 * (u @ model.phi / np.linalg.norm(u) + v @ model.psi / np.linalg.norm(v))
        assert align(CcaSolution(u, v), truth, cov) == pytest.approx(oracle, abs=1e-12)


def test_align_degenerate():
    cov = CovarianceTriple(np.diag([1.0, 0.0]), np.zeros((2, 1)), np.eye(1))
    truth = CcaSolution([1.0, 0.0], [1.0])
    with pytest.raises(DegenerateDirection):
        align(CcaSolution([0.0, 1.0], [1.0]), truth, cov)


def test_zero_direction_rejected():
    with pytest.raises(DegenerateDirection):
        CcaSolution([0.0, 0.0], [1.0])


def test_correlation_ratio_examples():
    model = GeneralGaussianModel.random(4, 4, [0.6, 0.3], 0.5, 2)
    truth, cond = population_solution(model)
    assert correlation_ratio(truth, model.pop) == pytest.approx(cond.rho1, abs=1e-12)
    cov = _identity_cov(2, 2, 0.4 * np.outer([1, 0], [1, 0]))
    assert correlation_ratio(CcaSolution([1, 0], [0, 1]), cov) == 0.0


def test_correlation_ratio_oracle():
    rng = np.random.default_rng(1)
    model = GeneralGaussianModel.random(3, 5, [0.8, 0.1], 0.2, 4)
    c = model.pop
    for _ in range(10):
        u, v = rng.standard_normal(3), rng.standard_normal(5)
        oracle = (u @ c.sxy @ v) / math.sqrt((u @ c.sxx @ u) * (v @ c.syy @ v))
        assert correlation_ratio(CcaSolution(u, v), c) == pytest.approx(oracle, abs=1e-12)


def test_joint_alignment_examples():
    model = GeneralGaussianModel.random(3, 3, [0.6, 0.3], 0.5, 5)
    truth, _ = population_solution(model)
    assert joint_alignment(truth, truth, model.pop) == pytest.approx(1.0, abs=1e-12)
    # v shrunk toward zero: value stays at most one
    small = CcaSolution(truth.u, 1e-3 * truth.v)
    assert joint_alignment(small, truth, model.pop) <= 1.0 + 1e-12


def test_singular_gap():
    op = whitened_operator(_identity_cov(2, 2, np.diag([0.5, 0.2])))
    g = singular_gap(op)
    assert g.gap == pytest.approx(0.3) and g.rho1 == pytest.approx(0.5)
    op = whitened_operator(SingleCanonicalPairModel.axis(3, 3, 0.5).population_covariances())
    assert singular_gap(op).gap == pytest.approx(0.5, abs=1e-15)
    op = whitened_operator(_identity_cov(1, 1, np.array([[0.4]])))
    assert singular_gap(op).gap == pytest.approx(0.4)


def test_singular_gap_oracle():
    rng = np.random.default_rng(6)
    t = rng.standard_normal((4, 3)) * 0.2
    s = np.linalg.svd(t, compute_uv=False)
    g = singular_gap(whitened_operator(_identity_cov(4, 3, t)))
    assert g.gap == pytest.approx(s[0] - s[1], abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_align_scale_invariant_and_bounded(seed, a, b):
    rng = np.random.default_rng(seed)
    model = GeneralGaussianModel.random(3, 4, [0.5, 0.2], 0.3, seed % 1000)
    truth, _ = population_solution(model)
    sol = CcaSolution(rng.standard_normal(3), rng.standard_normal(4))
    base = align(sol, truth, model.pop)
    assert align(CcaSolution(a * sol.u, b * sol.v), truth, model.pop) == pytest.approx(base, abs=1e-12)
    assert base <= 1 + 1e-12


def test_normalized_helper():
    model = GeneralGaussianModel.random(3, 2, [0.5], 0.3, 7)
    sol = CcaSolution([1.0, 2.0, 3.0], [1.0, -1.0]).normalized(model.pop, Normalization.POPULATION_UNIT)
    assert sol.u @ model.pop.sxx @ sol.u == pytest.approx(1.0)
    assert sol.v @ model.pop.syy @ sol.v == pytest.approx(1.0)
