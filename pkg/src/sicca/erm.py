"""Exact empirical CCA via whitening and a dense SVD."""

from __future__ import annotations

from .datamodel import CovarianceTriple, whitened_operator
from .errors import GapTooSmall
from .metrics import CcaSolution, Normalization, singular_gap

GAP_TOL = 1e-10


def solve_erm_exact(cov: CovarianceTriple, ridge: float = 0.0) -> CcaSolution:
    """Top canonical pair of ``cov``, normalized so uᵀΣxx u = vᵀΣyy v = 1.

    Raises GapTooSmall when the top two singular values of the whitened
    cross-covariance are closer than 1e-10, since the answer is then not unique.
    """
    op = whitened_operator(cov, ridge)
    cond = singular_gap(op)
    if cond.gap < GAP_TOL:
        raise GapTooSmall(f"empirical gap {cond.gap:.3e} below {GAP_TOL}")
    u = op.inv_sqrt_xx @ op.left_vectors[:, 0]
    v = op.inv_sqrt_yy @ op.right_vectors[:, 0]
    return CcaSolution(u, v, Normalization.EMPIRICAL_UNIT, cond.rho1)


def erm_canonical_correlation(cov: CovarianceTriple, ridge: float = 0.0) -> float:
    return whitened_operator(cov, ridge).rho1
