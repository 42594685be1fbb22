"""Alignment, correlation ratio and gap measures for CCA direction pairs."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datamodel import CovarianceTriple, WhitenedOperator
from .errors import DegenerateDirection

NORM_FLOOR = 1e-14


class Normalization(enum.Enum):
    EMPIRICAL_UNIT = "EmpiricalUnit"
    POPULATION_UNIT = "PopulationUnit"
    UNNORMALIZED = "Unnormalized"


@dataclass(frozen=True, eq=False)
class CcaSolution:
    u: np.ndarray
    v: np.ndarray
    normalization: Normalization = Normalization.UNNORMALIZED
    correlation_estimate: Optional[float] = None

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64).ravel()
        v = np.array(self.v, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise DegenerateDirection("solution has non-finite entries")
        if not (np.any(u) and np.any(v)):
            raise DegenerateDirection("solution directions must be nonzero")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def flipped(self) -> "CcaSolution":
        return CcaSolution(-self.u, -self.v, self.normalization, self.correlation_estimate)

    def normalized(self, cov: CovarianceTriple, kind: Normalization) -> "CcaSolution":
        """Rescale so that uᵀΣxx u = vᵀΣyy v = 1 under ``cov``."""
        nu = _weighted_norm(self.u, cov.sxx)
        nv = _weighted_norm(self.v, cov.syy)
        return CcaSolution(self.u / nu, self.v / nv, kind, self.correlation_estimate)


@dataclass(frozen=True)
class ProblemConditioning:
    gap: float
    rho1: float
    gamma: Optional[float] = None


def _weighted_norm(z: np.ndarray, s: np.ndarray) -> float:
    # ‖Σ^{1/2} z‖ = sqrt(zᵀΣz); no square root of Σ is formed
    q = float(z @ s @ z)
    n = math.sqrt(max(q, 0.0))
    if n < NORM_FLOOR:
        raise DegenerateDirection(f"direction has covariance norm {n:.3e}")
    return n


def align(candidate: CcaSolution, truth: CcaSolution, cov: CovarianceTriple) -> float:
    nu = _weighted_norm(candidate.u, cov.sxx)
    nv = _weighted_norm(candidate.v, cov.syy)
    cu = float(candidate.u @ cov.sxx @ truth.u) / nu
    cv = float(candidate.v @ cov.syy @ truth.v) / nv
    return 0.5 * (cu + cv)


def correlation_ratio(sol: CcaSolution, cov: CovarianceTriple) -> float:
    nu = _weighted_norm(sol.u, cov.sxx)
    nv = _weighted_norm(sol.v, cov.syy)
    return float(sol.u @ cov.sxy @ sol.v) / (nu * nv)


def joint_alignment(sol: CcaSolution, truth: CcaSolution, cov: CovarianceTriple) -> float:
    num = float(truth.u @ cov.sxx @ sol.u + truth.v @ cov.syy @ sol.v)
    den2 = float(sol.u @ cov.sxx @ sol.u + sol.v @ cov.syy @ sol.v)
    if den2 <= NORM_FLOOR**2:
        raise DegenerateDirection("joint direction has zero covariance norm")
    return num / (math.sqrt(2.0) * math.sqrt(den2))


def singular_gap(op: WhitenedOperator) -> ProblemConditioning:
    s = np.asarray(op.singular_values)
    s1 = float(s[0])
    s2 = float(s[1]) if s.size > 1 else 0.0
    return ProblemConditioning(gap=s1 - s2, rho1=s1)


def orient(candidate: CcaSolution, truth: CcaSolution, cov: CovarianceTriple) -> CcaSolution:
    """Resolve the global sign ambiguity of ``candidate`` toward ``truth``."""
    s = float(candidate.u @ cov.sxx @ truth.u + candidate.v @ cov.syy @ truth.v)
    return candidate.flipped() if s < 0 else candidate
