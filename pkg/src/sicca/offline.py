"""Offline shift-and-invert CCA with SVRG least-squares inner solves.

The outer loop runs inexact power iterations ``w <- A_lam^{-1} B w`` in the
concatenated variable ``w = (u; v)/sqrt(2)``, where

    A_lam = [[lam Sxx, -Sxy], [-Sxyᵀ, lam Syy]],    B = blockdiag(Sxx, Syy).

Each product is obtained by minimising ``f(w) = ½ wᵀA w - wᵀB w_t``, a finite
sum over samples, with SVRG.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg as sla

from . import _kernels
from .datamodel import (
    CovarianceTriple,
    Dataset,
    empirical_covariances,
    sqrt_psd,
    whitened_operator,
)
from .errors import (
    BracketFailure,
    DegenerateDirection,
    GapTooSmall,
    InvalidShift,
    MaxEpochsExceeded,
    MaxOuterExceeded,
    SingularCovariance,
)
from .generators import make_rng
from .metrics import CcaSolution, Normalization, correlation_ratio

CONTRACTION = 5.0 / 7.0
WARM_START_RATIO = 64.0
MIN_GAP = 1e-6
INFINITE_POTENTIAL = math.inf


@dataclass(frozen=True)
class SolveTolerance:
    """Required ratio between initial and final suboptimality of an inner solve."""

    ratio: float
    epsilon_t: Optional[float] = None

    def __post_init__(self):
        if not self.ratio >= 1:
            raise ValueError(f"ratio must be >= 1, got {self.ratio}")


@dataclass(frozen=True)
class SvrgConfig:
    epoch_len: Optional[int] = None  # default 2N
    step_scale: float = 0.1
    max_epochs: int = 64
    sampling: str = "lipschitz"

    def __post_init__(self):
        if self.sampling not in ("uniform", "lipschitz"):
            raise ValueError("sampling must be 'uniform' or 'lipschitz'")
        if self.step_scale <= 0 or self.max_epochs < 1:
            raise ValueError("step_scale must be positive and max_epochs >= 1")
        if self.epoch_len is not None and self.epoch_len < 1:
            raise ValueError("epoch_len must be positive")


class ShiftedSystem:
    """The shift λ together with the data needed for A_λ/B products and per-sample terms.

    Construction checks that A_λ is positive definite (equivalently λ > ρ̂₁) and
    caches its extreme eigenvalues, which the inner-solve certificate uses.
    """

    def __init__(self, dataset: Dataset, lam: float, cov: Optional[CovarianceTriple] = None):
        self.dataset = dataset
        self.lam = float(lam)
        self.cov = empirical_covariances(dataset) if cov is None else cov
        if self.cov.centered:
            raise ValueError("the finite-sum form needs uncentered covariances")
        self.d_x, self.d_y = dataset.d_x, dataset.d_y
        require_pd(self.cov)
        sq = np.einsum("ij,ij->i", dataset.X, dataset.X) + np.einsum("ij,ij->i", dataset.Y, dataset.Y)
        self.lipschitz = (self.lam + 1.0) * sq
        l2 = self.lipschitz**2
        self.sampling_weights = l2 / l2.sum()
        self.a_dense = assemble_A(self.cov, self.lam)
        ev = np.linalg.eigvalsh(self.a_dense)
        if ev[0] <= 0:
            raise InvalidShift(f"A_lambda is not positive definite at lambda={self.lam:.6g}")
        self.a_min, self.a_max = float(ev[0]), float(ev[-1])
        self._chol = None

    @property
    def d(self) -> int:
        return self.d_x + self.d_y

    def solve_exact(self, rhs: np.ndarray) -> np.ndarray:
        if self._chol is None:
            self._chol = sla.cho_factor(self.a_dense)
        return sla.cho_solve(self._chol, rhs)


def require_pd(cov: CovarianceTriple) -> None:
    for name, m in (("sxx", cov.sxx), ("syy", cov.syy)):
        if np.linalg.eigvalsh(m)[0] <= 1e-12:
            raise SingularCovariance(f"{name} is not positive definite")


def assemble_A(cov: CovarianceTriple, lam: float) -> np.ndarray:
    return np.block([[lam * cov.sxx, -cov.sxy], [-cov.sxy.T, lam * cov.syy]])


def assemble_B(cov: CovarianceTriple) -> np.ndarray:
    return sla.block_diag(cov.sxx, cov.syy)


def apply_A_lambda(sys: ShiftedSystem, w: np.ndarray) -> np.ndarray:
    c, dx = sys.cov, sys.d_x
    wx, wy = w[:dx], w[dx:]
    return np.concatenate([sys.lam * (c.sxx @ wx) - c.sxy @ wy, sys.lam * (c.syy @ wy) - c.sxy.T @ wx])


def apply_B(sys: ShiftedSystem, w: np.ndarray) -> np.ndarray:
    dx = sys.d_x
    return np.concatenate([sys.cov.sxx @ w[:dx], sys.cov.syy @ w[dx:]])


def least_squares_objective(sys: ShiftedSystem, w: np.ndarray, w_t: np.ndarray) -> float:
    return 0.5 * float(w @ apply_A_lambda(sys, w)) - float(w @ apply_B(sys, w_t))


def warm_start_scale(sys: ShiftedSystem, w_t: np.ndarray) -> float:
    """Minimiser of α ↦ f(α w_t), i.e. (w_tᵀB w_t)/(w_tᵀA w_t)."""
    den = float(w_t @ apply_A_lambda(sys, w_t))
    if abs(den) < 1e-300:
        raise DegenerateDirection("w_t has zero A-norm")
    return float(w_t @ apply_B(sys, w_t)) / den


def kappa_diagnostic(sys: ShiftedSystem) -> float:
    return float(np.mean(sys.lipschitz**2)) / sys.a_min**2


# --- SVRG --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SvrgResult:
    w: np.ndarray
    epochs: int
    converged: bool
    grad_sq_initial: float
    grad_sq_final: float
    # lower bound on (initial f-gap)/(final f-gap) implied by the two gradients
    certified_ratio: float = math.inf


def svrg_solve(
    sys: ShiftedSystem,
    w_t: np.ndarray,
    init: np.ndarray,
    tol: SolveTolerance,
    seed,
    config: SvrgConfig = SvrgConfig(),
) -> SvrgResult:
    """Approximately minimise ``f(w) = ½wᵀAw - wᵀBw_t`` starting at ``init``.

    Stops once ``‖∇f(w)‖²/(2 a_min) <= (‖∇f(init)‖²/(2 a_max)) / tol.ratio``.
    The left side bounds the final suboptimality from above and the right side
    bounds the initial one from below, so the f-gap ratio is certified. If the
    epoch budget runs out, warns with MaxEpochsExceeded and returns the iterate
    with the smallest gradient seen.
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    X, Y = sys.dataset.X, sys.dataset.Y
    n = sys.dataset.n
    b = apply_B(sys, np.asarray(w_t, dtype=np.float64))
    w = np.array(init, dtype=np.float64, copy=True)
    g = apply_A_lambda(sys, w) - b
    g0 = float(g @ g)
    if g0 == 0.0:
        return SvrgResult(w, 0, True, 0.0, 0.0)
    target = g0 * sys.a_min / (sys.a_max * tol.ratio)
    m = config.epoch_len or 2 * n
    if config.sampling == "lipschitz":
        p = sys.sampling_weights
        weights = 1.0 / (n * p)
        step = config.step_scale / float(np.mean(sys.lipschitz))
    else:
        p = None
        weights = np.ones(n)
        step = config.step_scale / float(np.max(sys.lipschitz))
    best_w, best_g = w.copy(), g0
    gsq = g0
    for epoch in range(1, config.max_epochs + 1):
        idx = rng.choice(n, size=m, p=p) if p is not None else rng.integers(0, n, size=m)
        anchor = w.copy()
        _kernels.svrg_epoch(X, Y, idx.astype(np.int64), weights, w, anchor, g, sys.lam, step)
        if not np.all(np.isfinite(w)):
            w = best_w.copy()
            step *= 0.5
            g = apply_A_lambda(sys, w) - b
            continue
        g = apply_A_lambda(sys, w) - b
        gsq = float(g @ g)
        if gsq < best_g:
            best_w, best_g = w.copy(), gsq
        if gsq <= target:
            return _result(w, epoch, True, g0, gsq, sys)
    warnings.warn(
        f"SVRG did not certify ratio {tol.ratio:g} within {config.max_epochs} epochs",
        MaxEpochsExceeded,
        stacklevel=2,
    )
    return _result(best_w, config.max_epochs, False, g0, best_g, sys)


def _result(w, epochs, ok, g0, g1, sys) -> SvrgResult:
    ratio = math.inf if g1 == 0 else (g0 / sys.a_max) / (g1 / sys.a_min)
    return SvrgResult(w, epochs, ok, g0, g1, ratio)


# --- test-mode spectral view --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralView:
    """Dense eigendecomposition of M_λ = B^{1/2} A_λ^{-1} B^{1/2} (descending)."""

    beta: np.ndarray
    vectors: np.ndarray
    b_half: np.ndarray


def spectral_view(sys: ShiftedSystem) -> SpectralView:
    bh = sqrt_psd(assemble_B(sys.cov))
    m = bh @ sys.solve_exact(bh)
    beta, P = np.linalg.eigh(0.5 * (m + m.T))
    return SpectralView(beta[::-1].copy(), P[:, ::-1].copy(), bh)


def potential_G(r: np.ndarray, view: SpectralView) -> float:
    """M⁻¹-weighted ratio of the components of r off and along the top eigenvector."""
    r = np.asarray(r, dtype=np.float64)
    nr = np.linalg.norm(r)
    if nr == 0:
        raise DegenerateDirection("r must be nonzero")
    xi = view.vectors.T @ (r / nr)
    par = xi[0] ** 2 / view.beta[0]
    if par == 0.0:
        return INFINITE_POTENTIAL
    return math.sqrt(float(np.sum(xi[1:] ** 2 / view.beta[1:])) / par)


potential_g = potential_G


@dataclass(frozen=True)
class Diagnostics:
    beta: np.ndarray
    xi: np.ndarray
    G: float


@dataclass(frozen=True, eq=False)
class IterateState:
    w: np.ndarray
    t: int
    alpha_star: Optional[float] = None
    diagnostics: Optional[Diagnostics] = None


def diagnose(w: np.ndarray, view: SpectralView) -> Diagnostics:
    r = view.b_half @ w
    xi = view.vectors.T @ (r / np.linalg.norm(r))
    return Diagnostics(view.beta, xi, potential_G(r, view))


# --- shift location -----------------------------------------------------------

@dataclass(frozen=True)
class ShiftCertificate:
    lam: float
    rho1: float
    rho2: float
    rounds: int

    @property
    def gap(self) -> float:
        return self.rho1 - self.rho2


def certificate_holds(lam: float, rho1: float, rho2: float, l: float = 0.25, u: float = 0.75) -> bool:
    """True when λ - ρ₁ lies in [lΔ, uΔ] with a safety margin on both sides."""
    gap = rho1 - rho2
    if gap <= 0:
        return False
    margin = min(gap / 8.0, (u - l) * gap / 4.0)
    dist = lam - rho1
    return l * gap + margin <= dist <= u * gap - margin


def _b_orth(V: np.ndarray, bmat: np.ndarray) -> np.ndarray:
    g = V.T @ bmat @ V
    c = np.linalg.cholesky(0.5 * (g + g.T))
    return sla.solve_triangular(c, V.T, lower=True).T


def _ritz(V, Z, bmat):
    h = V.T @ bmat @ Z
    theta, S = np.linalg.eigh(0.5 * (h + h.T))
    return theta[::-1], S[:, ::-1]


def _initial_guess(cov: CovarianceTriple, V: np.ndarray, iters: int = 8):
    """A few block power steps on B⁻¹C + I; returns Ritz estimates of ρ₁, ρ₂ and the block."""
    bmat = assemble_B(cov)
    cmat = bmat.copy()
    dx = cov.d_x
    cmat[:dx, :dx] = 0
    cmat[dx:, dx:] = 0
    cmat[:dx, dx:] = cov.sxy
    cmat[dx:, :dx] = cov.sxy.T
    chol = sla.cho_factor(bmat)
    V = _b_orth(V, bmat)
    for _ in range(iters):
        V = _b_orth(sla.cho_solve(chol, cmat @ V) + V, bmat)
    h = V.T @ cmat @ V
    theta, S = np.linalg.eigh(0.5 * (h + h.T))
    theta, S = theta[::-1], S[:, ::-1]
    return float(theta[0]), float(max(theta[1], 0.0)), V @ S


def locate_shift(
    dataset: Optional[Dataset] = None,
    *,
    cov: Optional[CovarianceTriple] = None,
    l: float = 0.25,
    u: float = 0.75,
    max_rounds: int = 32,
    power_iters: int = 40,
    exact: bool = False,
    inner: SvrgConfig = SvrgConfig(),
    solve_ratio: float = 1e3,
    seed=0,
) -> ShiftCertificate:
    """Find λ with λ - ρ̂₁ ∈ [lΔ̂, uΔ̂] by repeated shrinking toward ρ̂₁.

    Each round runs block power iterations on M_λ (three columns), reads ρ̂₁ and
    ρ̂₂ from the Ritz values ``θ_i ≈ 1/(λ - ρ̂_i)``, and stops when the bracket
    certificate holds with margin Δ̂/8. Otherwise λ moves to ρ̂₁ + ½(l+u)Δ̂, but
    never closer to ρ̂₁ than half the current distance. With ``exact=True`` the
    products with A_λ⁻¹ are dense solves and ``cov`` alone suffices.
    """
    if not 0 <= l < u < 1:
        raise ValueError("need 0 <= l < u < 1")
    if cov is None:
        if dataset is None:
            raise ValueError("locate_shift needs a dataset or a covariance triple")
        cov = empirical_covariances(dataset)
    if not exact and dataset is None:
        raise ValueError("inexact mode needs the dataset for SVRG solves")
    require_pd(cov)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    d = cov.d_x + cov.d_y
    k = min(3, d)
    bmat = assemble_B(cov)
    r1, r2, V = _initial_guess(cov, rng.standard_normal((d, k)))
    lam = 1.0 + max(r1 - r2, 1e-3)
    lam_safe = lam
    for rnd in range(1, max_rounds + 1):
        try:
            if exact:
                a = assemble_A(cov, lam)
                if np.linalg.eigvalsh(a)[0] <= 0:
                    raise InvalidShift("A_lambda not positive definite")
                chol = sla.cho_factor(a)
                solve = lambda rhs, _init: sla.cho_solve(chol, rhs)  # noqa: E731
            else:
                sys = ShiftedSystem(dataset, lam, cov)

                def solve(rhs, init, sys=sys):
                    out = np.empty_like(rhs)
                    for j in range(rhs.shape[1]):
                        res = _quiet_svrg(sys, rhs[:, j], init[:, j], solve_ratio, rng, inner)
                        out[:, j] = res.w
                    return out

        except InvalidShift:
            # overshot below ρ̂₁: back off halfway toward the last valid shift
            lam = 0.5 * (lam + lam_safe)
            continue
        lam_safe = lam
        V = _b_orth(V, bmat)
        theta = np.zeros(k)
        prev = None
        stable = False
        for it in range(power_iters):
            # the (M_λ)-product in w-space is A⁻¹B v; warm start each column at θ_j v_j
            Z = solve(V, V * np.where(theta > 0, theta, 1.0 / (lam + 1.0)))
            theta, S = _ritz(V, Z, bmat)
            V = _b_orth(Z @ S, bmat)
            if prev is not None and np.all(np.abs(theta[:2] - prev[:2]) <= 1e-5 * theta[0]):
                stable = True
                break
            prev = theta.copy()
        rho1 = lam - 1.0 / theta[0]
        rho2 = max(lam - 1.0 / theta[1], 0.0) if theta[1] > 0 else 0.0
        gap = rho1 - rho2
        if stable and gap < MIN_GAP:
            raise GapTooSmall(f"estimated gap {gap:.3e} below {MIN_GAP}")
        if stable and certificate_holds(lam, rho1, rho2, l, u):
            return ShiftCertificate(lam, rho1, rho2, rnd)
        gap = max(gap, MIN_GAP)
        dist = lam - rho1
        target = rho1 + 0.5 * (l + u) * gap
        lam = max(target, rho1 + 0.5 * dist) if target < lam else target
    raise BracketFailure(f"no certified shift after {max_rounds} rounds")


def _quiet_svrg(sys, w_t, init, ratio, rng, cfg):
    # uncertified solves still give usable Ritz estimates; the locator re-checks stability
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxEpochsExceeded)
        # A⁻¹(B v) is the minimiser of ½wᵀAw - wᵀBv, so pass v as the anchor
        return svrg_solve(sys, w_t, init, SolveTolerance(ratio), rng, cfg)


# --- outer loop ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OfflineResult:
    solution: CcaSolution
    outer_iters: int
    planned_outer: int
    lam: float
    g0_estimate: float
    inner_epochs: int
    history: list = field(default_factory=list)


def planned_iterations(g0: float, eta_inner: float) -> int:
    return max(1, math.ceil(math.log(g0 / eta_inner) / math.log(1.0 / CONTRACTION)))


def offline_si_cca(
    dataset: Dataset,
    *,
    eta: float = 1e-3,
    l: float = 0.25,
    u: float = 0.75,
    max_outer: int = 200,
    inner: SvrgConfig = SvrgConfig(),
    seed: int = 0,
    lam: Optional[float] = None,
    c_shift: Optional[float] = None,
    exact_inner: bool = False,
    test_mode: bool = False,
    early_exit: bool = True,
    w0: Optional[np.ndarray] = None,
    locate_rounds: int = 32,
) -> OfflineResult:
    """Top canonical pair of ``dataset`` by shift-and-invert power iterations.

    The shift comes from :func:`locate_shift` unless ``lam`` is given, or
    ``c_shift`` is given, in which case λ = ρ̂₁ + c_shift·Δ̂ from a dense SVD
    (a test-mode shortcut). The number of outer iterations is fixed in advance
    from a pessimistic estimate of the initial potential; the loop may end
    earlier when the Rayleigh quotient stops changing.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    seeds = np.random.SeedSequence(int(seed)).spawn(3)
    rng_shift, rng_init, rng_inner = (np.random.Generator(np.random.PCG64(s)) for s in seeds)
    cov = empirical_covariances(dataset)
    d = dataset.d_x + dataset.d_y
    if lam is None and c_shift is None:
        cert = locate_shift(
            dataset, cov=cov, l=l, u=u, max_rounds=locate_rounds, exact=exact_inner,
            inner=inner, seed=rng_shift,
        )
        lam, rho_est = cert.lam, cert.rho1
    else:
        s = whitened_operator(cov).singular_values
        rho_est = float(s[0])
        if lam is None:
            gap = rho_est - (float(s[1]) if s.size > 1 else 0.0)
            if gap < MIN_GAP:
                raise GapTooSmall(f"empirical gap {gap:.3e} below {MIN_GAP}")
            lam = rho_est + c_shift * gap
    sys = ShiftedSystem(dataset, lam, cov)
    view = spectral_view(sys) if test_mode else None

    if w0 is None:
        w = rng_init.standard_normal(d)
    else:
        w = np.array(w0, dtype=np.float64)
    w = w / math.sqrt(float(w @ apply_B(sys, w)))

    g0 = math.sqrt((lam + rho_est) / max(lam - rho_est, 1e-300)) * math.sqrt(d)
    eta_inner = math.sqrt(eta / 8.0)
    T = planned_iterations(g0, eta_inner)
    if T > max_outer:
        raise MaxOuterExceeded(f"{T} outer iterations needed, max_outer={max_outer}")

    history = []
    if test_mode:
        history.append(IterateState(w.copy(), 0, None, diagnose(w, view)))
    rq_prev = _rayleigh(sys, w)
    epochs = 0
    t = 0
    for t in range(1, T + 1):
        alpha = warm_start_scale(sys, w)
        if exact_inner:
            w_new = sys.solve_exact(apply_B(sys, w))
        else:
            ratio = WARM_START_RATIO * max(1.0, g0 * CONTRACTION ** (t - 1))
            res = svrg_solve(sys, w, alpha * w, SolveTolerance(ratio), rng_inner, inner)
            epochs += res.epochs
            w_new = res.w
        # the power iteration is scale invariant; rescaling only guards against overflow
        w = w_new / np.linalg.norm(w_new)
        if test_mode:
            history.append(IterateState(w.copy(), t, alpha, diagnose(w, view)))
        rq = _rayleigh(sys, w)
        if early_exit and abs(rq - rq_prev) < 1e-12:
            break
        rq_prev = rq

    dx = dataset.d_x
    sol = CcaSolution(w[:dx], w[dx:]).normalized(cov, Normalization.EMPIRICAL_UNIT)
    # same sign rule as the whitened SVD: largest entry of Sxx^{1/2} u positive
    a = sqrt_psd(cov.sxx) @ sol.u
    if a[np.argmax(np.abs(a))] < 0:
        sol = sol.flipped()
    sol = CcaSolution(sol.u, sol.v, Normalization.EMPIRICAL_UNIT, correlation_ratio(sol, cov))
    return OfflineResult(sol, t, T, float(lam), g0, epochs, history)


def _rayleigh(sys: ShiftedSystem, w: np.ndarray) -> float:
    dx = sys.d_x
    num = 2.0 * float(w[:dx] @ sys.cov.sxy @ w[dx:])
    return num / float(w @ apply_B(sys, w))
