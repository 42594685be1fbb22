"""Streaming shift-and-invert CCA with streaming SVRG inner solves.

Every sample is drawn once from a :class:`SampleStream` and touched only through
rank-one products, so the solver state is O(d_x + d_y) regardless of how many
samples are consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import _kernels
from .datamodel import Dataset, SamplePair, empirical_covariances, read_csv, whitened_operator
from .errors import ConfigError, GapTooSmall, InvalidShift, SingularCovariance, StreamExhausted
from .erm import solve_erm_exact
from .generators import (
    BoundedModel,
    GeneralGaussianModel,
    Model,
    SingleCanonicalPairModel,
    StudentTModel,
    make_rng,
    population_solution,
    read_model_file,
)
from .metrics import CcaSolution, Normalization

CONTRACTION = 5.0 / 7.0
CHUNK_ELEMS = 1 << 17
MAX_OUTER = 200


# --- streams -------------------------------------------------------------------

class SampleStream:
    """Pull-based, one-pass source of sample pairs with a running draw counter."""

    d_x: int
    d_y: int

    def __init__(self, d_x: int, d_y: int):
        self.d_x, self.d_y = d_x, d_y
        self.samples_consumed = 0
        self.chunk_rows = max(1, CHUNK_ELEMS // (d_x + d_y))

    @property
    def d(self) -> int:
        return self.d_x + self.d_y

    def _next_block(self, limit: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _check_available(self, n: int) -> None:
        pass

    def chunks(self, n: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Deliver the next ``n`` samples as consecutive row blocks."""
        n = int(n)
        self._check_available(n)
        remaining = n
        while remaining > 0:
            x, y = self._next_block(min(remaining, self.chunk_rows))
            self.samples_consumed += x.shape[0]
            remaining -= x.shape[0]
            yield x, y

    def take(self, n: int) -> Dataset:
        parts = list(self.chunks(n))
        return Dataset(np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts]))

    def next_pair(self) -> SamplePair:
        x, y = next(self.chunks(1))
        return SamplePair(x[0], y[0])


class ModelStream(SampleStream):
    """Unbounded stream of draws from a generator model.

    Samples are produced in fixed-size blocks from one seeded generator, so the
    sequence does not depend on how requests are split.
    """

    def __init__(self, model: Model, seed: int):
        super().__init__(model.d_x, model.d_y)
        self.model = model
        self._rng = make_rng(seed)
        self._bx = np.empty((0, self.d_x))
        self._by = np.empty((0, self.d_y))
        self._pos = 0

    def _next_block(self, limit):
        if self._pos == self._bx.shape[0]:
            self._bx, self._by = self.model.draw(self._rng, self.chunk_rows)
            self._pos = 0
        k = min(limit, self._bx.shape[0] - self._pos)
        sl = slice(self._pos, self._pos + k)
        self._pos += k
        return self._bx[sl], self._by[sl]


class ReplayStream(SampleStream):
    """Finite stream over a dataset, replayed once in order."""

    def __init__(self, dataset: Dataset):
        super().__init__(dataset.d_x, dataset.d_y)
        self.dataset = dataset
        self._pos = 0

    @property
    def remaining(self) -> int:
        return self.dataset.n - self._pos

    def _check_available(self, n):
        if n > self.remaining:
            raise StreamExhausted(f"requested {n} samples, {self.remaining} left")

    def _next_block(self, limit):
        sl = slice(self._pos, self._pos + limit)
        self._pos += limit
        return self.dataset.X[sl], self.dataset.Y[sl]


def open_stream(spec: str, seed: Optional[int] = None) -> SampleStream:
    """Open ``model=<file>`` (needs ``seed``) or ``data=<csv>``."""
    key, sep, value = spec.partition("=")
    if not sep:
        raise ConfigError(f"stream spec must be model=<file> or data=<csv>, got {spec!r}")
    if key == "model":
        if seed is None:
            raise ConfigError("model-backed streams need a seed")
        return ModelStream(read_model_file(value).build(), seed)
    if key == "data":
        return ReplayStream(read_csv(Path(value)))
    raise ConfigError(f"unknown stream kind {key!r}")


# --- least-squares problem ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class StreamingLsProblem:
    """φ(w; x, y) = ½wᵀQ(x, y)w - wᵀD(x, y)w_t for the current anchor w_t."""

    lam: float
    w_t: np.ndarray
    d_x: int

    def gradient(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return stochastic_gradient(self, w, SamplePair(x, y))

    def batch_gradient(self, w: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Sum (not mean) of per-sample gradients over the rows of X, Y."""
        dx = self.d_x
        a, b = X @ w[:dx], Y @ w[dx:]
        at, bt = X @ self.w_t[:dx], Y @ self.w_t[dx:]
        return np.concatenate([X.T @ (self.lam * a - b - at), Y.T @ (self.lam * b - a - bt)])


def stochastic_gradient(prob: StreamingLsProblem, w: np.ndarray, pair: SamplePair) -> np.ndarray:
    x, y, dx = pair.x, pair.y, prob.d_x
    a, b = float(x @ w[:dx]), float(y @ w[dx:])
    at, bt = float(x @ prob.w_t[:dx]), float(y @ prob.w_t[dx:])
    return np.concatenate([(prob.lam * a - b - at) * x, (prob.lam * b - a - bt) * y])


# --- configuration ------------------------------------------------------------

def _ceil(x: float) -> int:
    # guards against products like 1936 * 100.00000000000001
    return int(math.ceil(x * (1.0 - 1e-12)))


@dataclass(frozen=True)
class StreamingConfig:
    """Constants of the streaming SVRG schedule.

    ``sigma_sq`` is the variance constant per unit ``‖r_t‖²``; the schedule
    only ever uses ``sigma_sq * ‖r_t‖² / (beta1 * ‖r_t‖²)``, so the norm cancels.
    """

    mu: float
    S: float
    sigma_sq: float
    beta1: float
    gamma_lb: float = 1e-3
    s: float = 1.0 / 352.0
    c2_inv: int = 44
    c3_inv: int = 20
    Gamma: Optional[int] = None

    def __post_init__(self):
        if self.s != 1.0 / 352.0:
            raise ValueError("the step constant s is fixed at 1/352")
        if min(self.mu, self.S, self.beta1) <= 0 or self.sigma_sq < 0:
            raise ValueError("mu, S, beta1 must be positive and sigma_sq nonnegative")

    @property
    def c2(self) -> float:
        return 1.0 / self.c2_inv

    @property
    def c3_init(self) -> float:
        return 1.0 / self.c3_inv

    @property
    def step(self) -> float:
        return self.s / self.S

    def m_tau(self) -> int:
        return _ceil(self.c2_inv**2 * self.S / self.mu)

    def k_tau(self, tau: int) -> int:
        floor = _ceil(self.c2_inv * self.S / self.mu)
        var = _ceil(self.c3_inv * self.sigma_sq * 2.0 ** (tau - 1) / self.beta1)
        return max(floor, var)

    def epochs_for(self, eta_t: float) -> int:
        if self.Gamma is not None:
            return self.Gamma
        return max(1, math.ceil(math.log2(1.0 / eta_t)))


@dataclass(frozen=True)
class ConditioningEstimates:
    mu: float
    S: float
    sigma_sq: float
    beta1: float
    gamma: float
    rho1: float
    second_moment: float
    data_class: str

    def config(self, gamma_lb: float = 1e-3) -> StreamingConfig:
        return StreamingConfig(self.mu, self.S, self.sigma_sq, self.beta1, gamma_lb)


def conditioning_estimates(
    source,
    lam: float,
    *,
    data_class: Optional[str] = None,
    gamma_lb: float = 1e-3,
    constant_scale: float = 1.0,
) -> ConditioningEstimates:
    """μ, S and σ² (per unit ‖r‖²) from a model or a pilot :class:`Dataset`.

    For a model the population quantities are used; for a pilot sample, γ is the
    smallest eigenvalue of the empirical auto-covariances (floored at
    ``gamma_lb``), ρ₁ is the empirical top canonical correlation and the second
    moment E‖x‖² + E‖y‖² is the sample mean.
    """
    if isinstance(source, Dataset):
        if source.n < 100:
            raise ValueError("pilot sample needs at least 100 draws")
        cov = empirical_covariances(source)
        gamma = min(np.linalg.eigvalsh(cov.sxx)[0], np.linalg.eigvalsh(cov.syy)[0])
        if gamma <= 1e-12:
            raise SingularCovariance("pilot auto-covariance is singular")
        rho1 = whitened_operator(cov).rho1
        m2 = float(np.mean(np.sum(source.X**2, axis=1) + np.sum(source.Y**2, axis=1)))
        cls = data_class or "subgaussian"
    else:
        model = source
        cls = data_class or ("bounded" if isinstance(model, BoundedModel) else "subgaussian")
        if isinstance(model, BoundedModel):
            model = model.base
        if isinstance(model, SingleCanonicalPairModel):
            gamma, rho1 = 1.0, model.delta
        elif isinstance(model, (GeneralGaussianModel, StudentTModel)):
            _, cond = population_solution(model)
            gamma, rho1 = cond.gamma, cond.rho1
        else:
            raise ConfigError(f"unsupported source {type(source).__name__}")
        m2 = source.second_moment()
    gamma = max(float(gamma), gamma_lb)
    if lam <= rho1:
        raise InvalidShift(f"lambda={lam:.6g} does not exceed the estimated rho1={rho1:.6g}")
    beta1 = 1.0 / (lam - rho1)
    mu = gamma / beta1
    if cls == "bounded":
        S = constant_scale * beta1 / gamma
        sig = constant_scale * beta1**3 / gamma**2
    elif cls == "subgaussian":
        S = constant_scale * m2 * beta1 / gamma
        sig = constant_scale * m2 * beta1**3
    else:
        raise ConfigError("data_class must be 'subgaussian' or 'bounded'")
    return ConditioningEstimates(mu, S, sig, beta1, gamma, float(rho1), m2, cls)


# --- streaming SVRG -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StreamingSvrgResult:
    w: np.ndarray
    samples: int
    draws: list  # (k_tau, m_tilde) per epoch


def streaming_svrg(
    prob: StreamingLsProblem,
    stream: SampleStream,
    cfg: StreamingConfig,
    eta_t: float,
    seed,
) -> StreamingSvrgResult:
    """Minimise E φ(w) from w⁰ = 0, drawing fresh samples for every gradient."""
    if not 0 < eta_t < 1:
        raise ValueError("eta_t must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    d = stream.d
    w = np.zeros(d)
    if not np.any(prob.w_t):
        return StreamingSvrgResult(w, 0, [])
    start = stream.samples_consumed
    m = cfg.m_tau()
    step = cfg.step
    draws = []
    for tau in range(1, cfg.epochs_for(eta_t) + 1):
        zbar = w
        k = cfg.k_tau(tau)
        g = np.zeros(d)
        for X, Y in stream.chunks(k):
            g += prob.batch_gradient(zbar, X, Y)
        g /= k
        m_tilde = int(rng.integers(1, m + 1))
        z = zbar.copy()
        for X, Y in stream.chunks(m_tilde):
            _kernels.stream_steps(X, Y, z, zbar, g, prob.lam, step)
        w = z
        draws.append((k, m_tilde))
    return StreamingSvrgResult(w, stream.samples_consumed - start, draws)


# --- outer loop -----------------------------------------------------------------

@dataclass(frozen=True)
class StreamingSettings:
    constant_scale: float = 1.0
    data_class: Optional[str] = None
    gamma_lb: float = 1e-3
    pilot_size: int = 2000
    init: str = "pilot"
    max_outer: int = MAX_OUTER

    def __post_init__(self):
        if self.init not in ("pilot", "random"):
            raise ValueError("init must be 'pilot' or 'random'")
        if self.constant_scale <= 0:
            raise ValueError("constant_scale must be positive")


@dataclass(frozen=True, eq=False)
class StreamingResult:
    solution: CcaSolution
    samples_used: int
    pilot_samples: int
    outer_iters: int
    g0_estimate: float
    conditioning: ConditioningEstimates
    eta_schedule: list = field(default_factory=list)
    draws: list = field(default_factory=list)


def eta_schedule(g0: float, T: int) -> list[float]:
    """Per-system accuracy targets: constant while the predicted potential exceeds
    one, then shrinking with its square."""
    coarse = 1.0 / (64.0 * (1.0 + g0**2))
    out = []
    for t in range(T):
        g = g0 * CONTRACTION**t
        out.append(coarse if g > 1.0 else g * g / 64.0)
    return out


def outer_count(g0: float, epsilon: float, cap: int = MAX_OUTER) -> int:
    target = math.sqrt(epsilon) / math.sqrt(8.0)
    t = math.ceil(math.log(g0 / target) / math.log(1.0 / CONTRACTION))
    return int(min(max(t, 1), cap))


def _pilot_potential(pilot: Dataset, lam: float, rho1: float, rho2: float) -> float:
    """Estimate G at the pilot ERM solution from the disagreement of two halves."""
    h = pilot.n // 2
    ta = whitened_operator(empirical_covariances(pilot.slice(0, h))).t_hat
    tb = whitened_operator(empirical_covariances(pilot.slice(h, pilot.n))).t_hat
    nu = 0.5 * float(np.linalg.norm(ta - tb, 2))
    gap = max(lam - rho1, rho1 - rho2)
    sin = min(2.0 * nu / gap, 0.99)
    tan = sin / math.sqrt(1.0 - sin * sin)
    return math.sqrt((lam + rho1) / (lam - rho1)) * tan


def streaming_si_cca(
    stream: SampleStream,
    lam: float,
    epsilon: float,
    settings: StreamingSettings = StreamingSettings(),
    seed: int = 0,
    *,
    conditioning: Optional[ConditioningEstimates] = None,
    truth_rho1: Optional[float] = None,
) -> StreamingResult:
    """Streaming CCA for a caller-supplied shift ``lam`` and target ``epsilon``.

    Unless ``conditioning`` is given, a pilot sample of ``settings.pilot_size``
    draws supplies the conditioning estimates. The pilot sample is also used for
    the pilot-ERM initialisation. Pilot draws count toward ``samples_used``.
    Passing ``truth_rho1`` (test mode) checks the shift against the true ρ₁.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if truth_rho1 is not None and lam <= truth_rho1:
        raise InvalidShift(f"lambda={lam:.6g} does not exceed rho1={truth_rho1:.6g}")
    rng = make_rng(seed)
    start = stream.samples_consumed
    pilot = None
    if conditioning is None or settings.init == "pilot":
        pilot = stream.take(max(100, settings.pilot_size))
    if conditioning is None:
        conditioning = conditioning_estimates(
            pilot, lam, data_class=settings.data_class, gamma_lb=settings.gamma_lb,
            constant_scale=settings.constant_scale,
        )
    cfg = conditioning.config(settings.gamma_lb)
    rho1 = conditioning.rho1
    d, dx = stream.d, stream.d_x

    w = None
    if pilot is not None:
        try:
            cov_p = empirical_covariances(pilot)
            erm = solve_erm_exact(cov_p)
            s = whitened_operator(cov_p).singular_values
            w = np.concatenate([erm.u, erm.v]) / math.sqrt(2.0)
            g0 = _pilot_potential(pilot, lam, erm.correlation_estimate, float(s[1]) if s.size > 1 else 0.0)
        except (GapTooSmall, SingularCovariance):
            w = None
    if w is None:
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        g0 = math.sqrt((lam + rho1) / (lam - rho1)) * math.sqrt(d)
    pilot_samples = stream.samples_consumed - start

    T = outer_count(g0, epsilon, settings.max_outer)
    etas = eta_schedule(g0, T)
    draws = []
    for t in range(T):
        prob = StreamingLsProblem(lam, w, dx)
        res = streaming_svrg(prob, stream, cfg, etas[t], rng)
        draws.append(res.draws)
        nrm = np.linalg.norm(res.w)
        if nrm == 0:
            break
        # scale is irrelevant to the power iteration; this only prevents overflow
        w = res.w / nrm

    u, v = math.sqrt(2.0) * w[:dx], math.sqrt(2.0) * w[dx:]
    if u[np.argmax(np.abs(u))] < 0:
        u, v = -u, -v
    sol = CcaSolution(u, v, Normalization.UNNORMALIZED, None)
    return StreamingResult(
        sol, stream.samples_consumed - start, pilot_samples, T, g0, conditioning, etas, draws
    )


def shift_from_population(model: Model, c: float = 0.5) -> float:
    """Test-mode helper: λ = ρ₁ + cΔ from the model's population solution."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    _, cond = population_solution(model)
    return cond.rho1 + c * cond.gap
