"""Seeded synthetic sources with known population CCA solutions.

Randomness: every dataset or stream owns exactly one ``numpy.random.Generator``
backed by PCG64 and seeded with a 64-bit integer. Gaussian draws are taken as one
``(n, d_x + d_y)`` block per request, so drawing n rows in one call or in several
consecutive chunks yields the same samples.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .datamodel import CovarianceTriple, Dataset, sqrt_psd, whitened_operator
from .errors import ConfigError, GapTooSmall, InvalidModel
from .metrics import CcaSolution, Normalization, ProblemConditioning

GAP_TOL = 1e-10
STUDENT_DOF = 5


def make_rng(seed: int) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class SingleCanonicalPairModel:
    """Identity auto-covariances and cross-covariance ``delta * phi psiᵀ``.

    Sampling uses the structured square-root factor

        x = z_x,   y = delta*psi*(phiᵀz_x) + z_y - (1 - sqrt(1 - delta²))*psi*(psiᵀz_y)

    which reproduces the joint covariance exactly in O(d) work per sample.
    """

    d_x: int
    d_y: int
    delta: float
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if self.d_x < 1 or self.d_y < 1:
            raise InvalidModel("dimensions must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise InvalidModel(f"delta must lie in [0, 1), got {self.delta}")
        phi = np.array(self.phi, dtype=np.float64).ravel()
        psi = np.array(self.psi, dtype=np.float64).ravel()
        if phi.shape != (self.d_x,) or psi.shape != (self.d_y,):
            raise InvalidModel("phi/psi lengths must match d_x/d_y")
        if abs(np.linalg.norm(phi) - 1) > 1e-12 or abs(np.linalg.norm(psi) - 1) > 1e-12:
            raise InvalidModel("phi and psi must be unit vectors")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def axis(cls, d_x: int, d_y: int, delta: float) -> "SingleCanonicalPairModel":
        return cls(d_x, d_y, delta, np.eye(d_x)[0], np.eye(d_y)[0])

    @classmethod
    def random(cls, d_x: int, d_y: int, delta: float, seed: int) -> "SingleCanonicalPairModel":
        rng = make_rng(seed)
        return cls(d_x, d_y, delta, _unit(rng.standard_normal(d_x)), _unit(rng.standard_normal(d_y)))

    @property
    def d(self) -> int:
        return self.d_x + self.d_y

    def population_covariances(self) -> CovarianceTriple:
        return CovarianceTriple(
            np.eye(self.d_x), self.delta * np.outer(self.phi, self.psi), np.eye(self.d_y)
        )

    def joint_covariance(self) -> np.ndarray:
        return self.population_covariances().joint()

    def second_moment(self) -> float:
        return float(self.d)

    def color(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zx, zy = Z[:, : self.d_x], Z[:, self.d_x :]
        c = 1.0 - math.sqrt(1.0 - self.delta**2)
        y = zy + np.outer(self.delta * (zx @ self.phi) - c * (zy @ self.psi), self.psi)
        return zx, y

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        return self.color(rng.standard_normal((n, self.d)))


@dataclass(frozen=True, eq=False)
class GeneralGaussianModel:
    pop: CovarianceTriple

    def __post_init__(self):
        joint = self.pop.joint()
        try:
            factor = np.linalg.cholesky(joint)
        except np.linalg.LinAlgError:
            raise InvalidModel("joint covariance is not positive definite") from None
        for name, m in (("sxx", self.pop.sxx), ("syy", self.pop.syy)):
            if np.linalg.eigvalsh(m)[-1] > 1 + 1e-10:
                raise InvalidModel(f"{name} has spectral norm above 1")
        op = whitened_operator(self.pop)
        object.__setattr__(self, "_factor", factor)
        object.__setattr__(self, "op", op)

    @classmethod
    def random(
        cls, d_x: int, d_y: int, rhos, gamma: float = 0.5, seed: int = 0
    ) -> "GeneralGaussianModel":
        """Random model with canonical correlations ``rhos`` and auto-covariance
        spectra spread evenly over ``[gamma, 1]``."""
        rhos = np.asarray(rhos, dtype=np.float64)
        k = min(d_x, d_y)
        if rhos.size > k or np.any(rhos < 0) or np.any(rhos >= 1):
            raise InvalidModel("need at most min(d_x, d_y) correlations in [0, 1)")
        if not 0 < gamma <= 1:
            raise InvalidModel("gamma must lie in (0, 1]")
        rng = make_rng(seed)

        def orth(n):
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            return q

        def auto(n):
            q = orth(n)
            return (q * np.linspace(gamma, 1.0, n)[::-1]) @ q.T

        sxx, syy = auto(d_x), auto(d_y)
        sxx, syy = 0.5 * (sxx + sxx.T), 0.5 * (syy + syy.T)
        a, b = orth(d_x)[:, : rhos.size], orth(d_y)[:, : rhos.size]
        t = (a * rhos) @ b.T
        sxy = sqrt_psd(sxx) @ t @ sqrt_psd(syy)
        return cls(CovarianceTriple(sxx, sxy, syy))

    @property
    def d_x(self) -> int:
        return self.pop.d_x

    @property
    def d_y(self) -> int:
        return self.pop.d_y

    @property
    def d(self) -> int:
        return self.d_x + self.d_y

    def population_covariances(self) -> CovarianceTriple:
        return self.pop

    def second_moment(self) -> float:
        return float(np.trace(self.pop.sxx) + np.trace(self.pop.syy))

    def color(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W = Z @ self._factor.T
        return W[:, : self.d_x], W[:, self.d_x :]

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        return self.color(rng.standard_normal((n, self.d)))


GaussianModel = Union[SingleCanonicalPairModel, GeneralGaussianModel]


@dataclass(frozen=True, eq=False)
class BoundedModel:
    """Gaussian draws jointly rescaled so that both views have norm at most ``radius``."""

    base: GaussianModel
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidModel("radius must be positive")

    d_x = property(lambda self: self.base.d_x)
    d_y = property(lambda self: self.base.d_y)
    d = property(lambda self: self.base.d)

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.base.draw(rng, n)
        r = np.maximum(np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)) / self.radius
        s = 1.0 / np.maximum(1.0, r)
        return x * s[:, None], y * s[:, None]

    def second_moment(self) -> float:
        return 2.0 * self.radius**2


@dataclass(frozen=True, eq=False)
class StudentTModel:
    """Polynomial-tail source: multivariate Student-t whitened variable, unit covariance,
    colored by the base model's square-root factor."""

    base: GaussianModel
    dof: int = STUDENT_DOF

    def __post_init__(self):
        if self.dof <= 2:
            raise InvalidModel("dof must exceed 2 for a finite covariance")

    d_x = property(lambda self: self.base.d_x)
    d_y = property(lambda self: self.base.d_y)
    d = property(lambda self: self.base.d)

    def population_covariances(self) -> CovarianceTriple:
        return self.base.population_covariances()

    def second_moment(self) -> float:
        return self.base.second_moment()

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        Z = rng.standard_normal((n, self.d))
        scale = np.sqrt((self.dof - 2) / rng.chisquare(self.dof, size=n))
        return self.base.color(Z * scale[:, None])


Model = Union[SingleCanonicalPairModel, GeneralGaussianModel, BoundedModel, StudentTModel]


def _sample(model, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    x, y = model.draw(make_rng(seed), int(n))
    return Dataset(x, y)


def sample_single_canonical_pair(model: SingleCanonicalPairModel, n: int, seed: int) -> Dataset:
    return _sample(model, n, seed)


def sample_general_gaussian(model: GeneralGaussianModel, n: int, seed: int) -> Dataset:
    return _sample(model, n, seed)


def sample_bounded(model: BoundedModel, n: int, seed: int) -> Dataset:
    return _sample(model, n, seed)


def sample_student_t(model: StudentTModel, n: int, seed: int) -> Dataset:
    return _sample(model, n, seed)


def sample(model: Model, n: int, seed: int) -> Dataset:
    return _sample(model, n, seed)


def population_solution(model: Model) -> tuple[CcaSolution, ProblemConditioning]:
    if isinstance(model, StudentTModel):
        model = model.base
    if isinstance(model, SingleCanonicalPairModel):
        if model.delta <= GAP_TOL:
            raise GapTooSmall("single canonical pair model with zero gap")
        sol = CcaSolution(model.phi, model.psi, Normalization.POPULATION_UNIT, model.delta)
        return sol, ProblemConditioning(gap=model.delta, rho1=model.delta, gamma=1.0)
    if isinstance(model, GeneralGaussianModel):
        op = model.op
        s = op.singular_values
        gap = float(s[0] - (s[1] if s.size > 1 else 0.0))
        if gap < GAP_TOL:
            raise GapTooSmall(f"population gap {gap:.3e} below {GAP_TOL}")
        u = op.inv_sqrt_xx @ op.left_vectors[:, 0]
        v = op.inv_sqrt_yy @ op.right_vectors[:, 0]
        gamma = float(min(np.linalg.eigvalsh(model.pop.sxx)[0], np.linalg.eigvalsh(model.pop.syy)[0]))
        sol = CcaSolution(u, v, Normalization.POPULATION_UNIT, float(s[0]))
        return sol, ProblemConditioning(gap=gap, rho1=float(s[0]), gamma=gamma)
    raise InvalidModel(f"no closed-form population solution for {type(model).__name__}")


# --- model files -------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Parsed form of a key = value model description."""

    kind: str = "single_pair"
    d_x: int = 5
    d_y: int = 5
    delta: float = 0.5
    seed: int = 0
    directions: str = "random"
    rho1: float = 0.9
    gamma: float = 0.5
    base: str = "single_pair"
    radius: float = 1.0
    dof: int = STUDENT_DOF

    KINDS = ("single_pair", "gaussian", "bounded", "student_t")

    def replace(self, **kw) -> "ModelSpec":
        return dataclasses.replace(self, **kw)

    def build(self) -> Model:
        if self.kind == "bounded":
            return BoundedModel(self.replace(kind=self.base).build(), self.radius)
        if self.kind == "student_t":
            return StudentTModel(self.replace(kind=self.base).build(), self.dof)
        if self.kind == "single_pair":
            if self.directions == "axis":
                return SingleCanonicalPairModel.axis(self.d_x, self.d_y, self.delta)
            return SingleCanonicalPairModel.random(self.d_x, self.d_y, self.delta, self.seed)
        if self.kind == "gaussian":
            rhos = [self.rho1, self.rho1 - self.delta]
            if rhos[1] < 0:
                raise InvalidModel("gaussian model needs delta <= rho1")
            return GeneralGaussianModel.random(self.d_x, self.d_y, rhos[: min(self.d_x, self.d_y)], self.gamma, self.seed)
        raise ConfigError(f"unknown model class {self.kind!r}")


_SPEC_TYPES = {f.name: f.type for f in dataclasses.fields(ModelSpec)}


def parse_model_items(items: dict[str, str], where: str = "model") -> ModelSpec:
    kw = {}
    for key, raw in items.items():
        name = "kind" if key == "class" else key
        if name == "d":
            kw["d_x"] = kw["d_y"] = _coerce("int", raw, where, key)
            continue
        if name not in _SPEC_TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kw[name] = _coerce(_SPEC_TYPES[name], raw, where, key)
    spec = ModelSpec(**kw)
    if spec.kind not in ModelSpec.KINDS:
        raise ConfigError(f"{where}: class must be one of {', '.join(ModelSpec.KINDS)}")
    if spec.directions not in ("random", "axis"):
        raise ConfigError(f"{where}: directions must be 'random' or 'axis'")
    return spec


def _coerce(typ: str, raw: str, where: str, key: str):
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: bad value for {key!r}: {raw!r}") from None


def read_model_file(path: str | Path) -> ModelSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[model]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if not parser.has_section("model"):
        raise ConfigError(f"{path}: missing [model] section")
    return parse_model_items(dict(parser.items("model")), str(path))


def write_model_file(spec: ModelSpec, path: str | Path) -> None:
    lines = [f"class = {spec.kind}"]
    for f in dataclasses.fields(ModelSpec):
        if f.name != "kind":
            lines.append(f"{f.name} = {getattr(spec, f.name)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
