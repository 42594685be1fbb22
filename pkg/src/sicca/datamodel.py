"""Paired datasets, covariance estimation and whitened operators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, DimensionError, InsufficientSamples, SingularCovariance

EIG_FLOOR = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SamplePair:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x, y = _frozen(self.x), _frozen(self.y)
        if x.ndim != 1 or y.ndim != 1:
            raise DimensionError("sample views must be vectors")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("sample entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True, eq=False)
class Dataset:
    """N paired observations stored row-wise: ``X`` is N x d_x, ``Y`` is N x d_y."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X, Y = _frozen(self.X), _frozen(self.Y)
        if X.ndim != 2 or Y.ndim != 2:
            raise DimensionError("X and Y must be two-dimensional")
        if X.shape[0] != Y.shape[0]:
            raise DimensionError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise DimensionError("dataset needs N >= 1 and positive dimensions")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def pairs(self) -> list[SamplePair]:
        return list(iter(self))

    def __iter__(self) -> Iterator[SamplePair]:
        for i in range(self.n):
            yield SamplePair(self.X[i], self.Y[i])

    def slice(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.X[start:stop], self.Y[start:stop])

    @classmethod
    def from_pairs(cls, pairs: Iterable[SamplePair | tuple]) -> "Dataset":
        xs, ys = [], []
        for p in pairs:
            x, y = (p.x, p.y) if isinstance(p, SamplePair) else p
            xs.append(np.asarray(x, dtype=np.float64).ravel())
            ys.append(np.asarray(y, dtype=np.float64).ravel())
        if not xs:
            raise DimensionError("dataset needs at least one pair")
        if len({len(x) for x in xs}) != 1 or len({len(y) for y in ys}) != 1:
            raise DimensionError("pairs have inconsistent dimensions")
        return cls(np.vstack(xs), np.vstack(ys))


@dataclass(frozen=True, eq=False)
class CovarianceTriple:
    sxx: np.ndarray
    sxy: np.ndarray
    syy: np.ndarray
    centered: bool = False

    def __post_init__(self):
        sxx, sxy, syy = _frozen(self.sxx), _frozen(self.sxy), _frozen(self.syy)
        dx, dy = sxx.shape[0], syy.shape[0]
        if sxx.shape != (dx, dx) or syy.shape != (dy, dy) or sxy.shape != (dx, dy):
            raise DimensionError(
                f"inconsistent block shapes {sxx.shape}, {sxy.shape}, {syy.shape}"
            )
        for m in (sxx, syy):
            scale = max(1.0, float(np.abs(m).max(initial=0.0)))
            if np.abs(m - m.T).max(initial=0.0) > 1e-12 * scale:
                raise ValueError("auto-covariance blocks must be symmetric")
        object.__setattr__(self, "sxx", sxx)
        object.__setattr__(self, "sxy", sxy)
        object.__setattr__(self, "syy", syy)

    @property
    def d_x(self) -> int:
        return self.sxx.shape[0]

    @property
    def d_y(self) -> int:
        return self.syy.shape[0]

    def joint(self) -> np.ndarray:
        return np.block([[self.sxx, self.sxy], [self.sxy.T, self.syy]])


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def empirical_covariances(dataset: Dataset) -> CovarianceTriple:
    X, Y = dataset.X, dataset.Y
    n = dataset.n
    return CovarianceTriple(_sym(X.T @ X) / n, (X.T @ Y) / n, _sym(Y.T @ Y) / n, centered=False)


def centered_covariances(dataset: Dataset) -> CovarianceTriple:
    """Unbiased covariances of the mean-removed views (denominator N - 1)."""
    n = dataset.n
    if n < 2:
        raise InsufficientSamples("centered covariances need at least two samples")
    Xc = dataset.X - dataset.X.mean(axis=0)
    Yc = dataset.Y - dataset.Y.mean(axis=0)
    return CovarianceTriple(
        _sym(Xc.T @ Xc) / (n - 1), (Xc.T @ Yc) / (n - 1), _sym(Yc.T @ Yc) / (n - 1), centered=True
    )


def inv_sqrt_spd(m: np.ndarray, ridge: float = 0.0, name: str = "matrix") -> np.ndarray:
    """Inverse square root through a symmetric eigendecomposition."""
    w, V = np.linalg.eigh(_sym(np.asarray(m, dtype=np.float64)) + ridge * np.eye(m.shape[0]))
    if w[0] <= EIG_FLOOR:
        raise SingularCovariance(f"{name} is not positive definite (min eigenvalue {w[0]:.3e})")
    return _sym((V / np.sqrt(w)) @ V.T)


def sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(_sym(np.asarray(m, dtype=np.float64)))
    return _sym((V * np.sqrt(np.clip(w, 0.0, None))) @ V.T)


def fix_signs(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip column pairs so each left column's largest-magnitude entry is positive.

    ``np.argmax`` returns the first maximiser, which gives the lowest-index tie rule.
    """
    left, right = left.copy(), right.copy()
    for j in range(left.shape[1]):
        if left[np.argmax(np.abs(left[:, j])), j] < 0:
            left[:, j] *= -1.0
            right[:, j] *= -1.0
    return left, right


@dataclass(frozen=True, eq=False)
class WhitenedOperator:
    t_hat: np.ndarray
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    inv_sqrt_xx: np.ndarray
    inv_sqrt_yy: np.ndarray

    @property
    def rho1(self) -> float:
        return float(self.singular_values[0])


def whitened_operator(cov: CovarianceTriple, ridge: float = 0.0) -> WhitenedOperator:
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    kx = inv_sqrt_spd(cov.sxx, ridge, "sxx")
    ky = inv_sqrt_spd(cov.syy, ridge, "syy")
    t = kx @ cov.sxy @ ky
    U, s, Vt = np.linalg.svd(t, full_matrices=False)
    U, V = fix_signs(U, Vt.T)
    return WhitenedOperator(
        t_hat=_frozen(t),
        singular_values=_frozen(s),
        left_vectors=_frozen(U),
        right_vectors=_frozen(V),
        inv_sqrt_xx=_frozen(kx),
        inv_sqrt_yy=_frozen(ky),
    )


@dataclass(frozen=True, eq=False)
class SymmetricEmbedding:
    c: np.ndarray
    d_x: int

    @property
    def d_y(self) -> int:
        return self.c.shape[0] - self.d_x


def symmetric_embedding(op: WhitenedOperator) -> SymmetricEmbedding:
    t = op.t_hat
    dx, dy = t.shape
    c = np.zeros((dx + dy, dx + dy))
    c[:dx, dx:] = t
    c[dx:, :dx] = t.T
    return SymmetricEmbedding(_frozen(c), dx)


@dataclass(frozen=True)
class ConcentrationReport:
    nu_xx: float
    nu_yy: float
    nu_xy: float
    nu: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "nu", max(self.nu_xx, self.nu_yy, self.nu_xy))


def concentration_error(emp: CovarianceTriple, pop: CovarianceTriple) -> ConcentrationReport:
    if (emp.d_x, emp.d_y) != (pop.d_x, pop.d_y):
        raise DimensionError("empirical and population triples differ in shape")
    kx = inv_sqrt_spd(pop.sxx, name="population sxx")
    ky = inv_sqrt_spd(pop.syy, name="population syy")
    spec = lambda m: float(np.linalg.svd(m, compute_uv=False)[0])  # noqa: E731
    return ConcentrationReport(
        nu_xx=spec(kx @ emp.sxx @ kx - np.eye(emp.d_x)),
        nu_yy=spec(ky @ emp.syy @ ky - np.eye(emp.d_y)),
        nu_xy=spec(kx @ (emp.sxy - pop.sxy) @ ky),
    )


# --- CSV ---------------------------------------------------------------------

def csv_header(d_x: int, d_y: int) -> list[str]:
    return [f"x{i}" for i in range(d_x)] + [f"y{i}" for i in range(d_y)]


def parse_header(header: list[str]) -> tuple[int, int]:
    header = [h.strip() for h in header]
    d_x = sum(1 for h in header if h.startswith("x"))
    d_y = len(header) - d_x
    if d_x < 1 or d_y < 1 or header != csv_header(d_x, d_y):
        raise ConfigError(f"bad dataset header {','.join(header)!r}; expected x0..,y0..")
    return d_x, d_y


def write_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(dataset.d_x, dataset.d_y))
        for row in np.hstack([dataset.X, dataset.Y]):
            w.writerow([repr(float(v)) for v in row])


def read_csv(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        d_x, d_y = parse_header(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d_x + d_y:
                raise ConfigError(f"{path}:{lineno}: expected {d_x + d_y} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: no samples")
    data = np.asarray(rows)
    return Dataset(data[:, :d_x], data[:, d_x:])
