"""Experiment sweeps, result rows and log-log scaling fits."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import re
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import stats

from .datamodel import centered_covariances, empirical_covariances
from .erm import solve_erm_exact
from .errors import ConfigError, FitError, NumericError
from .generators import ModelSpec, parse_model_items, population_solution, sample
from .metrics import align, correlation_ratio, orient
from .offline import SvrgConfig, offline_si_cca
from .streaming import ModelStream, StreamingSettings, shift_from_population, streaming_si_cca

SOLVERS = ("erm", "offline-si", "streaming-si")

OFFLINE_KEYS = {
    "eta": float, "l": float, "u": float, "epoch_len": int, "step_scale": float,
    "max_epochs": int, "max_outer": int, "sampling": str, "locate_rounds": int,
}
STREAMING_KEYS = {
    "shift_c": float, "constant_scale": float, "pilot_size": int, "init": str,
    "data_class": str, "gamma_lb": float, "max_outer": int,
}
ERM_KEYS = {"ridge": float, "center": "bool"}


@dataclass(frozen=True)
class ExperimentConfig:
    solver: str
    model: ModelSpec
    seeds: tuple[int, ...]
    sizes: tuple[float, ...]  # N for erm/offline-si, epsilon for streaming-si
    dims: tuple[tuple[int, int], ...] = ()
    deltas: tuple[float, ...] = ()
    solver_params: dict = field(default_factory=dict)
    output: Optional[Path] = None
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {', '.join(SOLVERS)}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.sizes:
            raise ConfigError("size grid (n or epsilon) is empty")

    def grid(self) -> list[tuple[int, int, float, float]]:
        dims = self.dims or ((self.model.d_x, self.model.d_y),)
        deltas = self.deltas or (self.model.delta,)
        return [(dx, dy, delta, s) for (dx, dy) in dims for delta in deltas for s in self.sizes]


@dataclass(frozen=True)
class ResultRow:
    solver: str
    d_x: int
    d_y: int
    delta: float
    n: Optional[int]
    seed: int
    align_pop: Optional[float] = None
    align_erm: Optional[float] = None
    corr_ratio: Optional[float] = None
    wall_time_ms: Optional[float] = None
    outer_iters: Optional[int] = None
    epsilon: Optional[float] = None
    error: str = ""


FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


# --- config parsing -------------------------------------------------------------

def _line_of(text: str, section: str, key: str) -> str:
    cur = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("["):
            cur = s.strip("[]").strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return f"line {i}"
    return f"section [{section}]"


def _list(raw: str, conv, where: str) -> tuple:
    out = []
    for tok in raw.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        if conv is int and ":" in tok:
            a, b = tok.split(":", 1)
            try:
                out.extend(range(int(a), int(b)))
            except ValueError:
                raise ConfigError(f"{where}: bad range {tok!r}") from None
            continue
        try:
            out.append(conv(tok))
        except ValueError:
            raise ConfigError(f"{where}: bad value {tok!r}") from None
    return tuple(out)


def _dims(tok: str) -> tuple[int, int]:
    a, sep, b = tok.lower().partition("x")
    if not sep:
        return int(tok), int(tok)
    return int(a), int(b)


def _typed(conv, raw: str, where: str):
    try:
        if conv == "bool":
            v = raw.strip().lower()
            if v not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return v in ("true", "yes", "1")
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{where}: bad value {raw!r}") from None


def parse_experiment(text: str, base_dir: Path = Path("."), source: str = "<config>") -> ExperimentConfig:
    """Parse INI-style experiment text.

    Sections: ``[experiment]`` (solver, seeds, output, workers, timing),
    ``[model]`` (model-file keys), ``[grid]`` (n or epsilon, optional dims and
    delta lists) and ``[solver]`` (solver-specific keys).
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for sec in parser.sections():
        if sec not in ("experiment", "model", "grid", "solver"):
            raise ConfigError(f"{source}: unknown section [{sec}]")
    if not parser.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    where = lambda sec, key: f"{source}: {_line_of(text, sec, key)}: {key}"  # noqa: E731

    ex = dict(parser.items("experiment"))
    for key in ex:
        if key not in ("solver", "seeds", "output", "workers", "timing"):
            raise ConfigError(f"{where('experiment', key)}: unknown key")
    solver = ex.get("solver")
    if solver not in SOLVERS:
        raise ConfigError(f"{where('experiment', 'solver')}: must be one of {', '.join(SOLVERS)}")
    if "seeds" not in ex:
        raise ConfigError(f"{source}: [experiment] needs a seeds list")
    seeds = _list(ex["seeds"], int, where("experiment", "seeds"))
    if not seeds:
        raise ConfigError(f"{where('experiment', 'seeds')}: seed list is empty")
    output = Path(ex["output"]) if ex.get("output") else None
    if output is not None and not output.is_absolute():
        output = base_dir / output
    workers = _typed(int, ex.get("workers", "1"), where("experiment", "workers"))
    timing = _typed("bool", ex.get("timing", "false"), where("experiment", "timing"))

    model_items = dict(parser.items("model")) if parser.has_section("model") else {}
    model = parse_model_items(model_items, f"{source} [model]")

    grid = dict(parser.items("grid")) if parser.has_section("grid") else {}
    size_key = "epsilon" if solver == "streaming-si" else "n"
    for key in grid:
        if key not in (size_key, "dims", "delta"):
            raise ConfigError(f"{where('grid', key)}: unknown key for solver {solver}")
    if size_key not in grid:
        raise ConfigError(f"{source}: [grid] needs '{size_key}' for solver {solver}")
    conv = float if size_key == "epsilon" else int
    sizes = _list(grid[size_key], conv, where("grid", size_key))
    dims = _list(grid.get("dims", ""), _dims, where("grid", "dims"))
    deltas = _list(grid.get("delta", ""), float, where("grid", "delta"))

    allowed = {"erm": ERM_KEYS, "offline-si": OFFLINE_KEYS, "streaming-si": STREAMING_KEYS}[solver]
    params = {}
    if parser.has_section("solver"):
        for key, raw in parser.items("solver"):
            if key not in allowed:
                raise ConfigError(f"{where('solver', key)}: unknown key for solver {solver}")
            params[key] = _typed(allowed[key], raw, where("solver", key))
    try:
        if solver == "offline-si":
            offline_settings(params)
        elif solver == "streaming-si":
            streaming_settings(params)
    except ValueError as exc:
        raise ConfigError(f"{source}: [solver]: {exc}") from None
    try:
        return ExperimentConfig(solver, model, seeds, sizes, dims, deltas, params, output, workers, timing)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_experiment(path.read_text(encoding="utf-8"), path.parent, str(path))


# --- running ----------------------------------------------------------------------

def point_seed(seed: int, index: int) -> int:
    """Independent 63-bit seed for grid point ``index`` under user seed ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def offline_settings(params: dict) -> tuple[dict, SvrgConfig]:
    inner = SvrgConfig(**{k: params[k] for k in ("epoch_len", "step_scale", "max_epochs", "sampling") if k in params})
    kw = {k: params[k] for k in ("eta", "l", "u", "max_outer", "locate_rounds") if k in params}
    return kw, inner


def streaming_settings(params: dict) -> tuple[float, StreamingSettings]:
    keys = ("constant_scale", "pilot_size", "init", "data_class", "gamma_lb", "max_outer")
    return params.get("shift_c", 0.5), StreamingSettings(**{k: params[k] for k in keys if k in params})


def _run_point(task) -> ResultRow:
    solver, spec, seed, index, size, params, timing = task
    model = spec.build()
    row = dict(solver=solver, d_x=spec.d_x, d_y=spec.d_y, delta=spec.delta, seed=seed)
    if solver == "streaming-si":
        row["epsilon"] = float(size)
    else:
        row["n"] = int(size)
    sub = point_seed(seed, index)
    t0 = time.perf_counter()
    try:
        truth, _ = population_solution(model)
        pop = model.population_covariances()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if solver == "streaming-si":
                c, settings = streaming_settings(params)
                lam = shift_from_population(model, c)
                res = streaming_si_cca(ModelStream(model, sub), lam, float(size), settings, sub)
                sol, row["n"], row["outer_iters"] = res.solution, res.samples_used, res.outer_iters
            else:
                data = sample(model, int(size), sub)
                if solver == "erm":
                    cov = centered_covariances(data) if params.get("center") else empirical_covariances(data)
                    sol = erm = solve_erm_exact(cov, params.get("ridge", 0.0))
                    row["outer_iters"] = 0
                else:
                    kw, inner = offline_settings(params)
                    res = offline_si_cca(data, inner=inner, seed=sub, **kw)
                    cov = empirical_covariances(data)
                    sol, row["outer_iters"] = res.solution, res.outer_iters
                    erm = solve_erm_exact(cov)
                row["align_erm"] = align(orient(sol, erm, cov), erm, cov)
        row["align_pop"] = align(orient(sol, truth, pop), truth, pop)
        row["corr_ratio"] = correlation_ratio(sol, pop)
    except NumericError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    if timing:
        row["wall_time_ms"] = round(1000.0 * (time.perf_counter() - t0), 3)
    return ResultRow(**row)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list[ResultRow]:
    """Run every grid point for every seed, in grid order, and optionally write the CSV."""
    tasks = []
    for index, (dx, dy, delta, size) in enumerate(cfg.grid()):
        spec = cfg.model.replace(d_x=dx, d_y=dy, delta=delta)
        for seed in cfg.seeds:
            tasks.append((cfg.solver, spec, seed, index, size, cfg.solver_params, cfg.timing))
    try:
        for spec in {t[1] for t in tasks}:
            spec.build()
    except NumericError as exc:
        raise ConfigError(f"invalid model: {exc}") from None
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]
    if write and cfg.output is not None:
        write_rows(rows, cfg.output)
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: Iterable[ResultRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in FIELDS])


def read_rows(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"results file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# --- fitting ------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    points: int


ALIASES = {"N": "n", "samples_used": "n"}


def field_value(row, name: str) -> Optional[float]:
    """Numeric value of a column or a derived field (``err``, ``inv_epsilon``)."""
    get = (lambda k: row.get(k)) if isinstance(row, dict) else (lambda k: getattr(row, k, None))
    if name == "err":
        a = field_value(row, "align_pop")
        return None if a is None else 1.0 - a
    if name == "inv_epsilon":
        e = field_value(row, "epsilon")
        return None if not e else 1.0 / e
    raw = get(ALIASES.get(name, name))
    if raw is None and name not in FIELDS and ALIASES.get(name, name) not in FIELDS:
        raise FitError(f"unknown field {name!r}")
    if raw is None or raw == "":
        return None
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise FitError(f"field {name!r} is not numeric: {raw!r}") from None


def fit_scaling(rows, x_field: str, y_field: str) -> FitResult:
    """Least-squares fit of log(mean y) on log x, averaging y over rows sharing x."""
    groups: dict[float, list[float]] = {}
    for row in rows:
        err = row.get("error") if isinstance(row, dict) else getattr(row, "error", "")
        if err:
            continue
        x, y = field_value(row, x_field), field_value(row, y_field)
        if x is None or y is None:
            continue
        groups.setdefault(x, []).append(y)
    if len(groups) < 4:
        raise FitError(f"need at least 4 distinct {x_field} values, got {len(groups)}")
    xs = np.array(sorted(groups))
    ys = np.array([np.mean(groups[x]) for x in xs])
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise FitError("log-log fit needs positive x and mean y values")
    lx, ly = np.log(xs), np.log(ys)
    if np.ptp(ly) == 0:
        return FitResult(0.0, float(ly[0]), 1.0, len(xs))
    fit = stats.linregress(lx, ly)
    return FitResult(float(fit.slope), float(fit.intercept), float(fit.rvalue**2), len(xs))


def format_fit(fit: FitResult) -> str:
    return f"slope={fit.slope:.6f} intercept={fit.intercept:.6f} r2={fit.r2:.6f} points={fit.points}"


__all__ = [
    "ExperimentConfig", "ResultRow", "FitResult", "parse_experiment", "load_experiment",
    "run_experiment", "fit_scaling", "write_rows", "read_rows", "format_fit", "field_value",
]
