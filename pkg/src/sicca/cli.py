"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .datamodel import centered_covariances, empirical_covariances, read_csv, write_csv
from .erm import solve_erm_exact
from .errors import ConfigError, InvalidModel, MaxEpochsExceeded, NumericError
from .generators import population_solution, read_model_file, sample
from .harness import (
    OFFLINE_KEYS,
    fit_scaling,
    format_fit,
    load_experiment,
    offline_settings,
    read_rows,
    run_experiment,
)
from .metrics import CcaSolution
from .offline import offline_si_cca
from .streaming import (
    ModelStream,
    ReplayStream,
    StreamingSettings,
    shift_from_population,
    streaming_si_cca,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _seed(raw: str) -> int:
    try:
        v = int(raw, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {raw!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def solution_json(sol: CcaSolution, **extra) -> str:
    doc = {
        "u": [float(x) for x in sol.u],
        "v": [float(x) for x in sol.v],
        "rho1": None if sol.correlation_estimate is None else float(sol.correlation_estimate),
        "normalization": sol.normalization.value,
    }
    doc.update(extra)
    return json.dumps(doc, indent=2) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> int:
    model = read_model_file(args.model).build()
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    write_csv(sample(model, args.n, args.seed), args.out)
    return EXIT_OK


def cmd_solve_erm(args) -> int:
    data = read_csv(args.data)
    cov = centered_covariances(data) if args.center else empirical_covariances(data)
    sol = solve_erm_exact(cov, args.ridge)
    _emit(solution_json(sol), args.out)
    return EXIT_OK


def _offline_params(args) -> dict:
    params: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        if parser.has_section("solver"):
            for key, raw in parser.items("solver"):
                if key == "seed":
                    continue
                if key not in OFFLINE_KEYS:
                    raise ConfigError(f"{path}: [solver]: unknown key {key!r}")
                try:
                    params[key] = OFFLINE_KEYS[key](raw)
                except ValueError:
                    raise ConfigError(f"{path}: [solver]: bad value for {key!r}: {raw!r}") from None
    for key in OFFLINE_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    return params


def cmd_solve_offline(args) -> int:
    data = read_csv(args.data)
    try:
        kw, inner = offline_settings(_offline_params(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = offline_si_cca(data, inner=inner, seed=args.seed, **kw)
    _emit(solution_json(res.solution, lam=res.lam, outer_iters=res.outer_iters), args.out)
    return EXIT_OK


def cmd_solve_streaming(args) -> int:
    if bool(args.model) == bool(args.data):
        raise ConfigError("give exactly one of --model or --data")
    truth_rho1 = None
    if args.model:
        model = read_model_file(args.model).build()
        stream = ModelStream(model, args.seed)
        try:
            truth_rho1 = population_solution(model)[1].rho1
        except InvalidModel:
            pass  # bounded models have no closed-form population solution
        if args.lam is None:
            if truth_rho1 is None:
                raise ConfigError("--lam is required for this model class")
            lam = shift_from_population(model, args.shift_c)
        else:
            lam = args.lam
    else:
        if args.lam is None:
            raise ConfigError("--lam is required with --data")
        stream, lam = ReplayStream(read_csv(args.data)), args.lam
    try:
        settings = StreamingSettings(
            constant_scale=args.constant_scale, pilot_size=args.pilot_size, init=args.init,
            max_outer=args.max_outer, data_class=args.data_class,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < args.epsilon < 1:
        raise ConfigError("--epsilon must lie in (0, 1)")
    res = streaming_si_cca(stream, lam, args.epsilon, settings, args.seed, truth_rho1=truth_rho1)
    _emit(
        solution_json(res.solution, lam=lam, samples_used=res.samples_used, outer_iters=res.outer_iters),
        args.out,
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_experiment(args.config)
    if args.out:
        cfg = replace(cfg, output=Path(args.out))
    if cfg.output is None:
        raise ConfigError("no output path: set [experiment] output or pass --out")
    rows = run_experiment(cfg)
    failed = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {cfg.output} ({failed} with errors)")
    return EXIT_OK


def cmd_fit(args) -> int:
    fit = fit_scaling(read_rows(args.inp), args.x, args.y)
    print(format_fit(fit))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sicca", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a dataset from a model file")
    g.add_argument("--model", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=_seed, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("solve-erm", help="exact empirical CCA")
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--ridge", type=float, default=0.0)
    e.add_argument("--center", action="store_true", help="use mean-removed covariances")
    e.set_defaults(func=cmd_solve_erm)

    o = sub.add_parser("solve-offline", help="offline shift-and-invert with SVRG")
    o.add_argument("--data", required=True)
    o.add_argument("--seed", type=_seed, required=True)
    o.add_argument("--out")
    o.add_argument("--config", help="INI file with a [solver] section")
    for key, typ in OFFLINE_KEYS.items():
        o.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    o.set_defaults(func=cmd_solve_offline)

    s = sub.add_parser("solve-streaming", help="streaming shift-and-invert")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--seed", type=_seed, required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--lam", type=float, help="shift; defaults to rho1 + c*gap from the model")
    s.add_argument("--shift-c", type=float, default=0.5)
    s.add_argument("--constant-scale", type=float, default=1.0)
    s.add_argument("--pilot-size", type=int, default=2000)
    s.add_argument("--init", choices=("pilot", "random"), default="pilot")
    s.add_argument("--data-class", choices=("subgaussian", "bounded"))
    s.add_argument("--max-outer", type=int, default=200)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve_streaming)

    w = sub.add_parser("sweep", help="run an experiment grid")
    w.add_argument("--config", required=True)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", help="log-log slope of a results column")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--x", required=True)
    f.add_argument("--y", required=True)
    f.set_defaults(func=cmd_fit)
    return p


def cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", MaxEpochsExceeded)
            return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
