"""Acceptance criteria, one test each, at the pinned tolerances.

Run ``pytest tests/test_acceptance.py`` to get the pass/fail summary block.
"""

import math
import subprocess
import sys
import time
import tracemalloc

import numpy as np
import pytest

from oracles import cca_generalized_eig
from sicca import _kernels
from sicca.datamodel import Dataset, empirical_covariances, whitened_operator
from sicca.erm import solve_erm_exact
from sicca.generators import GeneralGaussianModel, SingleCanonicalPairModel, population_solution, sample
from sicca.harness import fit_scaling, parse_experiment, run_experiment
from sicca.metrics import CcaSolution, align, correlation_ratio, joint_alignment, orient
from sicca.offline import (
    CONTRACTION,
    ShiftedSystem,
    SolveTolerance,
    apply_B,
    least_squares_objective,
    offline_si_cca,
    svrg_solve,
    warm_start_scale,
)
from sicca.streaming import ModelStream, StreamingSettings, conditioning_estimates, streaming_si_cca


@pytest.fixture(scope="module", autouse=True)
def compiled_kernels():
    _kernels.warmup()


def _mixed_dataset(rng, dx, dy, n):
    mix = np.eye(dx + dy) + rng.standard_normal((dx + dy, dx + dy)) / math.sqrt(dx + dy)
    Z = rng.standard_normal((n, dx + dy)) @ mix
    return Dataset(Z[:, :dx], Z[:, dx:])


@pytest.mark.acceptance(1, "oracle equivalence of exact ERM")
def test_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 1.0
    for _ in range(50):
        dx, dy = rng.integers(2, 9, size=2)
        cov = empirical_covariances(_mixed_dataset(rng, dx, dy, int(rng.integers(50, 401))))
        sol = solve_erm_exact(cov)
        u, v, _ = cca_generalized_eig(cov.sxx, cov.sxy, cov.syy)
        ref = orient(CcaSolution(u, v), sol, cov)
        worst = min(worst, align(sol, ref, cov))
    elapsed = time.perf_counter() - t0
    report(f"min align {worst:.15f} over 50 instances, {elapsed:.2f}s")
    assert worst >= 1 - 1e-8
    assert elapsed < 10


@pytest.mark.acceptance(2, "contraction law with exact inner solves")
def test_contraction_law(report):
    t0 = time.perf_counter()
    worst, steps = 0.0, 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ds = _mixed_dataset(rng, 4, 4, 200)
        c = float(rng.uniform(0.25, 0.75))
        res = offline_si_cca(
            ds, eta=1e-15, c_shift=c, exact_inner=True, test_mode=True, early_exit=False, seed=seed
        )
        gs = [h.diagnostics.G for h in res.history]
        assert min(gs) < 1e-10, "potential never reached 1e-10"
        for g_prev, g_next in zip(gs, gs[1:]):
            if g_prev < 1e-10:
                break
            assert g_next <= CONTRACTION * g_prev + 1e-12
            worst = max(worst, g_next / g_prev)
            steps += 1
    elapsed = time.perf_counter() - t0
    report(f"{steps} steps checked, worst ratio {worst:.4f} (bound {CONTRACTION:.4f}), {elapsed:.2f}s")
    assert elapsed < 5


@pytest.mark.acceptance(3, "SVRG inner-solve certification at ratio 64")
def test_svrg_certification(report):
    t0 = time.perf_counter()
    failures, ratios, epochs = 0, [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        ds = _mixed_dataset(rng, 5, 5, 500)
        s = whitened_operator(empirical_covariances(ds)).singular_values
        sys_ = ShiftedSystem(ds, s[0] + 0.5 * (s[0] - s[1]))
        w_t = rng.standard_normal(10)
        init = warm_start_scale(sys_, w_t) * w_t
        w_star = sys_.solve_exact(apply_B(sys_, w_t))
        f_star = least_squares_objective(sys_, w_star, w_t)
        res = svrg_solve(sys_, w_t, init, SolveTolerance(64), seed)
        before = least_squares_objective(sys_, init, w_t) - f_star
        after = least_squares_objective(sys_, res.w, w_t) - f_star
        ratio = before / after if after > 0 else math.inf
        ratios.append(ratio)
        epochs.append(res.epochs)
        failures += not (ratio >= 64)
    elapsed = time.perf_counter() - t0
    report(f"failures {failures}/20, min f-gap ratio {min(ratios):.1f}, median epochs {np.median(epochs):.0f}, {elapsed:.2f}s")
    assert failures == 0
    assert elapsed < 30


@pytest.mark.acceptance(4, "end-to-end offline shift-and-invert")
def test_end_to_end_offline(report):
    t0 = time.perf_counter()
    model = SingleCanonicalPairModel.random(10, 10, 0.3, 7)
    aligns, iters, planned = [], [], []
    for seed in range(20):
        ds = sample(model, 5000, 1000 + seed)
        cov = empirical_covariances(ds)
        res = offline_si_cca(ds, eta=1e-3, seed=seed)
        erm = solve_erm_exact(cov)
        aligns.append(align(orient(res.solution, erm, cov), erm, cov))
        iters.append(res.outer_iters)
        planned.append(res.planned_outer)
    elapsed = time.perf_counter() - t0
    hits = sum(a >= 0.999 for a in aligns)
    report(
        f"{hits}/20 seeds align >= 0.999 (min {min(aligns):.6f}), median outer {np.median(iters):.0f} "
        f"vs planned {np.median(planned):.0f}, {elapsed:.1f}s"
    )
    assert hits >= 18
    assert np.median(iters) <= np.median(planned)
    assert all(i <= p for i, p in zip(iters, planned))
    assert elapsed < 120


def _perturbed(rng, truth, scale, rescale):
    u = truth.u + scale * rng.standard_normal(truth.u.size)
    v = truth.v + scale * rng.standard_normal(truth.v.size)
    if rescale:
        u, v = u * math.exp(rng.uniform(-0.7, 0.7)), v * math.exp(rng.uniform(-0.7, 0.7))
    return CcaSolution(u, v)


def _random_instances(rng, count):
    out = []
    for i in range(count):
        dx, dy = rng.integers(2, 7, size=2)
        k = int(min(dx, dy))
        rhos = np.sort(rng.uniform(0.05, 0.95, size=k))[::-1]
        rhos[0] = min(0.97, rhos[0] + 0.02)
        model = GeneralGaussianModel.random(dx, dy, rhos, float(rng.uniform(0.1, 1.0)), i)
        out.append((model, population_solution(model)))
    return out


@pytest.mark.acceptance(5, "alignment implies correlation (property suite)")
def test_alignment_implies_correlation(report):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    active, worst = 0, math.inf
    for model, (truth, cond) in _random_instances(rng, 50):
        for _ in range(20):
            sol = _perturbed(rng, truth, 10 ** rng.uniform(-4, 0), rescale=True)
            eta = float(rng.uniform(1e-3, 1.0))
            if align(sol, truth, model.pop) >= 1 - eta / 8:
                active += 1
                slack = correlation_ratio(sol, model.pop) - cond.rho1 * (1 - eta)
                worst = min(worst, slack)
                assert slack >= -1e-9
    elapsed = time.perf_counter() - t0
    report(f"1000 pairs, {active} with the hypothesis active, min slack {worst:.3e}, {elapsed:.2f}s")
    assert active >= 100
    assert elapsed < 5


@pytest.mark.acceptance(6, "joint alignment implies alignment (property suite)")
def test_joint_alignment_implies_alignment(report):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    active, worst = 0, math.inf
    for model, (truth, _) in _random_instances(rng, 50):
        for _ in range(20):
            sol = _perturbed(rng, truth, 10 ** rng.uniform(-4, 0), rescale=True)
            eta = float(rng.uniform(1e-3, 1.0))
            if joint_alignment(sol, truth, model.pop) >= 1 - eta / 4:
                active += 1
                slack = align(sol, truth, model.pop) - (1 - eta)
                worst = min(worst, slack)
                assert slack >= -1e-12
    elapsed = time.perf_counter() - t0
    report(f"1000 pairs, {active} with the hypothesis active, min slack {worst:.3e}, {elapsed:.2f}s")
    assert active >= 100
    assert elapsed < 5


STREAM_SWEEP = """\
[experiment]
solver = streaming-si
seeds = 0:10
workers = {workers}

[model]
class = single_pair
d = 5
delta = 0.5
seed = 1

[grid]
epsilon = 0.2, 0.1, 0.05, 0.025

[solver]
shift_c = 0.5
constant_scale = 0.02
"""


def _workers():
    import os

    return max(1, min(4, os.cpu_count() or 1))


@pytest.fixture(scope="module")
def stream_rows():
    t0 = time.perf_counter()
    rows = run_experiment(parse_experiment(STREAM_SWEEP.format(workers=_workers())), write=False)
    return rows, time.perf_counter() - t0


def _halving_ratios(rows):
    """Median over seeds of samples_used(eps/2) / samples_used(eps), per halving."""
    table = {}
    for r in rows:
        table.setdefault(r.seed, {})[r.epsilon] = r.n
    eps = sorted({r.epsilon for r in rows}, reverse=True)
    return [float(np.median([table[s][b] / table[s][a] for s in table])) for a, b in zip(eps, eps[1:])]


@pytest.mark.acceptance(7, "streaming sample complexity scales as 1/epsilon")
def test_streaming_scaling(stream_rows, report):
    rows, elapsed = stream_rows
    assert not any(r.error for r in rows)
    fit = fit_scaling(rows, "inv_epsilon", "samples_used")
    report(
        f"slope {fit.slope:.3f} (r2 {fit.r2:.4f}), median halving ratios "
        + ", ".join(f"{h:.2f}" for h in _halving_ratios(rows))
        + f", min align_pop {min(r.align_pop for r in rows):.5f}, {elapsed:.0f}s"
    )
    assert 0.7 <= fit.slope <= 1.3
    assert elapsed < 600


def test_streaming_halving_ratio(stream_rows):
    # halving epsilon should grow the sample count by a factor in [1.5, 3]
    rows, _ = stream_rows
    for ratio in _halving_ratios(rows):
        assert 1.5 <= ratio <= 3.0


ERM_SWEEP = """\
[experiment]
solver = erm
seeds = 0:20

[model]
class = single_pair
d = 5
delta = 0.5
seed = 1

[grid]
n = 500, 1000, 2000, 4000, 8000
"""


@pytest.mark.acceptance(8, "ERM error decays as 1/N")
def test_erm_error_decay(report):
    t0 = time.perf_counter()
    rows = run_experiment(parse_experiment(ERM_SWEEP), write=False)
    assert not any(r.error for r in rows)
    fit = fit_scaling(rows, "N", "err")
    elapsed = time.perf_counter() - t0
    report(f"slope {fit.slope:.3f} (r2 {fit.r2:.4f}), {elapsed:.1f}s")
    assert -1.35 <= fit.slope <= -0.65
    assert elapsed < 300


@pytest.mark.acceptance(9, "streaming memory and one-pass audit at d = 2048")
def test_streaming_memory_audit(report):
    d_half = 1024
    d = 2 * d_half
    limit = d * d * 8
    tracemalloc.start()
    try:
        model = SingleCanonicalPairModel.random(d_half, d_half, 0.5, 3)
        lam = 0.5 + 0.25
        stream = ModelStream(model, 11)
        cond = conditioning_estimates(model, lam, constant_scale=1e-7)
        settings = StreamingSettings(constant_scale=1e-7, init="random", max_outer=2)
        res = streaming_si_cca(stream, lam, 0.1, settings, 5, conditioning=cond)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    drawn = sum(k + m for system in res.draws for k, m in system)
    report(
        f"peak traced {peak / 2**20:.1f} MiB vs d*d*8 = {limit / 2**20:.0f} MiB; "
        f"samples_used {res.samples_used} = draws {drawn} = counter {stream.samples_consumed}"
    )
    assert res.outer_iters >= 1 and drawn > 0
    assert peak < limit
    assert res.samples_used == res.pilot_samples + drawn == stream.samples_consumed


def _run_cli(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "sicca", *args], cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.mark.acceptance(10, "determinism of stochastic subcommands")
def test_determinism(tmp_path, report):
    (tmp_path / "m.model").write_text("class = single_pair\nd = 4\ndelta = 0.5\nseed = 2\n")
    (tmp_path / "s.cfg").write_text(
        "[experiment]\nsolver = offline-si\nseeds = 0, 1\n"
        "[model]\nclass = single_pair\nd = 3\ndelta = 0.5\n"
        "[grid]\nn = 800, 1600\n"
    )
    commands = {
        "generate": lambda o: ["generate", "--model", "m.model", "--n", "3000", "--seed", "9", "--out", o],
        "solve-offline": lambda o: ["solve-offline", "--data", "data.csv", "--seed", "3", "--out", o],
        "solve-streaming": lambda o: [
            "solve-streaming", "--model", "m.model", "--seed", "4", "--epsilon", "0.1",
            "--constant-scale", "0.02", "--out", o,
        ],
        "sweep": lambda o: ["sweep", "--config", "s.cfg", "--out", o],
    }
    _run_cli(commands["generate"]("data.csv"), tmp_path)
    same = []
    for name, build in commands.items():
        outs = []
        for k in (1, 2):
            target = f"{name}-{k}.out"
            _run_cli(build(target), tmp_path)
            outs.append((tmp_path / target).read_bytes())
        assert outs[0] == outs[1], f"{name} output differs between runs"
        same.append(name)
    report("byte-identical: " + ", ".join(same))
