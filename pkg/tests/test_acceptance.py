"""End-to-end benchmark gate.

One test per shipped guarantee, each printing a single summary line.
Thresholds, seeds, budgets, and tolerances are pinned; a failure here
means the package no longer delivers a headline result, not that a
unit regressed.
"""

import math
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from evolin import (CSA, FULL_CMA, SEP_CMA, VARIANTS, MasterServer,
                    ObsNormalizer, ask, ellipsoid, make_env, new_strategy,
                    optimize, rotated_ellipsoid, sphere, tell, train,
                    train_distributed, write_curve_csv)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
ACCEPT_SEEDS = (5, 6, 7, 8, 9)


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    got = np.atleast_1d(np.asarray(got, dtype=float))
    want = np.atleast_1d(np.asarray(want, dtype=float))
    floor = max(1.0, float(np.abs(got).max()), float(np.abs(want).max()))
    return float(np.abs(got - want).max()) / floor


def solved_within(result, threshold: float, budget: int) -> bool:
    return any(r.median_test_return >= threshold and
               r.cumulative_timesteps <= budget for r in result.records)


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_cartpole_solved_by_every_variant() -> None:
    t0 = time.monotonic()
    counts = {}
    for variant in VARIANTS:
        counts[variant] = 0
        for seed in ACCEPT_SEEDS:
            res = train("cartpole", variant, sigma0=0.1, lam=4,
                        budget_timesteps=10_000, master_seed=seed,
                        target_return=500.0)
            if solved_within(res, 500.0, 10_000):
                counts[variant] += 1
        assert counts[variant] >= 4, (
            f"cartpole {variant}: only {counts[variant]}/5 seeds reached "
            f"median return 500 within 10_000 timesteps")
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0, f"cartpole benchmark took {elapsed:.1f}s (limit 30s)"
    print(f"criterion 1 PASS: cartpole solved on "
          f"{[counts[v] for v in VARIANTS]}/5 seeds per variant "
          f"(>=4 required) in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_acrobot_solve_rate() -> None:
    t0 = time.monotonic()
    counts = {}
    for variant in VARIANTS:
        counts[variant] = 0
        for seed in ACCEPT_SEEDS:
            res = train("acrobot", variant, sigma0=0.05, lam=4,
                        budget_timesteps=20_000, master_seed=seed,
                        target_return=-100.0)
            if solved_within(res, -100.0, 20_000):
                counts[variant] += 1
        assert counts[variant] >= 3, (
            f"acrobot {variant}: only {counts[variant]}/5 seeds reached "
            f"median return -100 within 20_000 timesteps")
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0, f"acrobot benchmark took {elapsed:.1f}s (limit 120s)"
    print(f"criterion 2 PASS: acrobot solved on "
          f"{[counts[v] for v in VARIANTS]}/5 seeds per variant "
          f"(>=3 required) in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_pendulum_reaches_swingup_performance() -> None:
    t0 = time.monotonic()
    hit = None
    for variant in VARIANTS:
        for seed in (5, 6):
            res = train("pendulum", variant, sigma0=0.1, lam="default",
                        budget_timesteps=500_000, master_seed=seed,
                        target_return=-800.0)
            rec = next((r for r in res.records
                        if r.median_test_return >= -800.0
                        and r.cumulative_timesteps <= 500_000), None)
            if rec is not None:
                hit = (variant, seed, rec)
                break
        if hit is not None:
            break
    elapsed = time.monotonic() - t0
    assert hit is not None, (
        "no variant reached median return -800 on pendulum within "
        "500_000 timesteps on seeds 5 or 6")
    assert elapsed < 900.0, f"pendulum benchmark took {elapsed:.1f}s (limit 15min)"
    variant, seed, rec = hit
    print(f"criterion 3 PASS: pendulum {variant} seed {seed} reached median "
          f"{rec.median_test_return:.1f} at {rec.cumulative_timesteps} "
          f"timesteps in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_test_function_convergence_and_ordering() -> None:
    t0 = time.monotonic()
    fn = sphere(10)
    sphere_evals = []
    for seed in range(10):
        r = optimize(fn, FULL_CMA, np.ones(10), 1.0, budget_evals=5000,
                     target=1e-8, seed=seed, lam="cma")
        sphere_evals.append(r.evals if r.status == "target_reached" else 5001)
    sphere_med = statistics.median(sphere_evals)
    assert sphere_med <= 5000, (
        f"sphere n=10: median {sphere_med} evaluations to f<1e-8 (limit 5000)")

    rot = rotated_ellipsoid(10, 1e6, seed=7)
    cap = 20_000
    med = {}
    for variant in VARIANTS:
        evals = []
        for seed in range(15):
            r = optimize(rot, variant, np.ones(10), 1.0, budget_evals=cap,
                         target=1e-6, seed=seed, lam="cma")
            evals.append(r.evals if r.status == "target_reached" else cap)
        med[variant] = statistics.median(evals)
    assert med[FULL_CMA] < med[SEP_CMA] and med[FULL_CMA] < med[CSA], (
        f"rotated ellipsoid ordering violated: {med}")
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"test-function suite took {elapsed:.1f}s (limit 60s)"
    print(f"criterion 4 PASS: sphere median {sphere_med} evals (<=5000); "
          f"rotated-ellipsoid medians {med} with full CMA fastest "
          f"in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 5

def oracle_mean_update(params, state_m, candidates, mode):
    """Weighted recombination recomputed with scalar arithmetic."""
    sign = -1.0 if mode == "maximize" else 1.0
    sel = sorted(candidates, key=lambda c: (sign * c.fitness, c.index))[:params.mu]
    mu = params.mu
    raw = [math.log(mu + 0.5) - math.log(i) for i in range(1, mu + 1)]
    total = sum(raw)
    weights = [v / total for v in raw]
    delta = np.zeros_like(state_m)
    for w, cand in zip(weights, sel):
        delta = delta + w * (cand.x - state_m)
    return state_m + params.c_m * delta


def test_criterion_5_mean_update_matches_recombination_oracle() -> None:
    rng = np.random.default_rng(20260819)
    tells = 0
    worst = 0.0
    while tells < 1000:
        variant = VARIANTS[int(rng.integers(0, 3))]
        n = int(rng.integers(2, 16))
        lam = int(rng.integers(2, 33))
        sigma0 = float(rng.uniform(0.05, 2.0))
        m0 = rng.normal(scale=3.0, size=n)
        seed = int(rng.integers(0, 2**31))
        params, state = new_strategy(variant, n, sigma0, m0, lam)
        for _ in range(int(rng.integers(1, 4))):
            mode = "maximize" if rng.random() < 0.5 else "minimize"
            cands = ask(params, state, seed)
            for c in cands:
                c.fitness = float(rng.normal())
            expect = oracle_mean_update(params, state.m.copy(), cands, mode)
            state = tell(params, state, cands, mode)
            err = rel_err(state.m, expect)
            worst = max(worst, err)
            assert err <= 1e-12, (
                f"mean update off by {err:.3e} relative "
                f"({variant}, n={n}, lam={lam}, mode={mode})")
            tells += 1
            if tells == 1000:
                break
    print(f"criterion 5 PASS: 1000 randomized tells, worst mean-update "
          f"deviation {worst:.3e} relative (tolerance 1e-12)")


# ---------------------------------------------------------------- criterion 6

def two_pass_stats(data: np.ndarray, eps: float = 1e-8):
    mean = data.mean(axis=0)
    var = ((data - mean) ** 2).sum(axis=0) / max(len(data) - 1, 1)
    return mean, np.maximum(np.sqrt(var), np.sqrt(eps))


def test_criterion_6_normalizer_matches_two_pass_oracle() -> None:
    rng = np.random.default_rng(424242)
    worst_stream = 0.0
    worst_merge = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        count = int(rng.integers(2, 400))
        loc = rng.uniform(-100.0, 100.0, size=dim)
        scale = 10.0 ** rng.uniform(-2.0, 3.0, size=dim)
        data = rng.normal(loc=loc, scale=scale, size=(count, dim))

        seq = ObsNormalizer.create(dim)
        for row in data:
            seq.update(row)
        mean, std = two_pass_stats(data)
        err = max(rel_err(seq.mean, mean), rel_err(seq.std(), std))
        worst_stream = max(worst_stream, err)
        assert err <= 1e-9, f"streaming stats off by {err:.3e} relative"

        n_cuts = int(rng.integers(1, min(5, count)))
        cuts = np.sort(rng.choice(np.arange(1, count), size=n_cuts,
                                  replace=False))
        merged = ObsNormalizer.create(dim)
        for chunk in np.split(data, cuts):
            part = ObsNormalizer.create(dim)
            for row in chunk:
                part.update(row)
            merged.merge(part)
        assert merged.count == seq.count
        err = max(rel_err(merged.mean, seq.mean),
                  rel_err(merged.std(), seq.std()),
                  rel_err(merged.m2, seq.m2))
        worst_merge = max(worst_merge, err)
        assert err <= 1e-9, f"parallel merge off by {err:.3e} relative"
    print(f"criterion 6 PASS: 100 random streams, worst streaming deviation "
          f"{worst_stream:.3e}, worst merge deviation {worst_merge:.3e} "
          f"(tolerance 1e-9)")


# ---------------------------------------------------------------- criterion 7

def run_ranked_generation(params, state, objective, seed):
    cands = ask(params, state, seed)
    for c in cands:
        c.fitness = objective(c.x)
    ranks = tuple(c.index for c in
                  sorted(cands, key=lambda c: (c.fitness, c.index)))
    return tell(params, state, cands, "minimize"), ranks


def cov_snapshot(state):
    if state.c_diag is not None:
        return state.c_diag
    if state.c_full is not None:
        return state.c_full
    return None


def test_criterion_7_translation_and_scale_equivariance() -> None:
    t = np.array([1.0, -2.0, 0.5, 3.0, -1.5, 2.0])
    worst_m = 0.0
    for fn in (sphere(6), ellipsoid(6, 1e3)):
        for variant in VARIANTS:
            params, s0 = new_strategy(variant, 6, 1.0, np.zeros(6), lam=9)
            _, s1 = new_strategy(variant, 6, 1.0, t.copy(), lam=9)
            for _ in range(40):
                s0, r0 = run_ranked_generation(params, s0, fn, 123)
                s1, r1 = run_ranked_generation(
                    params, s1, lambda x: fn(x - t), 123)
                assert r0 == r1, f"{fn.name} {variant}: selection changed"
                assert s1.sigma == s0.sigma
                np.testing.assert_array_equal(s1.p_sigma, s0.p_sigma)
                np.testing.assert_array_equal(s1.p_c, s0.p_c)
                if cov_snapshot(s0) is not None:
                    np.testing.assert_array_equal(cov_snapshot(s1),
                                                  cov_snapshot(s0))
                drift = float(np.max(np.abs((s1.m - t) - s0.m)))
                worst_m = max(worst_m, drift)
                assert drift <= 1e-10, (
                    f"{fn.name} {variant}: translated mean drifted {drift:.3e}")

    worst_scale = 0.0
    for fn in (sphere(6), ellipsoid(6, 1e3)):
        for variant in VARIANTS:
            for scale in (2.0, 3.0):
                params, s0 = new_strategy(variant, 6, 1.0, np.ones(6), lam=9)
                _, s1 = new_strategy(variant, 6, scale, scale * np.ones(6),
                                     lam=9)
                for _ in range(40):
                    s0, r0 = run_ranked_generation(params, s0, fn, 9)
                    s1, r1 = run_ranked_generation(
                        params, s1, lambda x: fn(x / scale), 9)
                    assert r0 == r1, f"{fn.name} {variant}: selection changed"
                    np.testing.assert_array_equal(s1.p_sigma, s0.p_sigma)
                    np.testing.assert_array_equal(s1.p_c, s0.p_c)
                    if cov_snapshot(s0) is not None:
                        np.testing.assert_array_equal(cov_snapshot(s1),
                                                      cov_snapshot(s0))
                    if scale == 2.0:
                        # powers of two rescale mantissas exactly
                        assert s1.sigma == scale * s0.sigma
                        np.testing.assert_array_equal(s1.m, scale * s0.m)
                    else:
                        err = max(rel_err(s1.sigma, scale * s0.sigma),
                                  rel_err(s1.m, scale * s0.m))
                        worst_scale = max(worst_scale, err)
                        assert err <= 1e-10, (
                            f"{fn.name} {variant} x{scale}: "
                            f"deviation {err:.3e}")
    print(f"criterion 7 PASS: translation bitwise for sigma/paths/covariance "
          f"with mean drift <= {worst_m:.3e} (tol 1e-10); scale x2 bitwise, "
          f"x3 within {worst_scale:.3e} (tol 1e-10)")


# ---------------------------------------------------------------- criterion 8

def curve_bytes(records, path) -> bytes:
    write_curve_csv(path, records)
    with open(path, "rb") as fh:
        return fh.read()


def test_criterion_8_distributed_curves_byte_identical(tmp_path) -> None:
    t0 = time.monotonic()
    kw = dict(sigma0=0.1, lam=4, budget_timesteps=10**9, master_seed=7,
              max_generations=50)
    local = train("cartpole", CSA, **kw)
    base = curve_bytes(local.records, str(tmp_path / "local.csv"))

    for workers, kill_one in ((1, False), (4, False), (4, True)):
        server = MasterServer()
        procs = []
        try:
            host, port = server.address
            procs = [subprocess.Popen(
                [sys.executable, "-m", "evolin.cli", "serve-worker",
                 "--connect", f"{host}:{port}"],
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
                for _ in range(workers)]

            hook = None
            if kill_one:
                def hook(prm, st, _victim=procs[0]):
                    if st.g == 10:
                        _victim.kill()

            res = train_distributed("cartpole", CSA, **kw,
                                    expected_workers=workers, server=server,
                                    wait_timeout=60.0, on_generation=hook)
        finally:
            server.close()
            for p in procs:
                p.kill()
                p.wait()
        label = f"{workers}w" + ("-kill" if kill_one else "")
        got = curve_bytes(res.records, str(tmp_path / f"{label}.csv"))
        assert got == base, f"{label}: curve differs from single-process run"
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"distributed comparison took {elapsed:.1f}s (limit 60s)"
    print(f"criterion 8 PASS: 50-generation cartpole curves byte-identical "
          f"for 1 worker, 4 workers, and 4 workers with one killed mid-run "
          f"in {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 9

def read_trajectory(env_id: str):
    path = os.path.join(FIXTURES, f"{env_id}_trajectory.csv")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    obs_cols = [i for i, name in enumerate(header) if name.startswith("obs")]
    out = []
    for cells in rows:
        out.append({
            "action": float(cells[1]),
            "obs": np.array([float(cells[i]) for i in obs_cols]),
            "reward": float(cells[obs_cols[-1] + 1]),
            "terminated": cells[-2] == "1",
            "truncated": cells[-1] == "1",
        })
    return out


def test_criterion_9_environment_fixture_replay() -> None:
    worst = 0.0
    for env_id in ("cartpole", "acrobot", "pendulum"):
        rows = read_trajectory(env_id)
        assert len(rows) == 100
        env = make_env(env_id)
        env.reset(12345)
        for k, row in enumerate(rows):
            action = [row["action"]] if env_id == "pendulum" else int(row["action"])
            res = env.step(action)
            err = float(np.max(np.abs(res.obs - row["obs"])))
            worst = max(worst, err)
            assert err <= 1e-6, f"{env_id} step {k}: coordinate off by {err:.3e}"
            assert abs(res.reward - row["reward"]) <= 1e-6
            assert res.terminated == row["terminated"]
            assert res.truncated == row["truncated"]
    print(f"criterion 9 PASS: 100-step reference trajectories replay within "
          f"{worst:.3e} per coordinate (tolerance 1e-6)")
