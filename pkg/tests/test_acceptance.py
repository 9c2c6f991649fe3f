"""Release gate: the numbered acceptance checks, one test each.

Every test prints one [PASS]/[FAIL] line carrying the measured values, so
a verbose run doubles as the acceptance report.  The desk-scale runs are
expensive and shared through module-scoped fixtures; everything else runs
on small instances in seconds.
"""

import csv
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from rmirt import cli
from rmirt.core import (GridGeom, Image, MaskStack, MotionParams, ProjGeom,
                        identity_params)
from rmirt.model import (ModelConfig, forward, objective,
                         objective_and_gradients, residual,
                         restricted_quadratic_probe)
from rmirt.optimizer import SolverOptions, run, update_center
from rmirt.projector import SubscanProjector, normal_operator_norm
from rmirt.sim import (MotionTimeline, PhantomSpec, make_ground_truth,
                       make_phantom, make_region_guess)
from rmirt.warp import build_map, warp_adjoint, warp_apply

from conftest import random_data, random_state, tiny_config
from oracles import fd_gradient, materialize

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def report(criterion, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. adjoint identities

def test_criterion_1_adjoint_identities():
    t0 = time.monotonic()
    rng = np.random.default_rng(11)
    grid = GridGeom(16, 16, 1.0)
    proj = SubscanProjector(grid=grid,
                            angles=np.linspace(0.0, np.pi, 12, endpoint=False),
                            n_detectors=24)
    worst_w = 0.0
    for _ in range(20):
        u = rng.standard_normal(grid.shape)
        v = rng.standard_normal((12, 24))
        lhs = float(np.sum(proj.project(u) * v))
        rhs = float(np.sum(u.reshape(-1) * proj.backproject(v)))
        worst_w = max(worst_w, abs(lhs - rhs) / abs(lhs))

    worst_m = 0.0
    cases = [("scale2", [0.93, 1.08]), ("scale2", [1.11, 0.87]),
             ("scale_rot_trans", [1.05, 0.91, 0.2, 1.3, -0.7]),
             ("scale_rot_trans", [0.9, 1.1, -0.35, -2.0, 0.6])]
    for kind, params in cases:
        amap = build_map(kind, params, (7.0, 8.5))
        for _ in range(5):
            u = rng.standard_normal(grid.shape)
            v = rng.standard_normal(grid.shape)
            lhs = float(np.sum(warp_apply(amap, u) * v))
            rhs = float(np.sum(u * warp_adjoint(amap, v)))
            worst_m = max(worst_m, abs(lhs - rhs) / abs(lhs))
    elapsed = time.monotonic() - t0

    ok = worst_w <= 1e-12 and worst_m <= 1e-12 and elapsed < 10.0
    report(1, ok, f"projector rel err {worst_w:.2e}, warp rel err "
                  f"{worst_m:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. analytic gradients vs central finite differences

def test_criterion_2_gradient_finite_differences():
    t0 = time.monotonic()
    cfg = tiny_config()  # 8x8 grid, 2 subscans, 4 angles per subscan
    x, alpha, p = random_state(cfg, seed=3)
    b = random_data(cfg, seed=4)
    _, grads = objective_and_gradients(cfg, x, alpha, p, b)

    def rel_l2(analytic, vec, rebuild):
        fd = fd_gradient(lambda v: objective(cfg, *rebuild(v), b), vec)
        return float(np.linalg.norm(analytic - fd) / np.linalg.norm(fd))

    err_x = rel_l2(grads["x"], x.data,
                   lambda v: (Image(geom=cfg.grid, data=v), alpha, p))
    err_a = rel_l2(grads["alpha"], alpha.data,
                   lambda v: (x, MaskStack(geom=cfg.grid,
                                           n_subscans=cfg.n_subscans,
                                           data=v), p))
    err_p = rel_l2(grads["p"], p.params,
                   lambda v: (x, alpha, p.with_params(v)))
    elapsed = time.monotonic() - t0

    ok = err_x <= 1e-5 and err_a <= 1e-5 and err_p <= 1e-4 and elapsed < 30.0
    report(2, ok, f"rel L2 err x {err_x:.2e}, alpha {err_a:.2e}, "
                  f"p {err_p:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. dense block-matrix oracle

def test_criterion_3_dense_oracle_equivalence():
    cfg = tiny_config()
    x, alpha, p = random_state(cfg, seed=5)
    b = random_data(cfg, seed=6)
    n_pix = cfg.grid.n_pixels

    pred = forward(cfg, x, alpha, p)
    res = residual(cfg, x, alpha, p, b)
    val = objective(cfg, x, alpha, p, b)

    worst_f = worst_r = 0.0
    dense_obj = 0.0
    for i in range(cfg.n_subscans):
        proj = cfg.projectors[i]
        w_mat = materialize(
            lambda v: proj.project(v.reshape(cfg.grid.shape)).reshape(-1),
            n_pix, proj.n_angles * proj.n_detectors)
        amap = build_map(cfg.kind, p.block(i), p.center)
        m_mat = materialize(
            lambda v: warp_apply(amap, v.reshape(cfg.grid.shape)).reshape(-1),
            n_pix, n_pix)
        model_mat = w_mat @ (np.diag(1.0 - alpha.block(i))
                             + m_mat @ np.diag(alpha.block(i)))
        f_i = model_mat @ x.data
        r_i = f_i - b.block(i).reshape(-1)
        dense_obj += 0.5 * float(r_i @ r_i)
        scale = np.linalg.norm(f_i)
        worst_f = max(worst_f, np.linalg.norm(
            pred.block(i).reshape(-1) - f_i) / scale)
        worst_r = max(worst_r, np.linalg.norm(
            res.blocks[i].reshape(-1) - r_i) / max(np.linalg.norm(r_i), 1e-300))
    err_obj = abs(val - dense_obj) / dense_obj

    ok = worst_f <= 1e-10 and worst_r <= 1e-10 and err_obj <= 1e-10
    report(3, ok, f"rel err forward {worst_f:.2e}, residual {worst_r:.2e}, "
                  f"objective {err_obj:.2e}")


# ---------------------------------------------------------------------------
# 4. restricted midpoint convexity

def test_criterion_4_restricted_convexity():
    cfg = tiny_config()
    x, alpha, p = random_state(cfg, seed=7)
    b = random_data(cfg, seed=8)
    rng = np.random.default_rng(9)

    worst = {"x": 0.0, "alpha": 0.0}
    for block, size in (("x", cfg.grid.n_pixels),
                        ("alpha", cfg.grid.n_pixels * cfg.n_subscans)):
        for _ in range(100):
            probe = restricted_quadratic_probe(
                cfg, x, alpha, p, b, block,
                rng.uniform(0.0, 1.0, size), rng.uniform(0.0, 1.0, size))
            worst[block] = max(worst[block], probe.max_relative_violation)

    # the parameter restriction is non-convex by design: measure and
    # report, but do not gate on it
    srt = tiny_config(kind="scale_rot_trans")
    xs, als, ps = random_state(srt, seed=10)
    bs = random_data(srt, seed=11)
    p_violation = 0.0
    for _ in range(20):
        ends = identity_params(srt.kind, srt.n_subscans)
        probe = restricted_quadratic_probe(
            srt, xs, als, ps, bs, "p",
            ends + rng.uniform(-0.4, 0.4, ends.size),
            ends + rng.uniform(-0.4, 0.4, ends.size))
        p_violation = max(p_violation, probe.max_relative_violation)

    ok = worst["x"] <= 1e-9 and worst["alpha"] <= 1e-9
    report(4, ok, f"max rel violation x {worst['x']:.2e}, alpha "
                  f"{worst['alpha']:.2e} (p probe, ungated: {p_violation:.2e})")


# ---------------------------------------------------------------------------
# 5. stationarity at ground truth

def test_criterion_5_truth_stationarity():
    grid = GridGeom(16, 16, 1.0)
    proj = ProjGeom.equal_subscans(24, 2, 24)
    spec = PhantomSpec(grid, static_band_rows=6, texture_seed=3)
    tl = MotionTimeline("scale2", [1.0, 1.0], [0.99, 1.2], (9.0, 7.5),
                        schedule="subscan_constant")
    gt = make_ground_truth(spec, tl, proj, 0.0, 0)
    cfg = ModelConfig(grid=grid, proj_geom=proj, kind="scale2")
    val, grads = objective_and_gradients(cfg, gt.x_true, gt.mask_true,
                                         gt.params, gt.sino_clean)
    bnorm = float(np.linalg.norm(gt.sino_clean.data))
    gmax = max(float(np.linalg.norm(g)) for g in grads.values())

    ok = val <= 1e-18 * bnorm ** 2 and gmax <= 1e-8 * bnorm
    report(5, ok, f"objective {val:.2e} (bound {1e-18 * bnorm ** 2:.2e}), "
                  f"max grad norm {gmax:.2e} (bound {1e-8 * bnorm:.2e})")


# ---------------------------------------------------------------------------
# desk-scale fixtures

@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Bundled noisy desk config executed through the CLI."""
    work = tmp_path_factory.mktemp("desk_noisy")
    text = (CONFIG_DIR / "desk128.ini").read_text()
    cfg = work / "desk.ini"
    cfg.write_text(text.replace("directory = ../out/desk128",
                                f"directory = {work / 'run'}"))
    t0 = time.monotonic()
    rc = cli.main(["--deterministic", "run", str(cfg)])
    elapsed = time.monotonic() - t0
    assert rc == 0
    curves = {}
    with open(work / "run" / "metrics.csv") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault(row["variant"], []).append(
                (float(row["objective"]), float(row["mse"])))
    return SimpleNamespace(curves=curves, elapsed=elapsed, work=work,
                           cfg_path=cfg)


@pytest.fixture(scope="module")
def desk_noiseless():
    """Noiseless subscan-constant desk run of the joint solver.

    Mirrors configs/desk128_noiseless.ini: staged updates with a fixed
    image stepsize and tied masks, run long enough to approach the
    attainable recovery floor.
    """
    grid = GridGeom(128, 128, 1.0)
    proj = ProjGeom.equal_subscans(180, 5, 192)
    spec = PhantomSpec(grid, static_band_rows=52, texture_seed=7)
    volume_center = (0.5 * (grid.height - 1), 0.5 * (grid.width - 1))
    _, region = make_phantom(spec)
    center_true = update_center(MaskStack.tile(region.as_2d(), 1),
                                volume_center)
    tl = MotionTimeline("scale2", [1.0, 1.0], [0.99, 1.25], center_true,
                        schedule="subscan_constant")
    gt = make_ground_truth(spec, tl, proj, 0.0, 1234)
    cfg = ModelConfig(grid=grid, proj_geom=proj, kind="scale2")
    lam = normal_operator_norm(cfg.projectors, grid)
    guess = make_region_guess(spec, extra_rows=5)
    init = (Image.zeros(grid),
            MaskStack.tile(guess.as_2d(), proj.n_subscans),
            MotionParams.identity("scale2", proj.n_subscans, volume_center))
    opts = SolverOptions(n_iter=1800, gauss_seidel=True, tie_masks=True,
                         bb_min=1.0 / lam, bb_max=1.0 / lam)
    t0 = time.monotonic()
    res = run(cfg, gt.sino_clean, init, opts,
              x_true=gt.x_true, mask_true=gt.mask_true)
    elapsed = time.monotonic() - t0
    return SimpleNamespace(res=res, gt=gt, spec=spec, proj=proj,
                           elapsed=elapsed)


# ---------------------------------------------------------------------------
# 6. desk-scale MSE ordering

def test_criterion_6_desk_mse_ordering(desk_run):
    final = {v: c[-1][1] for v, c in desk_run.curves.items()}
    mse_curve = [m for _, m in desk_run.curves["rmirt"]]
    upticks = [i for i in range(6, len(mse_curve))
               if mse_curve[i] > mse_curve[i - 1] * 1.05]

    ok = (final["rmirt"] < final["global"]
          and final["rmirt"] <= 0.7 * final["none"]
          and not upticks
          and desk_run.elapsed <= 600.0)
    report(6, ok,
           f"mse rmirt {final['rmirt']:.3e}, global {final['global']:.3e}, "
           f"none {final['none']:.3e} (rmirt/none "
           f"{final['rmirt'] / final['none']:.3f}), curve upticks {upticks}, "
           f"{desk_run.elapsed:.0f}s")


def test_desk_objective_strictly_decreases_first_five(desk_run):
    for variant, curve in desk_run.curves.items():
        obj = [o for o, _ in curve]
        assert all(obj[i + 1] < obj[i] for i in range(5)), variant


def test_desk_objective_plateau_within_horizon(desk_run):
    # the convergence-horizon contract asks for successive relative
    # objective changes below 1e-4 inside 30 iterations; the stepsize
    # schedule keeps making real progress at the horizon instead of
    # stalling, so this is a known failure (see the design notes)
    obj = [o for o, _ in desk_run.curves["rmirt"]]
    rel = [abs(obj[i] - obj[i - 1]) / obj[i - 1] for i in range(1, len(obj))]
    assert min(rel) < 1e-4, (
        f"smallest successive relative objective change {min(rel):.2e} "
        f"within {len(obj)} iterations")


# ---------------------------------------------------------------------------
# 7. region recovery on the noiseless desk run

def test_criterion_7_region_recovery(desk_noiseless):
    from rmirt.metrics import dice

    res = desk_noiseless.res
    dice_mean = float(np.mean(dice(res.mask, desk_noiseless.gt.mask_true)))
    boundary = float(desk_noiseless.spec.boundary_row)
    center_err = abs(res.center[0] - boundary)

    ok = dice_mean >= 0.80 and center_err <= 3.0
    report(7, ok, f"mean dice {dice_mean:.4f} (>= 0.80), center row "
                  f"{res.center[0]:.1f} vs boundary {boundary:.0f} "
                  f"(|err| {center_err:.1f} <= 3), "
                  f"{desk_noiseless.elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. parameter recovery on the noiseless desk run

def test_criterion_8_parameter_recovery(desk_noiseless):
    from rmirt.metrics import param_error

    res = desk_noiseless.res
    errs = param_error(res.params, desk_noiseless.gt.params)
    worst = float(errs.max())

    ok = worst <= 0.01
    report(8, ok, f"max abs scale error {worst:.4f} (<= 0.01); "
                  f"per subscan sy err "
                  f"{np.round(errs[:, 1], 4).tolist()}")


# ---------------------------------------------------------------------------
# 9. bit-identical reruns

def test_criterion_9_determinism(desk_run):
    rerun_dir = desk_run.work / "rerun"
    text = desk_run.cfg_path.read_text().replace(
        str(desk_run.work / "run"), str(rerun_dir))
    cfg2 = desk_run.work / "desk_rerun.ini"
    cfg2.write_text(text)
    rc = cli.main(["--deterministic", "run", str(cfg2)])
    assert rc == 0
    a = (desk_run.work / "run" / "metrics.csv").read_bytes()
    b = (rerun_dir / "metrics.csv").read_bytes()

    ok = a == b
    report(9, ok, f"metric tables identical: {ok} ({len(a)} bytes)")
