"""Command line front end.

``rmirt run CONFIG`` simulates the configured dynamic acquisition once and
reconstructs it with three variants on identical data: ``none`` (static
reconstruction, masks and motion frozen off), ``global`` (whole-image
motion compensation, masks frozen at one), and ``rmirt`` (joint mask and
motion estimation).  ``rmirt selfcheck`` runs the fast internal oracle
suite.  Exit codes: 0 success, 1 malformed configuration, 2 file I/O
failure, 3 solver divergence, 4 selfcheck failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io, kernels, metrics, model, optimizer, sim
from .core import (DimensionError, DomainError, GridGeom, Image, MaskStack,
                   ModelKind, MotionParams, ProjGeom, as_model_kind,
                   PARAMS_PER_SUBSCAN)
from .optimizer import DivergenceError, SolverOptions, update_center
from .projector import SubscanProjector, normal_operator_norm
from .warp import build_map, warp_apply, warp_adjoint

_PARAM_NAMES = {
    ModelKind.SCALE2: ("s_x", "s_y"),
    ModelKind.SCALE_ROT_TRANS: ("s_x", "s_y", "theta", "t_x", "t_y"),
}

_VARIANTS = ("none", "global", "rmirt")


class ConfigError(ValueError):
    """Malformed configuration file."""


# ---------------------------------------------------------------------------
# configuration parsing

_SCHEMA = {
    "grid": {
        "width": int, "height": int, "pixel_size": float,
    },
    "projection": {
        "n_angles": int, "n_detectors": int, "detector_spacing": float,
        "n_subscans": int,
    },
    "phantom": {
        "static_band_rows": int, "texture_seed": int, "structure": str,
    },
    "motion": {
        "model_kind": str, "start_params": "vector", "end_params": "vector",
    },
    "noise": {
        "sigma_fraction": float, "seed": int,
    },
    "solver": {
        "n_iter": int,
    },
    "output": {
        "directory": str,
    },
}

_OPTIONAL = {
    "motion": {
        "schedule": (str, "linear"),
    },
    "solver": {
        "threshold": (float, 0.5),
        "tie_masks": ("bool", False),
        "gauss_seidel": ("bool", False),
        "region_guess_extra_rows": (int, 5),
        "alpha_step_scale": (float, None),
        "bb_max_ratio": (float, 1e4),
    },
}


@dataclass
class ExperimentConfig:
    grid: GridGeom
    proj: ProjGeom
    phantom: sim.PhantomSpec
    kind: ModelKind
    start_params: np.ndarray
    end_params: np.ndarray
    schedule: str
    sigma_fraction: float
    noise_seed: int
    n_iter: int
    threshold: float
    tie_masks: bool
    gauss_seidel: bool
    region_guess_extra_rows: int
    alpha_step_scale: float | None
    bb_max_ratio: float
    out_dir: Path


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line where the key is set."""
    lines = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            continue
        key = line.split("=", 1)[0].strip().lower()
        if key:
            lines[(section, key)] = lineno
    return lines


def _convert(kind, raw: str):
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw.strip()
    if kind == "bool":
        val = raw.strip().lower()
        if val in ("true", "yes", "on", "1"):
            return True
        if val in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "vector":
        parts = [p for p in raw.replace(",", " ").split() if p]
        if not parts:
            raise ValueError("expected a comma-separated number list")
        return np.array([float(p) for p in parts])
    raise AssertionError(kind)


def parse_config(path: Path) -> ExperimentConfig:
    """Parse and validate a flat INI experiment configuration."""
    import configparser

    path = Path(path)
    text = path.read_text()
    where = _key_lines(text)

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    def anchored(section: str, key: str, msg: str) -> ConfigError:
        lineno = where.get((section, key))
        at = f"{path}, line {lineno}" if lineno else str(path)
        return ConfigError(f"{at}: [{section}] {key}: {msg}")

    values: dict[str, dict[str, object]] = {}
    for section, keys in _SCHEMA.items():
        if not parser.has_section(section):
            raise ConfigError(f"{path}: missing required section [{section}]")
        values[section] = {}
        for key, kind in keys.items():
            if not parser.has_option(section, key):
                raise ConfigError(
                    f"{path}: missing required key '{key}' in section [{section}]")
            try:
                values[section][key] = _convert(kind, parser.get(section, key))
            except ValueError as exc:
                raise anchored(section, key, str(exc)) from exc
        for key, (kind, default) in _OPTIONAL.get(section, {}).items():
            if parser.has_option(section, key):
                try:
                    values[section][key] = _convert(kind, parser.get(section, key))
                except ValueError as exc:
                    raise anchored(section, key, str(exc)) from exc
            else:
                values[section][key] = default

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        known = set(_SCHEMA[section]) | set(_OPTIONAL.get(section, {}))
        for key in parser.options(section):
            if key not in known:
                raise ConfigError(
                    f"{path}: unknown key '{key}' in section [{section}]")

    g, pr, ph = values["grid"], values["projection"], values["phantom"]
    mo, no, so = values["motion"], values["noise"], values["solver"]
    try:
        grid = GridGeom(width=g["width"], height=g["height"],
                        pixel_size=g["pixel_size"])
        proj = ProjGeom.equal_subscans(
            n_angles=pr["n_angles"], n_subscans=pr["n_subscans"],
            n_detectors=pr["n_detectors"],
            detector_spacing=pr["detector_spacing"])
        phantom = sim.PhantomSpec(geom=grid,
                                  static_band_rows=ph["static_band_rows"],
                                  texture_seed=ph["texture_seed"],
                                  structure=ph["structure"])
        kind = as_model_kind(mo["model_kind"])
        m = PARAMS_PER_SUBSCAN[kind]
        for name in ("start_params", "end_params"):
            if np.asarray(mo[name]).size != m:
                raise anchored("motion", name,
                               f"{kind.value} needs {m} values")
        if mo["schedule"] not in ("linear", "subscan_constant"):
            raise anchored("motion", "schedule",
                           "must be 'linear' or 'subscan_constant'")
        if no["sigma_fraction"] < 0:
            raise anchored("noise", "sigma_fraction", "must be >= 0")
        if so["n_iter"] < 1:
            raise anchored("solver", "n_iter", "must be >= 1")
        if so["bb_max_ratio"] < 1.0:
            raise anchored("solver", "bb_max_ratio", "must be >= 1")
        # detector coverage check happens here rather than mid-run
        SubscanProjector(grid=grid, angles=proj.angles,
                         n_detectors=proj.n_detectors,
                         detector_spacing=proj.detector_spacing)
    except (DomainError, DimensionError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    out_dir = Path(str(values["output"]["directory"]))
    if not out_dir.is_absolute():
        out_dir = path.parent / out_dir
    return ExperimentConfig(
        grid=grid, proj=proj, phantom=phantom, kind=kind,
        start_params=np.asarray(mo["start_params"], dtype=np.float64),
        end_params=np.asarray(mo["end_params"], dtype=np.float64),
        schedule=str(mo["schedule"]),
        sigma_fraction=float(no["sigma_fraction"]),
        noise_seed=int(no["seed"]), n_iter=int(so["n_iter"]),
        threshold=float(so["threshold"]), tie_masks=bool(so["tie_masks"]),
        gauss_seidel=bool(so["gauss_seidel"]),
        region_guess_extra_rows=int(so["region_guess_extra_rows"]),
        alpha_step_scale=(None if so["alpha_step_scale"] is None
                          else float(so["alpha_step_scale"])),
        bb_max_ratio=float(so["bb_max_ratio"]),
        out_dir=out_dir)


# ---------------------------------------------------------------------------
# experiment driver

def _variant_inits(cfg: ExperimentConfig):
    """Starting point and options per variant.

    All three variants start from a zero image on identical data and
    differ only in which blocks are frozen: ``none`` freezes masks and
    motion at zero/identity, ``global`` freezes an all-ones mask, and
    ``rmirt`` estimates everything from the imperfect region guess.
    """
    grid = cfg.grid
    n = cfg.proj.n_subscans
    volume_center = (0.5 * (grid.height - 1), 0.5 * (grid.width - 1))
    common = dict(n_iter=cfg.n_iter, threshold=cfg.threshold,
                  tie_masks=cfg.tie_masks, gauss_seidel=cfg.gauss_seidel,
                  alpha_step_scale=cfg.alpha_step_scale)
    guess = sim.make_region_guess(cfg.phantom, cfg.region_guess_extra_rows)
    return {
        "none": (Image.zeros(grid), MaskStack.zeros(grid, n),
                 MotionParams.identity(cfg.kind, n, volume_center),
                 SolverOptions(freeze=frozenset({"alpha", "p"}),
                               update_center=False, **common)),
        "global": (Image.zeros(grid), MaskStack.ones(grid, n),
                   MotionParams.identity(cfg.kind, n, volume_center),
                   SolverOptions(freeze=frozenset({"alpha"}),
                                 update_center=False, **common)),
        "rmirt": (Image.zeros(grid), MaskStack.tile(guess.as_2d(), n),
                  MotionParams.identity(cfg.kind, n, volume_center),
                  SolverOptions(freeze=frozenset(), update_center=True,
                                **common)),
    }


def _write_variant_outputs(out_dir: Path, variant: str,
                           result: optimizer.SolverResult,
                           gt: sim.GroundTruth, written: list[Path]) -> None:
    grid = result.x.geom
    recon = out_dir / f"recon_{variant}.raw"
    io.write_raw(recon, result.x.as_2d())
    io.write_pgm(out_dir / f"recon_{variant}.pgm", result.x.as_2d())
    written += [recon, recon.with_suffix(".hdr"),
                out_dir / f"recon_{variant}.pgm"]

    stack = result.mask.data.reshape(result.mask.n_subscans, *grid.shape)
    mask_raw = out_dir / f"mask_{variant}.raw"
    io.write_raw(mask_raw, stack)
    written += [mask_raw, mask_raw.with_suffix(".hdr")]
    for i in range(result.mask.n_subscans):
        pgm = out_dir / f"mask_{variant}_s{i}.pgm"
        io.write_pgm(pgm, stack[i])
        written.append(pgm)

    names = _PARAM_NAMES[result.params.kind]
    header = (["subscan"] + list(names) + [f"ref_{n}" for n in names])
    rows = []
    for i in range(result.params.n_subscans):
        rows.append([i] + [float(v) for v in result.params.block(i)]
                    + [float(v) for v in gt.params.block(i)])
    params_csv = out_dir / f"params_{variant}.csv"
    io.write_csv(params_csv, header, rows)
    written.append(params_csv)


def run_experiment(config_path, threads: int = 1,
                   deterministic: bool = False,
                   seed_override: int | None = None) -> int:
    """Execute the three-variant experiment described by a config file."""
    del deterministic  # reductions are always fixed-order; flag kept stable
    try:
        cfg = parse_config(Path(config_path))
    except FileNotFoundError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if seed_override is not None:
        cfg.noise_seed = int(seed_override)

    kernels.set_num_threads(threads)
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 2

    # ground truth and data (shared by all variants)
    try:
        x_true, region = sim.make_phantom(cfg.phantom)
        center_true = update_center(
            MaskStack.tile(region.as_2d(), 1),
            (0.5 * (cfg.grid.height - 1), 0.5 * (cfg.grid.width - 1)))
        timeline = sim.MotionTimeline(kind=cfg.kind,
                                      start_params=cfg.start_params,
                                      end_params=cfg.end_params,
                                      center=center_true,
                                      schedule=cfg.schedule)
        gt = sim.make_ground_truth(cfg.phantom, timeline, cfg.proj,
                                   cfg.sigma_fraction, cfg.noise_seed)
    except (DomainError, DimensionError) as exc:
        # values that parse but describe an unusable experiment
        print(f"error: {config_path}: {exc}", file=sys.stderr)
        return 1
    b = gt.sino_noisy
    model_cfg = model.ModelConfig(grid=cfg.grid, proj_geom=cfg.proj,
                                  kind=cfg.kind)

    # one Lipschitz estimate shared by every variant
    lam = normal_operator_norm(model_cfg.projectors, cfg.grid)
    bb = dict(bb_min=1.0 / lam, bb_max=cfg.bb_max_ratio / lam)

    results: dict[str, optimizer.SolverResult] = {}
    try:
        for variant, (x0, a0, p0, opts) in _variant_inits(cfg).items():
            opts.bb_min, opts.bb_max = bb["bb_min"], bb["bb_max"]
            results[variant] = optimizer.run(model_cfg, b, (x0, a0, p0), opts,
                                             x_true=gt.x_true,
                                             mask_true=gt.mask_true)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    try:
        written: list[Path] = []
        truth_raw = cfg.out_dir / "phantom.raw"
        io.write_raw(truth_raw, x_true.as_2d())
        io.write_pgm(cfg.out_dir / "phantom.pgm", x_true.as_2d())
        region_raw = cfg.out_dir / "region_true.raw"
        io.write_raw(region_raw, region.as_2d())
        io.write_pgm(cfg.out_dir / "region_true.pgm", region.as_2d())
        written += [truth_raw, truth_raw.with_suffix(".hdr"),
                    cfg.out_dir / "phantom.pgm", region_raw,
                    region_raw.with_suffix(".hdr"),
                    cfg.out_dir / "region_true.pgm"]

        rows = []
        for variant in _VARIANTS:
            for rec in results[variant].trace.records:
                rows.append([variant, rec.iteration, rec.objective, rec.mse,
                             rec.dice_mean, rec.step_x, rec.step_p,
                             rec.step_alpha, rec.center_row])
        metrics_csv = cfg.out_dir / "metrics.csv"
        io.write_csv(metrics_csv,
                     ["variant", "iteration", "objective", "mse", "dice_mean",
                      "step_x", "step_p", "step_alpha", "center_row"], rows)
        written.append(metrics_csv)

        for variant in _VARIANTS:
            _write_variant_outputs(cfg.out_dir, variant, results[variant],
                                   gt, written)

        summary = cfg.out_dir / "summary.txt"
        with open(summary, "w") as fh:
            fh.write("experiment summary\n")
            for variant in _VARIANTS:
                res = results[variant]
                report = metrics.evaluate(res.x, gt.x_true, res.mask,
                                          gt.mask_true, res.params, gt.params)
                fh.write(f"{variant}: final mse {report.mse:.6e}, "
                         f"mean dice {report.dice_mean:.4f}, "
                         f"center row {res.center[0]:.1f}\n")
            fh.write("output files:\n")
            for f in written:
                fh.write(f"  {f.name}\n")
        print(summary.read_text(), end="")
        print(f"outputs written to {cfg.out_dir}")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# selfcheck

def _check(name: str, passed: bool, detail: str, failures: list[str]) -> None:
    tag = "PASS" if passed else "FAIL"
    print(f"[{tag}] {name} ({detail})")
    if not passed:
        failures.append(name)


def selfcheck(break_adjoint: bool = False, threads: int = 1) -> int:
    """Fast oracle suite; ``break_adjoint`` is a negative-control hook."""
    kernels.set_num_threads(threads)
    rng = np.random.default_rng(20240817)
    failures: list[str] = []

    # projector adjoint identity on a small geometry
    grid = GridGeom(width=16, height=16)
    proj = SubscanProjector(grid=grid,
                            angles=np.linspace(0.0, np.pi, 12, endpoint=False),
                            n_detectors=24)
    worst = 0.0
    for _ in range(20):
        u = rng.standard_normal(grid.shape)
        v = rng.standard_normal((proj.n_angles, proj.n_detectors))
        fu = proj.project(u)
        bv = proj.backproject(v)
        if break_adjoint:
            bv = bv + 1e-3 * np.abs(bv).max()
        lhs = float(np.sum(fu * v))
        rhs = float(np.sum(u.reshape(-1) * bv))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    _check("projector adjoint", worst <= 1e-12,
           f"max rel err {worst:.2e}", failures)

    # warp adjoint identity for both motion models
    worst = 0.0
    for kind, params in (("scale2", [0.93, 1.08]),
                        ("scale_rot_trans", [1.05, 0.91, 0.2, 1.3, -0.7])):
        amap = build_map(kind, params, (7.0, 8.5))
        for _ in range(10):
            u = rng.standard_normal(grid.shape)
            v = rng.standard_normal(grid.shape)
            lhs = float(np.sum(warp_apply(amap, u) * v))
            rhs = float(np.sum(u * warp_adjoint(amap, v)))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    _check("warp adjoint", worst <= 1e-12, f"max rel err {worst:.2e}", failures)

    # finite-difference gradient checks on a tiny joint instance
    tiny_grid = GridGeom(width=8, height=8)
    tiny_proj = ProjGeom.equal_subscans(n_angles=8, n_subscans=2,
                                        n_detectors=12)
    tiny_cfg = model.ModelConfig(grid=tiny_grid, proj_geom=tiny_proj,
                                 kind=ModelKind.SCALE2)
    x = Image(geom=tiny_grid, data=np.clip(
        0.5 + 0.2 * rng.standard_normal(tiny_grid.n_pixels), 0.1, 0.9))
    alpha = MaskStack(geom=tiny_grid, n_subscans=2, data=np.clip(
        0.5 + 0.2 * rng.standard_normal(2 * tiny_grid.n_pixels), 0.1, 0.9))
    p = MotionParams(kind=ModelKind.SCALE2, n_subscans=2,
                     params=np.array([0.97, 1.06, 1.03, 0.95]),
                     center=(3.5, 3.5))
    b = model.forward(tiny_cfg, x, alpha, p)
    b.data += 0.05 * rng.standard_normal(b.data.size) * np.abs(b.data).max()

    def fd_err(block: str, vec: np.ndarray, setter, h: float) -> float:
        grads = model.objective_and_gradients(tiny_cfg, x, alpha, p, b,
                                              want=(block,))[1][block]
        fd = np.empty_like(vec)
        for j in range(vec.size):
            for sgn in (1.0, -1.0):
                shifted = vec.copy()
                shifted[j] += sgn * h
                val = model.objective(tiny_cfg, *setter(shifted), b)
                fd[j] = val if sgn > 0 else (fd[j] - val)
            fd[j] /= 2.0 * h
        return float(np.linalg.norm(grads - fd) / np.linalg.norm(fd))

    err_x = fd_err("x", x.data,
                   lambda v: (Image(geom=tiny_grid, data=v), alpha, p), 1e-4)
    err_a = fd_err("alpha", alpha.data,
                   lambda v: (x, MaskStack(geom=tiny_grid, n_subscans=2,
                                           data=v), p), 1e-4)
    err_p = fd_err("p", p.params, lambda v: (x, alpha, p.with_params(v)), 1e-4)
    _check("image gradient vs finite differences", err_x <= 1e-5,
           f"rel err {err_x:.2e}", failures)
    _check("mask gradient vs finite differences", err_a <= 1e-5,
           f"rel err {err_a:.2e}", failures)
    _check("motion gradient vs finite differences", err_p <= 1e-4,
           f"rel err {err_p:.2e}", failures)

    # convexity probes along the image and mask blocks
    worst = 0.0
    for block, size in (("x", tiny_grid.n_pixels),
                        ("alpha", 2 * tiny_grid.n_pixels)):
        for _ in range(5):
            end_a = rng.uniform(0.0, 1.0, size)
            end_b = rng.uniform(0.0, 1.0, size)
            report = model.restricted_quadratic_probe(
                tiny_cfg, x, alpha, p, b, block, end_a, end_b)
            worst = max(worst, report.max_relative_violation)
    _check("restricted convexity (image, mask)", worst <= 1e-9,
           f"max rel violation {worst:.2e}", failures)

    # stationarity at the truth on exactly representable data
    spec = sim.PhantomSpec(geom=grid, static_band_rows=6, texture_seed=5)
    x_t, region = sim.make_phantom(spec)
    boundary = update_center(MaskStack.tile(region.as_2d(), 1),
                             (0.5 * (grid.height - 1), 0.5 * (grid.width - 1)))
    tl = sim.MotionTimeline(kind=ModelKind.SCALE2,
                            start_params=np.array([1.0, 1.0]),
                            end_params=np.array([0.99, 1.2]),
                            center=boundary,
                            schedule="subscan_constant")
    ic_proj = ProjGeom.equal_subscans(n_angles=12, n_subscans=2,
                                      n_detectors=24)
    ic_b = sim.simulate_dynamic_sinogram(x_t, region, tl, ic_proj)
    ic_cfg = model.ModelConfig(grid=grid, proj_geom=ic_proj,
                               kind=ModelKind.SCALE2)
    p_true = sim.subscan_representative_params(tl, ic_proj)
    stack = MaskStack.tile(region.as_2d(), 2)
    val, grads = model.objective_and_gradients(ic_cfg, x_t, stack, p_true, ic_b)
    bnorm = float(np.linalg.norm(ic_b.data))
    gnorm = max(float(np.linalg.norm(g)) for g in grads.values())
    ok = val <= 1e-18 * bnorm ** 2 and gnorm <= 1e-8 * bnorm
    _check("stationarity on representable data", ok,
           f"objective {val:.2e}, max grad norm {gnorm:.2e}", failures)

    if failures:
        print(f"selfcheck failed: {', '.join(failures)}")
        return 4
    print("selfcheck passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rmirt",
        description="Region-based motion-compensated CT reconstruction")
    parser.add_argument("--threads", type=int, default=1, metavar="K",
                        help="worker thread cap for the numeric kernels")
    parser.add_argument("--deterministic", action="store_true",
                        help="fixed-order reductions (always on; accepted "
                             "for interface stability)")
    parser.add_argument("--seed", type=int, default=None, metavar="S",
                        help="override the configured noise seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate and reconstruct a config")
    p_run.add_argument("config", help="path to the experiment config")

    p_check = sub.add_parser("selfcheck", help="run the fast oracle suite")
    p_check.add_argument("--break-adjoint", action="store_true",
                         help=argparse.SUPPRESS)

    args = parser.parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config, threads=args.threads,
                              deterministic=args.deterministic,
                              seed_override=args.seed)
    return selfcheck(break_adjoint=args.break_adjoint, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
