"""Forward model, least-squares objective, and analytic block gradients.

For subscan i with mask alpha_i, motion map M_i and projector W_i, the
predicted data block is

    W_i( (1 - alpha_i) * x  +  M_i(alpha_i * x) ),

the static content plus the warped masked content.  The objective is half
the squared residual norm summed over subscans.  All gradients are exact
algebraic transposes of the forward chain (no numeric differentiation):

* image block:      sum_i  W_i^T r_i + alpha_i * (M_i^T W_i^T r_i - W_i^T r_i)
* mask block i:     x * (M_i^T W_i^T r_i - W_i^T r_i)
* parameter j of i: < d/dp_j M_i(alpha_i * x), W_i^T r_i >

The objective is quadratic (hence convex) along the image block and along
the mask block separately; it is not convex in the motion parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (DimensionError, DomainError, GridGeom, Image, MaskStack,
                   ModelKind, MotionParams, ProjGeom, Sinogram, as_model_kind)
from .projector import SubscanProjector
from .warp import build_map, warp_apply, warp_adjoint, warp_param_grad


@dataclass
class ModelConfig:
    """Geometry and motion-model choices shared by all model operations."""

    grid: GridGeom
    proj_geom: ProjGeom
    kind: ModelKind
    projectors: list[SubscanProjector] = field(default_factory=list)

    def __post_init__(self):
        self.kind = as_model_kind(self.kind)
        if not self.projectors:
            self.projectors = [
                SubscanProjector(
                    grid=self.grid,
                    angles=self.proj_geom.subscan_angles(i),
                    n_detectors=self.proj_geom.n_detectors,
                    detector_spacing=self.proj_geom.detector_spacing,
                )
                for i in range(self.proj_geom.n_subscans)
            ]
        if len(self.projectors) != self.proj_geom.n_subscans:
            raise DimensionError("one projector per subscan required")

    @property
    def n_subscans(self) -> int:
        return self.proj_geom.n_subscans


@dataclass
class Residual:
    """Per-subscan residual blocks, each (n_angles_i, n_detectors)."""

    blocks: list[np.ndarray]

    def norm_squared(self) -> float:
        return float(sum(np.sum(b * b) for b in self.blocks))


def _check_inputs(cfg: ModelConfig, x: Image, alpha: MaskStack,
                  p: MotionParams) -> None:
    if x.geom.shape != cfg.grid.shape:
        raise DimensionError("image grid does not match model grid")
    if alpha.geom.shape != cfg.grid.shape:
        raise DimensionError("mask grid does not match model grid")
    if alpha.n_subscans != cfg.n_subscans:
        raise DimensionError("mask stack subscan count mismatch")
    if p.n_subscans != cfg.n_subscans:
        raise DimensionError("motion parameter subscan count mismatch")
    if p.kind is not cfg.kind:
        raise DomainError(
            f"motion parameters are {p.kind.value}, model expects {cfg.kind.value}")
    if x.data.size and (x.data.min() < 0.0 or x.data.max() > 1.0):
        raise DomainError("reconstruction values must lie in [0, 1]")


def _deformed_blocks(cfg, x, alpha, p):
    """Per-subscan deformed images (1-alpha_i)*x + M_i(alpha_i*x), 2D."""
    x2 = x.as_2d()
    out = []
    for i in range(cfg.n_subscans):
        a2 = alpha.block_2d(i)
        amap = build_map(cfg.kind, p.block(i), p.center)
        out.append((1.0 - a2) * x2 + warp_apply(amap, a2 * x2))
    return out


def forward(cfg: ModelConfig, x: Image, alpha: MaskStack,
            p: MotionParams) -> Sinogram:
    """Predicted data for the current image, masks and motion."""
    _check_inputs(cfg, x, alpha, p)
    sino = Sinogram(geom=cfg.proj_geom)
    view = sino.as_2d()
    for i, deformed in enumerate(_deformed_blocks(cfg, x, alpha, p)):
        view[cfg.proj_geom.subscan_slice(i)] = cfg.projectors[i].project(deformed)
    return sino


def residual(cfg: ModelConfig, x: Image, alpha: MaskStack, p: MotionParams,
             b: Sinogram) -> Residual:
    """Forward prediction minus observed data, per subscan."""
    if b.geom.n_bins != cfg.proj_geom.n_bins:
        raise DimensionError("observed sinogram does not match geometry")
    pred = forward(cfg, x, alpha, p)
    return Residual(blocks=[pred.block(i) - b.block(i)
                            for i in range(cfg.n_subscans)])


def objective(cfg: ModelConfig, x: Image, alpha: MaskStack, p: MotionParams,
              b: Sinogram) -> float:
    """Half squared residual norm over all subscans."""
    return 0.5 * residual(cfg, x, alpha, p, b).norm_squared()


def objective_and_gradients(cfg: ModelConfig, x: Image, alpha: MaskStack,
                            p: MotionParams, b: Sinogram,
                            want: tuple[str, ...] = ("x", "alpha", "p")):
    """Objective with any subset of block gradients, sharing one residual.

    Returns (value, grads) where grads maps block name to a flat gradient
    array.  All gradients are evaluated at the same (x, alpha, p) point.
    """
    _check_inputs(cfg, x, alpha, p)
    unknown = set(want) - {"x", "alpha", "p"}
    if unknown:
        raise DomainError(f"unknown gradient blocks: {sorted(unknown)}")
    x2 = x.as_2d()
    n_pix = cfg.grid.n_pixels
    res = residual(cfg, x, alpha, p, b)
    value = 0.5 * res.norm_squared()

    grads: dict[str, np.ndarray] = {}
    if "x" in want:
        grads["x"] = np.zeros(n_pix)
    if "alpha" in want:
        grads["alpha"] = np.zeros(cfg.n_subscans * n_pix)
    if "p" in want:
        grads["p"] = np.zeros(p.params.size)

    m = p.params_per_subscan
    for i in range(cfg.n_subscans):
        back = cfg.projectors[i].backproject(res.blocks[i])
        amap = build_map(cfg.kind, p.block(i), p.center)
        a_i = alpha.block(i)
        if "x" in want or "alpha" in want:
            warped_back = warp_adjoint(
                amap, back.reshape(cfg.grid.shape)).reshape(-1)
            motion_term = warped_back - back
            if "x" in want:
                grads["x"] += back + a_i * motion_term
            if "alpha" in want:
                grads["alpha"][i * n_pix:(i + 1) * n_pix] = \
                    x.data * motion_term
        if "p" in want:
            cols = warp_param_grad(cfg.kind, p.block(i), p.center,
                                   (a_i * x.data).reshape(cfg.grid.shape))
            grads["p"][i * m:(i + 1) * m] = cols @ back
    return value, grads


def grad_x(cfg: ModelConfig, x: Image, alpha: MaskStack, p: MotionParams,
           b: Sinogram) -> np.ndarray:
    """Gradient of the objective in the image block (flat, length N)."""
    return objective_and_gradients(cfg, x, alpha, p, b, want=("x",))[1]["x"]


def grad_alpha(cfg: ModelConfig, x: Image, alpha: MaskStack, p: MotionParams,
               b: Sinogram) -> np.ndarray:
    """Gradient in the mask block (flat, length n_subscans * N)."""
    return objective_and_gradients(cfg, x, alpha, p, b,
                                   want=("alpha",))[1]["alpha"]


def grad_p(cfg: ModelConfig, x: Image, alpha: MaskStack, p: MotionParams,
           b: Sinogram) -> np.ndarray:
    """Gradient in the motion parameter block (flat, length n_subscans * M)."""
    return objective_and_gradients(cfg, x, alpha, p, b, want=("p",))[1]["p"]


@dataclass
class ProbeReport:
    """Midpoint-convexity measurements along one coordinate block."""

    free_block: str
    lambdas: np.ndarray
    violations: np.ndarray
    scale: float

    @property
    def max_violation(self) -> float:
        return float(self.violations.max(initial=0.0))

    @property
    def max_relative_violation(self) -> float:
        return self.max_violation / max(self.scale, np.finfo(float).tiny)


def restricted_quadratic_probe(cfg: ModelConfig, x: Image, alpha: MaskStack,
                               p: MotionParams, b: Sinogram, free_block: str,
                               end_a, end_b,
                               lambdas=(0.25, 0.5, 0.75)) -> ProbeReport:
    """Convexity probe of the objective restricted to one block.

    Evaluates f on the segment between two settings of the free block
    (holding the other blocks fixed) and reports the convexity violations
    f(mix) - [lam * f(a) + (1 - lam) * f(b)].  Along the image and mask
    blocks the restriction is a convex quadratic so violations stay at
    roundoff level; along the parameter block violations may be positive.
    """
    if free_block not in ("x", "alpha", "p"):
        raise DomainError(f"unknown block: {free_block!r}")
    end_a = np.asarray(end_a, dtype=np.float64).reshape(-1)
    end_b = np.asarray(end_b, dtype=np.float64).reshape(-1)

    def evaluate(v: np.ndarray) -> float:
        if free_block == "x":
            return objective(cfg, Image(geom=cfg.grid, data=v), alpha, p, b)
        if free_block == "alpha":
            stack = MaskStack(geom=cfg.grid, n_subscans=cfg.n_subscans, data=v)
            return objective(cfg, x, stack, p, b)
        return objective(cfg, x, alpha, p.with_params(v), b)

    f_a = evaluate(end_a)
    f_b = evaluate(end_b)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    violations = np.empty(lambdas.size)
    scale = max(abs(f_a), abs(f_b))
    for k, lam in enumerate(lambdas):
        f_mix = evaluate(lam * end_a + (1.0 - lam) * end_b)
        violations[k] = f_mix - (lam * f_a + (1.0 - lam) * f_b)
        scale = max(scale, abs(f_mix))
    return ProbeReport(free_block=free_block, lambdas=lambdas,
                       violations=violations, scale=scale)
