"""Joint solver for image, region masks and motion parameters.

Each iteration takes one projected gradient step per unfrozen block, by
default with all gradients evaluated at the iteration's starting point
(Jacobi ordering; a Gauss-Seidel toggle re-evaluates between steps).  The
image and motion blocks use Barzilai-Borwein stepsizes with clamping; the
mask block uses the decaying schedule c/(i+1) and stays continuous in
[0, 1] during optimization.  Masks are binarized only for the
center-of-motion update and for the returned result.

Stepsize safeguards: the image-block clamp floor defaults to the inverse
of a power-iteration estimate of the projector normal-operator norm.
That floor is orders of magnitude too large for the parameter block, so
the parameter step is clamped instead to the inverse of the exact (tiny,
per-subscan) Gauss-Newton curvature of the parameter block, recomputed
every iteration because it tracks the evolving image and masks.  The
mask gradient is identically zero while the motion sits at identity, so
the default mask constant c is calibrated on the first iteration whose
mask gradient is nonzero; by then the motion block has taken at least
one curvature-scaled step and the gradient has a representative size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, model
from .core import DomainError, Image, MaskStack, MotionParams
from .projector import normal_operator_norm

_BLOCKS = ("x", "p", "alpha")

#: parameter-block stepsize clamps relative to the inverse curvature
_P_CLAMP_LO = 1.0
_P_CLAMP_HI = 1e2


class DivergenceError(RuntimeError):
    """Solver left the representable region (non-finite or invalid state)."""

    def __init__(self, block: str, iteration: int, detail: str = ""):
        self.block = block
        self.iteration = iteration
        msg = f"divergence in block {block!r} at iteration {iteration}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass
class SolverOptions:
    """Knobs for :func:`run`; defaults reproduce the standard behaviour.

    ``bb_min``/``bb_max`` clamp the image-block stepsize (both default to
    values derived from a power-iteration norm estimate).
    ``alpha_step_scale`` is the constant c in the mask stepsize schedule
    c/(i+1); when None, c is calibrated once, at the first iteration
    whose mask gradient is nonzero, so that this first step has max-norm
    0.25.
    """

    n_iter: int = 30
    bb_min: float | None = None
    bb_max: float | None = None
    alpha_step_scale: float | None = None
    tie_masks: bool = False
    threshold: float = 0.5
    update_center: bool = True
    freeze: frozenset = frozenset()
    gauss_seidel: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise DomainError("n_iter must be >= 1")
        self.freeze = frozenset(self.freeze)
        unknown = self.freeze - set(_BLOCKS)
        if unknown:
            raise DomainError(f"unknown freeze blocks: {sorted(unknown)}")
        if self.bb_min is not None and self.bb_min <= 0:
            raise DomainError("bb_min must be positive")
        if self.bb_min is not None and self.bb_max is not None \
                and self.bb_max < self.bb_min:
            raise DomainError("bb_max must be >= bb_min")
        if not (0.0 < self.threshold < 1.0):
            raise DomainError("threshold must lie strictly inside (0, 1)")
        if self.alpha_step_scale is not None and self.alpha_step_scale <= 0:
            raise DomainError("alpha_step_scale must be positive")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    mse: float
    dice_mean: float
    step_x: float
    step_p: float
    step_alpha: float
    center_row: float
    center_col: float
    grad_norm_x: float
    grad_norm_alpha: float
    grad_norm_p: float


@dataclass
class SolverTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class SolverResult:
    x: Image
    mask: MaskStack
    params: MotionParams
    alpha: MaskStack
    center: tuple[float, float]
    trace: SolverTrace


def project_box(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit box [0, 1] per entry."""
    return np.clip(v, 0.0, 1.0)


def project_binary(v: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Round to {0, 1}; values equal to the threshold round up to 1."""
    return np.where(np.asarray(v) >= threshold, 1.0, 0.0)


def bb_stepsize(delta_var: np.ndarray, delta_grad: np.ndarray,
                bb_min: float, bb_max: float) -> float:
    """Clamped Barzilai-Borwein quotient <dv, dg> / <dg, dg>.

    The result is clamped to [bb_min, bb_max].  A quotient that is
    non-finite or non-positive carries no usable curvature information
    (the latter happens routinely on the non-convex motion block, and on
    any block when the other blocks moved in between); in that case
    ``bb_min`` is returned.
    """
    den = float(np.dot(delta_grad, delta_grad))
    if not (np.isfinite(den) and den > 0.0):
        return float(bb_min)
    ratio = float(np.dot(delta_var, delta_grad)) / den
    if not np.isfinite(ratio):
        return float(bb_min)
    return float(min(max(ratio, bb_min), bb_max))


def update_center(binary_alpha: MaskStack,
                  previous: tuple[float, float]) -> tuple[float, float]:
    """Center of motion read off a binarized mask stack.

    The row is the largest row index with a nonzero pixel in the union of
    the subscan masks (the seam between the moving region and the static
    remainder); the column is the grid's horizontal center.  An empty
    union keeps the previous center.
    """
    vals = binary_alpha.data
    if vals.size and not np.all((vals == 0.0) | (vals == 1.0)):
        raise DomainError("center update requires a binary mask stack")
    union = binary_alpha.data.reshape(binary_alpha.n_subscans, -1).max(axis=0)
    rows = union.reshape(binary_alpha.geom.shape).max(axis=1)
    nz = np.flatnonzero(rows)
    if nz.size == 0:
        return (float(previous[0]), float(previous[1]))
    return (float(nz[-1]), 0.5 * (binary_alpha.geom.width - 1))


def _p_curvature(cfg, x, alpha, p) -> np.ndarray:
    """Per-subscan largest Gauss-Newton eigenvalue of the parameter block.

    The objective is separable across subscans in the motion parameters
    (subscan i's residual depends only on p_i), so each subscan gets its
    own curvature estimate.  Entries are 0 where the masked image is
    empty and the parameters have no effect.
    """
    from .warp import warp_param_grad

    out = np.zeros(cfg.n_subscans)
    shape = cfg.grid.shape
    for i in range(cfg.n_subscans):
        cols = warp_param_grad(cfg.kind, p.block(i), p.center,
                               (alpha.block(i) * x.data).reshape(shape))
        jac = np.stack([cfg.projectors[i].project(c.reshape(shape)).reshape(-1)
                        for c in cols])
        gram = jac @ jac.T
        out[i] = float(np.linalg.eigvalsh(gram).max())
    return out


def _finite_or_raise(value, grads, iteration):
    if not np.isfinite(value):
        raise DivergenceError("objective", iteration, f"value {value!r}")
    for block, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(block, iteration, "non-finite gradient")


def run(cfg: model.ModelConfig, b, init, opts: SolverOptions,
        x_true: Image | None = None,
        mask_true: MaskStack | None = None) -> SolverResult:
    """Minimize the joint objective from a (x0, alpha0, p0) starting point.

    ``init`` is a (Image, MaskStack, MotionParams) triple.  Frozen blocks
    keep their initial value.  Per-iteration diagnostics land in the
    returned trace; mse and dice columns are NaN without ground truth.
    """
    x0, alpha0, p0 = init
    model._check_inputs(cfg, x0, alpha0, p0)  # fail fast on bad init

    x = x0.data.copy()
    alpha = alpha0.data.copy()
    p = MotionParams(kind=p0.kind, n_subscans=p0.n_subscans,
                     params=p0.params.copy(), center=p0.center)
    free = [blk for blk in _BLOCKS if blk not in opts.freeze]

    if opts.update_center:
        binary = MaskStack(geom=cfg.grid, n_subscans=cfg.n_subscans,
                           data=project_binary(alpha, opts.threshold))
        p = p.with_center(update_center(binary, p.center))

    if opts.bb_min is None or opts.bb_max is None:
        lam = normal_operator_norm(cfg.projectors, cfg.grid)
        if lam <= 0.0:
            raise DomainError("projector normal operator has zero norm")
        x_lo = opts.bb_min if opts.bb_min is not None else 1.0 / lam
        x_hi = opts.bb_max if opts.bb_max is not None else 1e4 * x_lo
    else:
        x_lo, x_hi = opts.bb_min, opts.bb_max
    if x_hi < x_lo:
        raise DomainError("bb_max must be >= bb_min")

    def wrap_state():
        return (Image(geom=cfg.grid, data=x),
                MaskStack(geom=cfg.grid, n_subscans=cfg.n_subscans, data=alpha))

    alpha_c = opts.alpha_step_scale  # calibrated lazily when None
    prev: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    trace = SolverTrace()

    for it in range(opts.n_iter):
        steps = {"x": 0.0, "alpha": 0.0, "p": 0.0}
        norms = {"x": np.nan, "alpha": np.nan, "p": np.nan}
        new = {}
        value = None

        # gradient evaluation, either all at once or interleaved
        for stage in (free if opts.gauss_seidel else [None]):
            want = (stage,) if opts.gauss_seidel else tuple(free)
            x_img, a_stack = wrap_state()
            try:
                val, grads = model.objective_and_gradients(
                    cfg, x_img, a_stack, p, b, want=want)
            except DomainError as exc:
                raise DivergenceError("p", it, str(exc)) from exc
            _finite_or_raise(val, grads, it)
            if value is None:
                value = val

            if "x" in grads:
                g = grads["x"]
                norms["x"] = float(np.linalg.norm(g))
                if "x" in prev:
                    gamma = bb_stepsize(x - prev["x"][0], g - prev["x"][1],
                                        x_lo, x_hi)
                else:
                    gamma = x_lo
                new["x"] = (project_box(x - gamma * g), g, gamma)
                steps["x"] = gamma
            if "p" in grads:
                g = grads["p"]
                norms["p"] = float(np.linalg.norm(g))
                x_img2, a_stack2 = wrap_state()
                curv = _p_curvature(cfg, x_img2, a_stack2, p)
                m = p.params_per_subscan
                gv = g.reshape(cfg.n_subscans, m)
                pv = p.params.reshape(cfg.n_subscans, m)
                gammas = np.zeros(cfg.n_subscans)
                for i in range(cfg.n_subscans):
                    if curv[i] <= 0.0:
                        continue  # nothing to move yet (e.g. zero image)
                    if "p" in prev:
                        dv = pv[i] - prev["p"][0].reshape(cfg.n_subscans, m)[i]
                        dg = gv[i] - prev["p"][1].reshape(cfg.n_subscans, m)[i]
                        gammas[i] = bb_stepsize(dv, dg, _P_CLAMP_LO / curv[i],
                                                _P_CLAMP_HI / curv[i])
                    else:
                        gammas[i] = _P_CLAMP_LO / curv[i]
                    # halve the step until the scale entries stay positive
                    for _ in range(60):
                        cand_i = pv[i] - gammas[i] * gv[i]
                        if np.all(cand_i[:2] > 0.0):
                            break
                        gammas[i] *= 0.5
                cand = (pv - gammas[:, None] * gv).reshape(-1)
                new["p"] = (cand, g, gammas)
                steps["p"] = float(gammas.max(initial=0.0))
            if "alpha" in grads:
                g = grads["alpha"]
                if opts.tie_masks:
                    shared = g.reshape(cfg.n_subscans, -1).sum(axis=0)
                    g = np.tile(shared, cfg.n_subscans)
                norms["alpha"] = float(np.linalg.norm(g))
                if alpha_c is None:
                    # the mask gradient is identically zero while the
                    # motion sits at identity; calibrate c on the first
                    # usable gradient so that step gets max-norm 0.25
                    inf_norm = float(np.abs(g).max(initial=0.0))
                    if inf_norm > 0.0:
                        alpha_c = 0.25 * (it + 1) / inf_norm
                gamma = 0.0 if alpha_c is None else alpha_c / (it + 1)
                new["alpha"] = (project_box(alpha - gamma * g), g, gamma)
                steps["alpha"] = gamma

            if opts.gauss_seidel:
                # commit this block before evaluating the next gradient
                if stage in new:
                    upd, g, gamma = new.pop(stage)
                    if stage == "x":
                        prev["x"] = (x.copy(), g)
                        x = upd
                    elif stage == "p":
                        prev["p"] = (p.params.copy(), g)
                        p = p.with_params(upd)
                    else:
                        prev["alpha"] = (alpha.copy(), g)
                        alpha = upd

        if not opts.gauss_seidel:
            if "x" in new:
                upd, g, _ = new["x"]
                prev["x"] = (x.copy(), g)
                x = upd
            if "p" in new:
                upd, g, _ = new["p"]
                prev["p"] = (p.params.copy(), g)
                p = p.with_params(upd)
            if "alpha" in new:
                upd, g, _ = new["alpha"]
                prev["alpha"] = (alpha.copy(), g)
                alpha = upd

        blocks = p.params.reshape(cfg.n_subscans, -1)
        if np.any(blocks[:, :2] <= 0.0):
            raise DivergenceError("p", it, "non-positive scale")

        binary = MaskStack(geom=cfg.grid, n_subscans=cfg.n_subscans,
                           data=project_binary(alpha, opts.threshold))
        if opts.update_center:
            p = p.with_center(update_center(binary, p.center))

        mse_val = np.nan
        dice_val = np.nan
        if x_true is not None:
            mse_val = metrics.mse(Image(geom=cfg.grid, data=x), x_true)
        if mask_true is not None:
            dice_val = float(np.mean(metrics.dice(binary, mask_true)))
        trace.records.append(IterationRecord(
            iteration=it, objective=float(value), mse=float(mse_val),
            dice_mean=float(dice_val), step_x=steps["x"], step_p=steps["p"],
            step_alpha=steps["alpha"], center_row=p.center[0],
            center_col=p.center[1], grad_norm_x=norms["x"],
            grad_norm_alpha=norms["alpha"], grad_norm_p=norms["p"]))

    final_alpha = MaskStack(geom=cfg.grid, n_subscans=cfg.n_subscans,
                            data=alpha)
    final_mask = MaskStack(geom=cfg.grid, n_subscans=cfg.n_subscans,
                           data=project_binary(alpha, opts.threshold))
    return SolverResult(x=Image(geom=cfg.grid, data=x), mask=final_mask,
                        params=p, alpha=final_alpha, center=p.center,
                        trace=trace)
