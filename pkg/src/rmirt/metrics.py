"""Evaluation metrics against simulation ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, DomainError, Image, MaskStack, MotionParams


def mse(a: Image, b: Image) -> float:
    """Mean squared pixel difference."""
    if a.geom.shape != b.geom.shape:
        raise DimensionError("images live on different grids")
    d = a.data - b.data
    return float(np.mean(d * d))


def dice(est: MaskStack, ref: MaskStack) -> np.ndarray:
    """Per-subscan Dice overlap 2|A & B| / (|A| + |B|) of binary stacks.

    Two empty masks count as perfect agreement (value 1).
    """
    if est.geom.shape != ref.geom.shape or est.n_subscans != ref.n_subscans:
        raise DimensionError("mask stacks do not match")
    for name, stack in (("estimate", est), ("reference", ref)):
        vals = stack.data
        if vals.size and not np.all((vals == 0.0) | (vals == 1.0)):
            raise DomainError(f"dice requires a binary {name} mask stack")
    a = est.data.reshape(est.n_subscans, -1)
    b = ref.data.reshape(ref.n_subscans, -1)
    inter = (a * b).sum(axis=1)
    sizes = a.sum(axis=1) + b.sum(axis=1)
    return np.where(sizes > 0, 2.0 * inter / np.maximum(sizes, 1.0), 1.0)


def param_error(est: MotionParams, ref: MotionParams) -> np.ndarray:
    """Entrywise absolute difference, shaped (n_subscans, params per subscan)."""
    if est.kind is not ref.kind or est.n_subscans != ref.n_subscans:
        raise DimensionError("parameter layouts do not match")
    m = est.params_per_subscan
    return np.abs(est.params - ref.params).reshape(est.n_subscans, m)


@dataclass
class EvalReport:
    """Summary of one reconstruction against ground truth."""

    mse: float
    dice_per_subscan: np.ndarray
    param_abs_error: np.ndarray | None

    @property
    def dice_mean(self) -> float:
        return float(np.mean(self.dice_per_subscan))


def evaluate(x: Image, x_true: Image, mask: MaskStack, mask_true: MaskStack,
             params: MotionParams | None = None,
             params_true: MotionParams | None = None) -> EvalReport:
    """Bundle the standard metric set into one report."""
    perr = None
    if params is not None and params_true is not None:
        perr = param_error(params, params_true)
    return EvalReport(mse=mse(x, x_true),
                      dice_per_subscan=dice(mask, mask_true),
                      param_abs_error=perr)
