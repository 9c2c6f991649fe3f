"""Shared builders for the test suite.

The tiny instance (8 x 8 grid, 2 subscans, 4 angles each, 12 detectors)
is small enough for dense-matrix and finite-difference comparisons while
still exercising every code path.
"""

from __future__ import annotations

import numpy as np
import pytest

from rmirt.core import (GridGeom, Image, MaskStack, MotionParams, ProjGeom,
                        Sinogram, identity_params)
from rmirt.model import ModelConfig


def grid_center(grid: GridGeom) -> tuple[float, float]:
    return ((grid.height - 1) / 2.0, (grid.width - 1) / 2.0)


def tiny_config(kind: str = "scale2", n_angles: int = 8, n_subscans: int = 2,
                side: int = 8, n_detectors: int = 12) -> ModelConfig:
    grid = GridGeom(side, side, 1.0)
    proj = ProjGeom.equal_subscans(n_angles, n_subscans, n_detectors)
    return ModelConfig(grid=grid, proj_geom=proj, kind=kind)


def random_state(cfg: ModelConfig, seed: int = 0, p_spread: float = 0.05):
    """In-domain random (x, alpha, p) triple for a model configuration."""
    rng = np.random.default_rng(seed)
    x = Image(geom=cfg.grid, data=rng.uniform(0.0, 1.0, cfg.grid.n_pixels))
    alpha = MaskStack(
        geom=cfg.grid, n_subscans=cfg.n_subscans,
        data=rng.uniform(0.0, 1.0, cfg.grid.n_pixels * cfg.n_subscans))
    base = identity_params(cfg.kind, cfg.n_subscans)
    p = MotionParams(kind=cfg.kind, n_subscans=cfg.n_subscans,
                     params=base + rng.uniform(-p_spread, p_spread, base.size),
                     center=grid_center(cfg.grid))
    return x, alpha, p


def random_data(cfg: ModelConfig, seed: int = 1) -> Sinogram:
    rng = np.random.default_rng(seed)
    return Sinogram(geom=cfg.proj_geom,
                    data=rng.uniform(0.0, 2.0, cfg.proj_geom.n_bins))


@pytest.fixture(scope="session")
def cfg_scale() -> ModelConfig:
    return tiny_config("scale2")


@pytest.fixture(scope="session")
def cfg_srt() -> ModelConfig:
    return tiny_config("scale_rot_trans")


@pytest.fixture(scope="session", params=["scale2", "scale_rot_trans"])
def cfg_any(request) -> ModelConfig:
    return tiny_config(request.param)
