"""Gradient-ascent refinement of detections under the energy network.

Per detection: propose y + step * grad(f); accept only if the energy
strictly increases, otherwise halve-decay the step length and stay put.
The step length resets for every detection, scores pass through
unchanged, and there is no randomness, so outputs are a deterministic
function of the inputs.

Evaluation budget per detection (values cached across iterations): one
initial gradient pass, one energy evaluation per proposal, and one
gradient pass after each accepted step except in the final iteration --
at most T gradient passes and 2T forward passes for T iterations, zero
for T = 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .energynet import EnergyNetParams, box_grad_batch, forward_batch
from .errors import ConfigError, NumericError
from .featuregrid import FeatureGrid
from .geometry import Box3D
from .pooling import PoolConfig

logger = logging.getLogger(__name__)

# Box dimensions are clamped to this floor after refinement; Algorithm-style
# ascent has no projection step, the clamp only guards downstream geometry.
MIN_DIMENSION = 1e-3


@dataclass(frozen=True)
class RefineConfig:
    steps: int = 10  # gradient-ascent iterations (T)
    step_size: float = 2e-4  # initial step length (lambda)
    decay: float = 0.5  # step-length decay on rejection (eta)

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError(f"decay must be in (0, 1), got {self.decay}")


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float

    def __post_init__(self):
        if not 0.0 < self.score < 1.0:
            raise ValueError(f"score must be in (0, 1), got {self.score}")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    current_value: float
    proposal_value: float
    accepted: bool
    step_size: float


def refine_one(params: EnergyNetParams, grid: FeatureGrid, det: Detection,
               pool_cfg: PoolConfig, cfg: RefineConfig):
    """Refine a single detection; returns (refined detection, trace rows)."""
    if cfg.steps == 0:
        return det, []
    y = det.box.as_array()
    lam = cfg.step_size
    try:
        values, grads = box_grad_batch(params, grid, y[None, :], pool_cfg)
    except NumericError as exc:
        raise NumericError(str(exc), where="iteration 0") from exc
    val, grad = float(values[0]), grads[0]
    trace: list[TraceRow] = []
    for t in range(cfg.steps):
        prop = y + lam * grad
        try:
            pval = float(forward_batch(params, grid, prop[None, :], pool_cfg)[0][0])
        except NumericError as exc:
            raise NumericError(str(exc), where=f"iteration {t}") from exc
        accepted = pval > val
        trace.append(TraceRow(t, val, pval, accepted, lam))
        if accepted:
            y = prop
            val = pval
            if t < cfg.steps - 1:
                _, grads = box_grad_batch(params, grid, y[None, :], pool_cfg)
                grad = grads[0]
        else:
            lam *= cfg.decay
    dims = y[3:6]
    if np.any(dims < MIN_DIMENSION):
        logger.warning("refinement produced box dimensions below %g m; clamping", MIN_DIMENSION)
        y = y.copy()
        y[3:6] = np.maximum(dims, MIN_DIMENSION)
    return Detection(box=Box3D.from_array(y), score=det.score), trace


def refine_all(params: EnergyNetParams, grid: FeatureGrid, dets, pool_cfg: PoolConfig,
               cfg: RefineConfig):
    """Refine each detection independently; order preserved.

    Returns (list of refined detections, list of per-detection traces).
    """
    refined = []
    traces = []
    for det in dets:
        out, trace = refine_one(params, grid, det, pool_cfg, cfg)
        refined.append(out)
        traces.append(trace)
    return refined, traces
