"""Initialization, iterative pose refinement and standardization.

A pose estimator is any callable ``estimator(slices, state) -> PoseEstimate``
that looks at the current center slices and proposes a rigid increment.  The
refinement state is passed along so test doubles and optimizers can see the
accumulated pose; a learned model would only use the slices.

Bookkeeping uses exact composition: after each step the accumulated
transform ``A`` and the residual ground truth ``G`` satisfy
``compose(A, G) == theta_gt``, and the output volume is always one
resampling of the original with ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import EstimatorError
from .geometry import (
    RigidTransform,
    compose,
    geodesic_angle_deg,
    invert,
    normalize_quat,
    random_perturbation,
    rotation_to_quat,
)
from .gradient import loss_and_gradient
from .sampler import apply_transform, sample_center_slices
from .volume import Volume

INIT_MAX_ANGLE = 20.0
INIT_MAX_TRANS = 0.05


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    q: np.ndarray
    t: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "q", normalize_quat(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def from_transform(cls, transform, info=None):
        return cls(rotation_to_quat(transform.rotation), transform.translation, info or {})

    @property
    def transform(self):
        return RigidTransform.from_quat(self.q, self.t)


@dataclass(frozen=True, eq=False)
class RefinementState:
    accumulated: RigidTransform
    residual_gt: RigidTransform | None = None
    iteration: int = 0
    history: tuple = ()


@dataclass(frozen=True)
class LossWeights:
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("beta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


def _record(state, gt, **extra):
    entry = {"iteration": state.iteration}
    if gt is not None:
        entry["so3_deg"] = geodesic_angle_deg(state.accumulated.rotation, gt.rotation)
        entry["trans_norm"] = float(np.linalg.norm(state.accumulated.translation - gt.translation))
    entry.update(extra)
    return entry


def initialize(volume, seed, gt=None, max_angle=INIT_MAX_ANGLE, max_trans=INIT_MAX_TRANS):
    """Random starting pose; the residual ground truth is tracked when ``gt`` is given."""
    accumulated = random_perturbation(seed, max_angle, max_trans)
    residual = compose(invert(accumulated), gt) if gt is not None else None
    state = RefinementState(accumulated, residual, 0)
    return RefinementState(accumulated, residual, 0, (_record(state, gt),))


def refine_step(state, estimator, volume, gt=None):
    """One estimator call plus exact accumulation of its increment."""
    slices = sample_center_slices(volume, state.accumulated)
    try:
        estimate = estimator(slices, state)
    except Exception as exc:
        raise EstimatorError(f"pose estimator failed at iteration {state.iteration + 1}: {exc}", state.iteration + 1) from exc
    step = estimate.transform
    accumulated = compose(state.accumulated, step)
    residual = compose(invert(step), state.residual_gt) if state.residual_gt is not None else None
    new = RefinementState(accumulated, residual, state.iteration + 1)
    entry = _record(new, gt, **{k: v for k, v in estimate.info.items() if np.isscalar(v)})
    return RefinementState(accumulated, residual, new.iteration, state.history + (entry,))


@dataclass(frozen=True, eq=False)
class StandardizeResult:
    volume: object
    slices: object
    transform: RigidTransform
    state: RefinementState

    def __iter__(self):
        return iter((self.volume, self.slices, self.transform))


def standardize(volume, estimator, n_iters=3, seed=0, gt=None, max_angle=INIT_MAX_ANGLE, max_trans=INIT_MAX_TRANS):
    """Initialize, refine ``n_iters`` times and resample the original volume once."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    state = initialize(volume, seed, gt, max_angle, max_trans)
    for _ in range(n_iters):
        state = refine_step(state, estimator, volume, gt)
    out = apply_transform(volume, state.accumulated)
    slices = sample_center_slices(volume, state.accumulated)
    return StandardizeResult(out, slices, state.accumulated, state)


class OracleEstimator:
    """Test double returning the current residual ground truth plus seeded noise.

    The noise for refinement step ``k`` is ``random_perturbation`` drawn from a
    generator seeded with ``(seed, k)``: Euler angles uniform in
    ``[-noise_deg, noise_deg]`` and translations in ``[-noise_trans, noise_trans]``.
    """

    name = "oracle"

    def __init__(self, gt, noise_deg=0.0, noise_trans=0.0, seed=0):
        if noise_deg < 0 or noise_trans < 0:
            raise ValueError("noise magnitudes must be non-negative")
        self.gt = gt
        self.noise_deg = float(noise_deg)
        self.noise_trans = float(noise_trans)
        self.seed = int(seed)

    def params(self):
        return {"noise_deg": self.noise_deg, "noise_trans": self.noise_trans, "seed": self.seed}

    def noise(self, iteration):
        rng = np.random.default_rng([self.seed, iteration])
        return random_perturbation(rng, self.noise_deg, self.noise_trans)

    def __call__(self, slices, state):
        residual = compose(invert(state.accumulated), self.gt)
        step = compose(residual, self.noise(state.iteration))
        return PoseEstimate.from_transform(step)


def oracle_estimator(gt, noise_deg=0.0, noise_trans=0.0, seed=0):
    return OracleEstimator(gt, noise_deg, noise_trans, seed)


class GradientDescentEstimator:
    """Pose increment from projected gradient descent on the image loss.

    Starting at the accumulated pose, ``(q, t)`` moves against the analytic
    gradient of the slice loss against ``target``; ``q`` is renormalized after
    every step.  With ``backtracking`` (default) a step that does not lower the
    loss is rejected and the step size halved, an accepted one grows it by
    ``growth``; the search ends when the step size drops below ``min_step``.
    Without backtracking every step is taken; ten consecutive iterates that
    raise the loss or sit above the starting loss, or a vanishing gradient while still worse (the
    slices have left the object), stop the search with ``diverged`` set in
    the estimate info.  The best iterate seen is returned either way.

    ``smoothing`` lists Gaussian widths in voxels, coarse to fine; each level
    blurs the volume (3-D) and the target slices (2-D) and starts from the
    previous level's result.  The coarse pass lets the search step over the
    shallow dips that intensity noise puts in the loss.  ``steps`` applies per
    level; a width of 0 means the original data.
    """

    name = "gradient-descent"

    def __init__(
        self,
        volume,
        target,
        steps=300,
        step_size=0.01,
        weights=None,
        backtracking=True,
        growth=1.5,
        min_step=1e-7,
        smoothing=(2.0, 0.0),
    ):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        smoothing = tuple(float(w) for w in smoothing)
        if not smoothing or any(not w >= 0 for w in smoothing):
            raise ValueError("smoothing needs at least one non-negative width")
        self.volume = volume
        self.target = target
        self.steps = int(steps)
        self.step_size = float(step_size)
        self.weights = weights or LossWeights()
        self.backtracking = backtracking
        self.growth = float(growth)
        self.min_step = float(min_step)
        self.smoothing = smoothing
        self._levels = [self._level(w) for w in smoothing]

    def params(self):
        return {
            "steps": self.steps,
            "step_size": self.step_size,
            "beta": self.weights.beta,
            "gamma": self.weights.gamma,
            "backtracking": self.backtracking,
            "growth": self.growth,
            "min_step": self.min_step,
            "smoothing": self.smoothing,
        }

    def _level(self, width):
        if width == 0:
            return self.volume, list(self.target)
        data = gaussian_filter(np.asarray(self.volume.data, dtype=float), width, mode="constant")
        target = [gaussian_filter(np.asarray(img, dtype=float), width, mode="constant") for img in self.target]
        return Volume(data, self.volume.spacing), target

    def _loss(self, level, q, t):
        volume, target = level
        return loss_and_gradient(volume, target, q, t, self.weights.beta, self.weights.gamma)

    def optimize(self, start):
        """Run every smoothing level from ``start``; returns ``(best_transform, info)``.

        ``info`` describes the finest level, except ``diverged`` which is set
        if any level diverged and ``steps`` which counts all levels.
        """
        current = start
        diverged = False
        steps = 0
        for level in self._levels:
            current, info = self._descend(level, current)
            diverged = diverged or info["diverged"]
            steps += info["steps"]
        info.update(diverged=diverged, steps=steps)
        return current, info

    def _descend(self, level, start):
        q = rotation_to_quat(start.rotation)
        t = start.translation.copy()
        loss, grad = self._loss(level, q, t)
        initial_loss = loss
        best = (loss, q, t)
        trace = [loss]
        eta = self.step_size
        increases = 0
        diverged = False
        steps_taken = 0
        for _ in range(self.steps):
            if not np.all(np.isfinite(grad)) or np.linalg.norm(grad) < 1e-12:
                diverged = not self.backtracking and loss > initial_loss
                break
            steps_taken += 1
            q_new = normalize_quat(q - eta * grad[:4])
            t_new = t - eta * grad[4:]
            loss_new, grad_new = self._loss(level, q_new, t_new)
            if not math.isfinite(loss_new):
                diverged = True
                break
            if self.backtracking:
                if loss_new < loss:
                    q, t, loss, grad = q_new, t_new, loss_new, grad_new
                    eta *= self.growth
                else:
                    eta *= 0.5
                    if eta < self.min_step:
                        break
            else:
                increases = increases + 1 if loss_new > min(loss, initial_loss) else 0
                q, t, loss, grad = q_new, t_new, loss_new, grad_new
                if increases >= 10:
                    diverged = True
                    break
            if loss < best[0]:
                best = (loss, q, t)
            trace.append(best[0])
        loss, q, t = best
        info = {
            "loss_initial": initial_loss,
            "loss": loss,
            "steps": steps_taken,
            "diverged": diverged,
            "trace": trace,
        }
        return RigidTransform.from_quat(q, t), info

    def __call__(self, slices, state=None):
        start = state.accumulated if state is not None else RigidTransform.identity()
        best, info = self.optimize(start)
        return PoseEstimate.from_transform(compose(invert(start), best), info)


def gradient_descent_estimator(volume, target, steps=300, step_size=0.01, weights=None, **kwargs):
    return GradientDescentEstimator(volume, target, steps, step_size, weights, **kwargs)
