"""
lifting_loss.py
Metric corner loss, its analytic gradient through the lifting map, the
separate-term baselines and the controlled lifting optimisation.

Gradient blocks are reported in the raw parametrisation of LiftParams:
q (tangent-projected), (u, v) in pixels, z in meters and the three extent
deviations. The optimiser itself steps in RoI-normalised (u, v), log z and
the quaternion tangent.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from src.core.camera_geometry import (
    CORNER_SIGNS,
    Box3D,
    CameraIntrinsics,
    ExtentStats,
    LiftParams,
    Quaternion,
    Rect,
    lift,
    params_from_box,
    project_box,
)
from src.core.errors import DivergenceError, GeometryDomainError
from src.core.tools import quaternion as qt

logger = logging.getLogger(__name__)

TERM_NAMES = ("rotation", "centroid", "depth", "extent")
COMPONENTS = ("q", "uv", "z", "whl")
PARAM_NAMES = ("qw", "qx", "qy", "qz", "u", "v", "z", "dw", "dh", "dl")


# ==========================
# Corner loss
# ==========================

def corner_loss(pred: Box3D, target: Box3D) -> float:
    return float(np.linalg.norm(pred.corners - target.corners, axis=1).mean())


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    grad_q: np.ndarray
    grad_uv: np.ndarray
    grad_z: float
    grad_whl: np.ndarray

    @property
    def magnitudes(self) -> Dict[str, float]:
        return {
            "q": float(np.linalg.norm(self.grad_q)),
            "uv": float(np.linalg.norm(self.grad_uv)),
            "z": abs(float(self.grad_z)),
            "whl": float(np.linalg.norm(self.grad_whl)),
        }

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.grad_q, self.grad_uv, [self.grad_z], self.grad_whl])


def _corners_and_grad(
    x: np.ndarray, target: np.ndarray, stats: ExtentStats, K: CameraIntrinsics, *, with_grad: bool = True
) -> Tuple[float, Optional[np.ndarray]]:
    q_raw = np.asarray(x[:4], dtype=float)
    q_norm = float(np.linalg.norm(q_raw))
    if q_norm <= 0:
        raise GeometryDomainError("Zero quaternion")
    q = q_raw / q_norm
    u, v, z = float(x[4]), float(x[5]), float(x[6])
    if not z > 0:
        raise GeometryDomainError(f"Depth must be positive, got {z}")

    d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    d_norm = float(np.linalg.norm(d))
    r = d / d_norm
    t = z * d

    r_view = qt.view_matrix(r)
    r_allo = qt.quat_to_matrix(q)
    rot = r_view @ r_allo

    extents = stats.mean + np.asarray(x[7:10], dtype=float) * stats.std
    if np.any(extents <= 0):
        raise GeometryDomainError(f"Degenerate extents after deviation resolution: {extents}")
    offsets = CORNER_SIGNS * (extents / 2.0)
    corners = offsets @ rot.T + t

    diff = corners - target
    dists = np.linalg.norm(diff, axis=1)
    total = float(dists.mean())
    if not with_grad:
        return total, None

    # subgradient 0 where a corner already coincides
    safe = np.where(dists > 0, dists, 1.0)
    g = np.where(dists[:, None] > 0, diff / safe[:, None], 0.0) / 8.0

    g_t = g.sum(axis=0)
    dl_drot = g.T @ offsets

    dl_dallo = r_view.T @ dl_drot
    grad_q = np.einsum("ab,jab->j", dl_dallo, qt.quat_matrix_partials(q))
    grad_q = (grad_q - (grad_q @ q) * q) / q_norm

    dl_dview = dl_drot @ r_allo.T
    g_r = np.einsum("ab,jab->j", dl_dview, qt.view_matrix_partials(r))
    g_d = (g_r - (g_r @ r) * r) / d_norm

    grad_u = (g_t[0] * z + g_d[0]) / K.fx
    grad_v = (g_t[1] * z + g_d[1]) / K.fy
    grad_z = float(g_t @ d)
    grad_dev = stats.std * ((g @ rot) * CORNER_SIGNS).sum(axis=0) / 2.0

    grad = np.concatenate([grad_q, [grad_u, grad_v, grad_z], grad_dev])
    return total, grad


def corner_loss_grad(
    params: LiftParams, target: Box3D, stats: ExtentStats, K: CameraIntrinsics
) -> LossBreakdown:
    total, grad = _corners_and_grad(params.to_vector(), target.corners, stats, K)
    return LossBreakdown(
        total=total,
        grad_q=grad[:4],
        grad_uv=grad[4:6],
        grad_z=float(grad[6]),
        grad_whl=grad[7:10],
    )


def corner_loss_at(x: np.ndarray, target: Box3D, stats: ExtentStats, K: CameraIntrinsics) -> float:
    """Corner loss for a raw 10-vector; the quaternion part need not be unit."""
    return _corners_and_grad(x, target.corners, stats, K, with_grad=False)[0]


# ==========================
# Finite-difference check
# ==========================

def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[i] += step
        lo[i] -= step
        out[i] = (fn(hi) - fn(lo)) / (2.0 * step)
    return out


def random_instance(
    rng: np.random.Generator, stats: ExtentStats, K: CameraIntrinsics, *, width: int = 1242, height: int = 375
) -> Tuple[LiftParams, Box3D]:
    """A random lifting problem: parameters and an independently drawn target box."""

    def draw() -> LiftParams:
        q = rng.normal(size=4)
        return LiftParams(
            q_allo=Quaternion.from_array(q / np.linalg.norm(q)),
            u=float(rng.uniform(0, width)),
            v=float(rng.uniform(0, height)),
            z=float(rng.uniform(5, 60)),
            dw=float(rng.uniform(-2, 2)),
            dh=float(rng.uniform(-2, 2)),
            dl=float(rng.uniform(-2, 2)),
        )

    params = draw()
    target = lift(draw(), stats, K)
    return params, target


@dataclass(frozen=True)
class GradientCheckReport:
    instances: int
    max_rel_error: float
    worst_instance: int


def check_gradients(
    stats: ExtentStats,
    K: CameraIntrinsics,
    n: int = 1000,
    seed: int = 0,
    step: float = 1e-5,
    floor: float = 1e-2,
) -> GradientCheckReport:
    """Compare analytic and central-difference gradients on random instances.

    Relative error is taken against max(|numeric|, floor) per entry.
    """
    rng = np.random.default_rng(seed)
    worst, worst_idx = 0.0, -1
    for i in range(n):
        params, target = random_instance(rng, stats, K)
        analytic = corner_loss_grad(params, target, stats, K).as_vector()
        numeric = numeric_gradient(lambda x: corner_loss_at(x, target, stats, K), params.to_vector(), step)
        rel = float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)))
        if rel > worst:
            worst, worst_idx = rel, i
    return GradientCheckReport(instances=n, max_rel_error=worst, worst_instance=worst_idx)


# ==========================
# Separate-term baselines
# ==========================

@dataclass(frozen=True)
class WeightingScheme:
    variant: Literal["uniform", "kendall"] = "uniform"
    log_vars: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in ("uniform", "kendall"):
            raise GeometryDomainError(f"Unknown weighting variant: {self.variant}")
        if not all(math.isfinite(s) for s in self.log_vars.values()):
            raise GeometryDomainError("Kendall log-variances must be finite")

    def log_var(self, term: str) -> float:
        return float(self.log_vars.get(term, 0.0))

    def weight(self, term: str) -> float:
        return 1.0 if self.variant == "uniform" else math.exp(-self.log_var(term))


@dataclass(frozen=True)
class SeparateTermLoss:
    total: float
    terms: Dict[str, float]


def _quat_residual(q: np.ndarray, q_star: np.ndarray) -> np.ndarray:
    minus, plus = q - q_star, q + q_star
    return minus if np.linalg.norm(minus) <= np.linalg.norm(plus) else plus


def separate_terms(
    params: LiftParams, target_params: LiftParams, roi: Rect, *, include_shape: bool = False
) -> Dict[str, float]:
    roi_w, roi_h = _roi_size(roi)
    q = params.q_allo.normalized().as_array()
    q_star = target_params.q_allo.normalized().as_array()
    terms = {
        "rotation": float(np.linalg.norm(_quat_residual(q, q_star))),
        "centroid": abs(params.u - target_params.u) / roi_w + abs(params.v - target_params.v) / roi_h,
        "depth": abs(params.z - target_params.z),
        "extent": float(np.abs(params.deviations - target_params.deviations).sum()),
    }
    if include_shape:
        from src.core.shape_space import shape_loss

        terms["shape"] = shape_loss(params.s, target_params.s)
    return terms


def separate_term_loss(
    params: LiftParams,
    target_params: LiftParams,
    scheme: WeightingScheme,
    roi: Rect,
    *,
    include_shape: bool = False,
) -> SeparateTermLoss:
    terms = separate_terms(params, target_params, roi, include_shape=include_shape)
    if scheme.variant == "uniform":
        total = sum(terms.values())
    else:
        total = sum(scheme.weight(k) * v + scheme.log_var(k) for k, v in terms.items())
    return SeparateTermLoss(total=float(total), terms=terms)


def kendall_log_variance_grad(terms: Dict[str, float], scheme: WeightingScheme) -> Dict[str, float]:
    """d/ds_i of exp(-s_i) * L_i + s_i."""
    return {k: 1.0 - math.exp(-scheme.log_var(k)) * v for k, v in terms.items()}


def separate_term_grad(
    params: LiftParams, target_params: LiftParams, scheme: WeightingScheme, roi: Rect
) -> np.ndarray:
    """Subgradient of the four-term loss in the raw 10-vector layout."""
    roi_w, roi_h = _roi_size(roi)
    q = params.q_allo.normalized().as_array()
    residual = _quat_residual(q, target_params.q_allo.normalized().as_array())
    n = np.linalg.norm(residual)
    g_q = residual / n if n > 0 else np.zeros(4)
    g_q = g_q - (g_q @ q) * q

    grad = np.concatenate(
        [
            scheme.weight("rotation") * g_q,
            scheme.weight("centroid")
            * np.array([np.sign(params.u - target_params.u) / roi_w, np.sign(params.v - target_params.v) / roi_h]),
            [scheme.weight("depth") * np.sign(params.z - target_params.z)],
            scheme.weight("extent") * np.sign(params.deviations - target_params.deviations),
        ]
    )
    return grad


def _roi_size(roi: Rect) -> Tuple[float, float]:
    left, top, right, bottom = roi
    if right <= left or bottom <= top:
        raise GeometryDomainError(f"Degenerate RoI {roi}")
    return right - left, bottom - top


# ==========================
# Controlled optimisation
# ==========================

@dataclass(frozen=True)
class OptimConfig:
    iterations: int = 2000
    step: float = 1e-2
    quat_step: float = 1e-2
    momentum: float = 0.9
    warmup_steps: int = 500
    scheme: WeightingScheme = field(default_factory=WeightingScheme)
    divergence_limit: float = 1e6
    early_stop_loss: Optional[float] = None
    # step halves and momentum resets whenever a step would raise the active loss
    safeguard: bool = True
    backoff: float = 0.5
    growth: float = 1.05


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    phase: Literal["warmup", "corner"]
    loss: float
    objective: float
    magnitudes: Dict[str, float]
    params: np.ndarray


@dataclass
class OptimTrace:
    records: List[TraceRecord] = field(default_factory=list)
    warmup_steps: int = 0
    diverged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else math.inf

    def magnitude_matrix(self) -> np.ndarray:
        return np.array([[r.magnitudes[c] for c in COMPONENTS] for r in self.records]).reshape(-1, len(COMPONENTS))


class _Parametrisation:
    """Maps LiftParams to the optimiser's coordinates and back."""

    def __init__(self, roi: Rect, s: np.ndarray):
        self.roi_w, self.roi_h = _roi_size(roi)
        self.s = s

    def encode(self, p: LiftParams) -> np.ndarray:
        x = p.to_vector()
        return np.concatenate([x[:4], [x[4] / self.roi_w, x[5] / self.roi_h, math.log(x[6])], x[7:]])

    def decode(self, y: np.ndarray) -> LiftParams:
        q = qt.quat_normalize(y[:4])
        x = np.concatenate([q, [y[4] * self.roi_w, y[5] * self.roi_h, math.exp(y[6])], y[7:]])
        return LiftParams.from_vector(x, s=self.s)

    def pull_back(self, grad: np.ndarray, p: LiftParams) -> np.ndarray:
        out = grad.copy()
        out[4] *= self.roi_w
        out[5] *= self.roi_h
        out[6] *= p.z
        return out


def optimize_instance(
    init: LiftParams,
    target: Box3D,
    stats: ExtentStats,
    K: CameraIntrinsics,
    config: OptimConfig = OptimConfig(),
    *,
    roi: Optional[Rect] = None,
) -> OptimTrace:
    """Momentum descent on the corner loss, after an optional separate-term warm-up.

    The quaternion is renormalised after every step. Raises DivergenceError
    carrying the partial trace when the corner loss exceeds the divergence limit.
    """
    roi = roi if roi is not None else project_box(target, K)
    param = _Parametrisation(roi, init.s)
    target_params = params_from_box(target, stats, K, s=init.s) if config.warmup_steps > 0 else None

    steps = np.array([config.quat_step] * 4 + [config.step] * 6)
    trace = OptimTrace(warmup_steps=min(config.warmup_steps, config.iterations))

    def objective(p: LiftParams, phase: str) -> float:
        if phase == "warmup":
            return separate_term_loss(p, target_params, config.scheme, roi).total
        return corner_loss_at(p.to_vector(), target, stats, K)

    y = param.encode(init)
    params = init
    velocity = np.zeros_like(y)
    scale = 1.0
    phase = None

    for it in range(config.iterations):
        new_phase = "warmup" if it < config.warmup_steps else "corner"
        if new_phase != phase:
            phase, velocity, scale = new_phase, np.zeros_like(y), 1.0

        breakdown = corner_loss_grad(params, target, stats, K)
        if not math.isfinite(breakdown.total) or breakdown.total > config.divergence_limit:
            trace.diverged = True
            raise DivergenceError(
                f"Corner loss {breakdown.total:.3g} exceeded {config.divergence_limit:.3g} at iteration {it}",
                trace=trace,
            )

        if phase == "warmup":
            grad_raw = separate_term_grad(params, target_params, config.scheme, roi)
            current = objective(params, phase)
        else:
            grad_raw = breakdown.as_vector()
            current = breakdown.total

        trace.records.append(
            TraceRecord(
                iteration=it,
                phase=phase,
                loss=breakdown.total,
                objective=current,
                magnitudes=breakdown.magnitudes,
                params=params.to_vector(),
            )
        )
        if phase == "corner" and config.early_stop_loss is not None and breakdown.total < config.early_stop_loss:
            break

        grad = param.pull_back(grad_raw, params)
        candidate_velocity = config.momentum * velocity - scale * steps * grad
        candidate_y = y + candidate_velocity
        candidate_y[:4] = qt.quat_normalize(candidate_y[:4])
        candidate = param.decode(candidate_y)

        if config.safeguard and objective(candidate, phase) > current:
            velocity = np.zeros_like(y)
            scale *= config.backoff
            continue

        y, params, velocity = candidate_y, candidate, candidate_velocity
        if config.safeguard:
            scale = min(1.0, scale * config.growth)

    return trace


def mean_trace(traces: Sequence[OptimTrace]) -> np.ndarray:
    """Per-iteration mean of (loss, |q|, |uv|, |z|, |whl|) over runs; shorter runs drop out."""
    if not traces:
        return np.zeros((0, 1 + len(COMPONENTS)))
    length = max(len(t) for t in traces)
    stacked = np.full((len(traces), length, 1 + len(COMPONENTS)), np.nan)
    for i, t in enumerate(traces):
        if len(t):
            stacked[i, : len(t), 0] = t.losses
            stacked[i, : len(t), 1:] = t.magnitude_matrix()
    return np.nanmean(stacked, axis=0)


# ==========================
# Convergence study
# ==========================

def perturb_params(
    rng: np.random.Generator,
    params: LiftParams,
    roi: Rect,
    *,
    rotation_deg: float = 20.0,
    centroid_roi: float = 0.3,
    depth_frac: float = 0.3,
) -> LiftParams:
    roi_w, roi_h = _roi_size(roi)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(-rotation_deg, rotation_deg))
    delta = Quaternion.from_array(qt.quat_from_rotvec(axis * angle))
    return replace(
        params,
        q_allo=(delta * params.q_allo).normalized(),
        u=params.u + rng.uniform(-centroid_roi, centroid_roi) * roi_w,
        v=params.v + rng.uniform(-centroid_roi, centroid_roi) * roi_h,
        z=params.z * (1.0 + rng.uniform(-depth_frac, depth_frac)),
    )


@dataclass(frozen=True)
class ConvergenceReport:
    success_rate: float
    final_losses: np.ndarray
    diverged: int
    traces: List[OptimTrace]


def convergence_study(
    target: Box3D,
    stats: ExtentStats,
    K: CameraIntrinsics,
    n_seeds: int = 100,
    seed: int = 0,
    config: Optional[OptimConfig] = None,
    tolerance: float = 1e-3,
) -> ConvergenceReport:
    config = config or OptimConfig(early_stop_loss=tolerance)
    roi = project_box(target, K)
    exact = params_from_box(target, stats, K)
    traces: List[OptimTrace] = []
    finals, diverged = [], 0
    for k in range(n_seeds):
        rng = np.random.default_rng([seed, k])
        init = perturb_params(rng, exact, roi)
        try:
            trace = optimize_instance(init, target, stats, K, config, roi=roi)
        except DivergenceError as e:
            logger.warning("Seed %d diverged: %s", k, e)
            trace, diverged = e.trace, diverged + 1
        traces.append(trace)
        finals.append(trace.final_loss if not trace.diverged else math.inf)
    finals_arr = np.array(finals)
    return ConvergenceReport(
        success_rate=float(np.mean(finals_arr < tolerance)) if n_seeds else 0.0,
        final_losses=finals_arr,
        diverged=diverged,
        traces=traces,
    )


def write_trace_csv(traces: Sequence[OptimTrace], path: Path) -> Path:
    """One row per (seed, iteration): loss, four gradient magnitudes, ten parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "iteration", "phase", "diverged", "loss", *(f"grad_{c}" for c in COMPONENTS), *PARAM_NAMES])
        for seed, trace in enumerate(traces):
            for r in trace.records:
                writer.writerow(
                    [
                        seed,
                        r.iteration,
                        r.phase,
                        int(trace.diverged),
                        f"{r.loss:.9g}",
                        *(f"{r.magnitudes[c]:.9g}" for c in COMPONENTS),
                        *(f"{v:.9g}" for v in r.params),
                    ]
                )
    return path
