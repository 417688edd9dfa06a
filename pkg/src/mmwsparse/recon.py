"""Sparse-aperture reconstruction drivers.

Three methods share one calling convention, ``(echo, mask, geom, config)``:

* ``rma_zero_fill``: range migration applied to the thinned echo.
* ``admm_reconstruct``: total-variation regularised least squares solved by
  ADMM with a conjugate-gradient x-update.
* ``untrained_reconstruct``: a randomly initialised complex network is fitted
  to the single measurement through the scattering model, with the zero-filled
  RMA volume as its fixed input.

The data term only ever sees sampled elements, so values stored at unsampled
elements of the echo never reach a reconstruction.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import cnet
from .geometry import SceneVolume, SystemGeometry, scene_origin
from .physics import EchoCube, adjoint_array, forward_array, rma_array

logger = logging.getLogger(__name__)

METHODS = ("rma", "admm", "untrained")


class CGBreakdown(RuntimeError):
    """Conjugate gradient met non-positive curvature or a non-finite value."""

    def __init__(self, iteration: int, residual: float):
        super().__init__(f"conjugate gradient broke down at iteration {iteration} (residual {residual:.3e})")
        self.iteration = iteration
        self.residual = residual


@dataclass(frozen=True)
class ReconConfig:
    """Settings for every reconstruction method.

    ``tv_weight=None`` rebalances the TV weight once from the initial loss
    terms (``tv_scale * data0 / tv0``).  ``admm_lambda=None`` likewise picks
    ``admm_lambda_scale * max|H^* E_s|``.  ``early_stop`` caps the untrained
    run at that many iterations when set.
    """

    method: str = "untrained"
    iterations: int = 100
    learning_rate: float = 1e-3
    tv_weight: float | None = None
    tv_scale: float = 1e-3
    tv_eps: float = 1e-12
    admm_rho: float = 1.0
    admm_lambda: float | None = None
    admm_lambda_scale: float = 0.05
    admm_iterations: int = 30
    cg_iterations: int = 20
    tolerance: float = 1e-5
    hidden: int = 32
    n_blocks: int = 5
    early_stop: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown reconstruction method {self.method!r}; choose from {METHODS}")
        for name in ("iterations", "admm_iterations", "cg_iterations", "hidden", "n_blocks"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.early_stop is not None and self.early_stop < 1:
            raise ValueError("early_stop must be at least 1")
        for name in ("learning_rate", "tv_scale", "tv_eps", "admm_rho", "admm_lambda_scale", "tolerance", "tv_weight", "admm_lambda"):
            value = getattr(self, name)
            if value is not None and not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")

    def replace(self, **changes) -> "ReconConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def network(self) -> cnet.NetworkConfig:
        return cnet.NetworkConfig(hidden=self.hidden, n_blocks=self.n_blocks)


@dataclass
class ReconReport:
    volume: SceneVolume
    losses: list[float]
    duration: float
    config: ReconConfig
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not all(math.isfinite(x) for x in self.losses):
            raise ValueError("loss trace contains non-finite values")


# --- helpers ------------------------------------------------------------------


def _mask_array(mask, geom: SystemGeometry) -> np.ndarray:
    values = getattr(mask, "values", mask)
    if values is None:
        return np.ones(geom.aperture_shape, bool)
    values = np.asarray(values)
    if values.shape != geom.aperture_shape:
        raise ValueError(f"mask dims {values.shape} do not match aperture {geom.aperture_shape}")
    return values.astype(bool)


def _prepare(echo: EchoCube | np.ndarray, mask, geom: SystemGeometry) -> tuple[np.ndarray, np.ndarray]:
    data = echo.data if isinstance(echo, EchoCube) else np.asarray(echo)
    if data.shape != geom.echo_shape:
        raise ValueError(f"echo dims {data.shape} do not match geometry {geom.echo_shape}")
    if mask is None and isinstance(echo, EchoCube):
        mask = echo.mask
    m = _mask_array(mask, geom)
    return np.where(m[:, :, None], data, 0).astype(complex), m


def _volume(data: np.ndarray, geom: SystemGeometry) -> SceneVolume:
    return SceneVolume(data, geom.scene_pitch, scene_origin(geom))


def _diffs(x: np.ndarray) -> list[np.ndarray]:
    """Forward differences along every axis; the last difference is zero (replicate edge)."""
    out = []
    for axis in range(x.ndim):
        d = np.zeros_like(x)
        src = [slice(None)] * x.ndim
        src[axis] = slice(0, -1)
        d[tuple(src)] = np.diff(x, axis=axis)
        out.append(d)
    return out


def _diffs_adjoint(ds: list[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(ds[0])
    for axis, d in enumerate(ds):
        n = d.shape[axis]
        if n < 2:
            continue
        head = [slice(None)] * d.ndim
        head[axis] = slice(0, n - 1)
        tail = [slice(None)] * d.ndim
        tail[axis] = slice(1, n)
        out[tuple(head)] -= d[tuple(head)]
        out[tuple(tail)] += d[tuple(head)]
    return out


def complex_tv(volume: SceneVolume | np.ndarray, eps: float = 1e-12) -> float:
    """Isotropic complex total variation with forward differences.

    ``sum sqrt(|dx|^2 + |dy|^2 + |dz|^2 + eps)`` over all voxels, where the
    difference past the last voxel of an axis is taken as zero.
    """
    x = volume.data if isinstance(volume, SceneVolume) else np.asarray(volume)
    if x.ndim != 3:
        raise ValueError("total variation expects a 3-D volume")
    mag2 = sum(np.abs(d) ** 2 for d in _diffs(x))
    return float(np.sum(np.sqrt(mag2 + eps)))


def complex_tv_grad(volume: SceneVolume | np.ndarray, eps: float = 1e-12) -> tuple[float, np.ndarray]:
    """TV value and its gradient ``dTV/dRe + 1j dTV/dIm``."""
    x = volume.data if isinstance(volume, SceneVolume) else np.asarray(volume)
    ds = _diffs(x.astype(complex))
    norm = np.sqrt(sum(np.abs(d) ** 2 for d in ds) + eps)
    return float(norm.sum()), _diffs_adjoint([d / norm for d in ds])


def soft_threshold(x: np.ndarray, threshold: float) -> np.ndarray:
    """Shrink complex magnitudes by ``threshold`` and keep the phase."""
    x = np.asarray(x)
    mag = np.abs(x)
    scale = np.maximum(mag - threshold, 0) / np.where(mag > 0, mag, 1)
    return x * scale


# --- zero-filled RMA ------------------------------------------------------------


def rma_zero_fill(echo: EchoCube | np.ndarray, mask, geom: SystemGeometry, config: ReconConfig | None = None) -> ReconReport:
    """Range migration of the thinned echo (zeros at unsampled elements)."""
    config = config or ReconConfig(method="rma")
    start = time.perf_counter()
    data, _ = _prepare(echo, mask, geom)
    vol = _volume(rma_array(data, geom), geom)
    return ReconReport(vol, [], time.perf_counter() - start, config)


# --- ADMM -----------------------------------------------------------------------


def conjugate_gradient(apply_a, b: np.ndarray, x0: np.ndarray, iterations: int, tol: float = 0.0, history: list | None = None) -> np.ndarray:
    """Solve ``A x = b`` for Hermitian positive (semi)definite ``A``.

    Stops after ``iterations`` steps or once ``|r| <= tol |b|``.  When
    ``history`` is a list, the quadratic ``Re(x^H A x)/2 - Re(b^H x)`` is
    appended after every step.
    """
    x = x0.copy()
    r = b - apply_a(x)
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    b_norm = math.sqrt(float(np.vdot(b, b).real))
    for it in range(iterations):
        if math.sqrt(rs) <= tol * b_norm or rs == 0.0:
            break
        ap = apply_a(p)
        curv = float(np.vdot(p, ap).real)
        if not math.isfinite(curv) or curv <= 0:
            raise CGBreakdown(it, math.sqrt(rs))
        alpha = rs / curv
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r).real)
        if not math.isfinite(rs_new):
            raise CGBreakdown(it, rs_new)
        if history is not None:
            history.append(0.5 * float(np.vdot(x, b - r).real) - float(np.vdot(b, x).real))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def admm_x_update(
    rhs_data: np.ndarray,
    v_minus_u: list[np.ndarray],
    x0: np.ndarray,
    mask: np.ndarray,
    geom: SystemGeometry,
    rho: float,
    iterations: int,
    tol: float = 0.0,
    history: list | None = None,
) -> np.ndarray:
    """CG solve of ``(H^* M H + rho D^* D) x = H^* M E + rho D^* (v - u)``.

    ``rhs_data`` is ``H^* M E`` (precomputed once per run).
    """
    m3 = mask[:, :, None]

    def normal(x):
        out = adjoint_array(forward_array(x, geom) * m3, geom)
        if rho:
            out = out + rho * _diffs_adjoint(_diffs(x))
        return out

    rhs = rhs_data + rho * _diffs_adjoint(v_minus_u) if rho else rhs_data
    return conjugate_gradient(normal, rhs, x0, iterations, tol, history)


def admm_reconstruct(echo: EchoCube | np.ndarray, mask, geom: SystemGeometry, config: ReconConfig | None = None) -> ReconReport:
    """Solve ``min |M(Hx - E)|^2 / 2 + lambda |Dx|_1`` by ADMM with ``v = Dx``.

    The loss trace records that objective after every outer iteration.  The
    run ends after ``admm_iterations`` outer steps or once both the primal and
    dual residuals fall below ``tolerance`` relative to their scale.
    """
    config = config or ReconConfig(method="admm")
    start = time.perf_counter()
    data, m = _prepare(echo, mask, geom)
    m3 = m[:, :, None]
    rhs_data = adjoint_array(data, geom)
    lam = config.admm_lambda if config.admm_lambda is not None else config.admm_lambda_scale * float(np.abs(rhs_data).max())
    rho = config.admm_rho
    if rho <= 0:
        raise ValueError("ADMM needs a positive penalty rho")

    x = np.zeros(geom.scene_shape, complex)
    v = _diffs(x)
    u = [np.zeros_like(a) for a in v]
    losses: list[float] = []
    for it in range(config.admm_iterations):
        x = admm_x_update(rhs_data, [a - b for a, b in zip(v, u)], x, m, geom, rho, config.cg_iterations)
        dx = _diffs(x)
        v_old = v
        v = [soft_threshold(d + uu, lam / rho) for d, uu in zip(dx, u)]
        u = [uu + d - vv for uu, d, vv in zip(u, dx, v)]

        resid = forward_array(x, geom) * m3 - data
        obj = 0.5 * float(np.vdot(resid, resid).real) + lam * float(sum(np.abs(d).sum() for d in dx))
        if not math.isfinite(obj):
            raise FloatingPointError(f"non-finite ADMM objective at iteration {it}")
        losses.append(obj)

        primal = math.sqrt(sum(float(np.vdot(d - vv, d - vv).real) for d, vv in zip(dx, v)))
        dual = rho * float(np.linalg.norm(_diffs_adjoint([a - b for a, b in zip(v, v_old)])))
        p_scale = max(math.sqrt(sum(float(np.vdot(d, d).real) for d in dx)), math.sqrt(sum(float(np.vdot(a, a).real) for a in v)))
        d_scale = rho * float(np.linalg.norm(_diffs_adjoint(u)))
        if primal <= config.tolerance * max(p_scale, 1e-300) and dual <= config.tolerance * max(d_scale, 1e-300):
            break
    report = ReconReport(_volume(x, geom), losses, time.perf_counter() - start, config)
    report.extras["lambda"] = lam
    return report


# --- untrained network ----------------------------------------------------------


class _UntrainedProblem:
    """Loss and gradient of the untrained objective for one measurement."""

    def __init__(self, data: np.ndarray, mask: np.ndarray, geom: SystemGeometry, eps: float):
        self.data = data
        self.m3 = mask[:, :, None]
        self.geom = geom
        self.eps = eps

    def terms(self, scene: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
        resid = forward_array(scene, self.geom) * self.m3 - self.data
        data_term = float(np.vdot(resid, resid).real)
        tv, tv_grad = complex_tv_grad(scene, self.eps)
        return data_term, tv, 2 * adjoint_array(resid, self.geom), tv_grad


def _to_batch(scene: np.ndarray) -> np.ndarray:
    """(vertical, horizontal, range) volume -> (range, vertical, horizontal, 1) batch."""
    return np.ascontiguousarray(np.transpose(scene, (2, 0, 1))[..., None])


def _from_batch(batch: np.ndarray) -> np.ndarray:
    return np.transpose(batch[..., 0], (1, 2, 0))


def untrained_reconstruct(echo: EchoCube | np.ndarray, mask, geom: SystemGeometry, config: ReconConfig | None = None) -> ReconReport:
    """Fit a randomly initialised complex network to one sparse measurement.

    Range slices of the volume form the network batch.  The input is the
    zero-filled RMA volume scaled to unit peak magnitude; the output is scaled
    back by the same factor.  Each iteration evaluates
    ``|M(H I - E_s)|^2 + tv_weight * TV(I)`` and takes one Adam step, and the
    returned volume is the network output after the last step.
    """
    config = config or ReconConfig()
    start = time.perf_counter()
    data, m = _prepare(echo, mask, geom)
    z = rma_array(data, geom)
    scale = float(np.abs(z).max())
    if scale == 0:
        scale = 1.0
    z_batch = _to_batch(z / scale)

    params = cnet.init_params(config.network, config.seed)
    adam = cnet.AdamState()
    problem = _UntrainedProblem(data, m, geom, config.tv_eps)
    n_iter = config.iterations if config.early_stop is None else min(config.iterations, config.early_stop)
    tv_weight = config.tv_weight
    losses: list[float] = []
    for it in range(n_iter):
        tape = cnet.Tape()
        out = cnet.ccn_forward_nhwc(z_batch, params, tape)
        scene = scale * _from_batch(out.data).astype(complex)
        data_term, tv, g_data, g_tv = problem.terms(scene)
        if tv_weight is None:
            tv_weight = config.tv_scale * data_term / tv if tv > 0 else 0.0
        loss = data_term + tv_weight * tv
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        losses.append(loss)
        g_out = _to_batch(scale * (g_data + tv_weight * g_tv))
        grads = cnet.backward(g_out.astype(out.data.dtype), tape, out)
        params.arrays = cnet.adam_step(params.arrays, grads, adam, config.learning_rate)

    final = cnet.ccn_forward_nhwc(z_batch, params, None)
    volume = _volume(scale * _from_batch(final.data).astype(complex), geom)
    _check_trend(losses)
    report = ReconReport(volume, losses, time.perf_counter() - start, config)
    report.extras["tv_weight"] = tv_weight
    report.extras["input_scale"] = scale
    return report


def _check_trend(losses: list[float], window: int = 10) -> None:
    for i in range(len(losses) - window):
        if losses[i + window] > losses[i]:
            logger.warning("loss rose from %.4g to %.4g between iterations %d and %d", losses[i], losses[i + window], i, i + window)
            return


def reconstruct(echo: EchoCube | np.ndarray, mask, geom: SystemGeometry, config: ReconConfig) -> ReconReport:
    """Dispatch on ``config.method``."""
    fn = {"rma": rma_zero_fill, "admm": admm_reconstruct, "untrained": untrained_reconstruct}[config.method]
    return fn(echo, mask, geom, config)
