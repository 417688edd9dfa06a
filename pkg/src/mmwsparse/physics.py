"""Monostatic scattering model on the co-registered aperture/voxel lattice.

The forward model maps a reflectivity volume to the echo through

    echo = IFFT2_aperture( STOLT{ FFT3(scene) } * exp(-1j * kz * R0) )

where ``STOLT`` samples the scene spectrum on the dispersion surface
``kz = sqrt(4 k^2 - kx^2 - ky^2)`` by linear interpolation along the range
wavenumber axis.  All FFTs use orthonormal scaling.  The range spectrum of the
sampled scene is periodic in ``2 pi / d_range``; the dispersion band is located
on that periodic grid, so the scene needs no carrier demodulation.

``adjoint_operator`` is the exact algebraic adjoint of that discrete chain and
``rma_reconstruct`` is the approximate inverse (Stolt resampling from the
measured wavenumbers onto the uniform range-wavenumber grid).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .geometry import PointScattererSet, SceneVolume, SystemGeometry, scene_origin, wavenumbers


@dataclass(frozen=True, eq=False)
class EchoCube:
    """Complex echo indexed (vertical element, horizontal element, frequency).

    ``mask`` is the boolean aperture sampling pattern once the cube has been
    thinned by :func:`mmwsparse.sampling.apply_mask`; ``None`` means fully
    sampled.
    """

    data: np.ndarray
    geometry: SystemGeometry
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.geometry.echo_shape:
            raise ValueError(f"echo dims {data.shape} do not match geometry {self.geometry.echo_shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("echo contains non-finite values")
        data = data.astype(np.complex128, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool).copy()
            if mask.shape != self.geometry.aperture_shape:
                raise ValueError(f"mask dims {mask.shape} do not match aperture {self.geometry.aperture_shape}")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def center_slice(self) -> np.ndarray:
        return self.data[:, :, self.geometry.n_freq // 2]

    def like(self, data: np.ndarray) -> "EchoCube":
        return EchoCube(data, self.geometry, self.mask)


@dataclass(frozen=True, eq=False)
class SpectrumLattice:
    """Precomputed wavenumber bookkeeping for one geometry.

    ``kz`` holds the dispersion value for every (ky, kx, k) bin; ``valid``
    flags propagating bins.  ``lower``/``upper``/``weight`` describe the linear
    interpolation from the uniform range-wavenumber grid (``n_grid`` bins of
    width ``dkz``) onto ``kz``.
    """

    kv: np.ndarray
    kh: np.ndarray
    k: np.ndarray
    kz: np.ndarray
    valid: np.ndarray
    n_grid: int
    dkz: float
    lower: np.ndarray
    upper: np.ndarray
    weight: np.ndarray
    phase: np.ndarray
    slots: np.ndarray

    @cached_property
    def stolt(self) -> sp.csr_matrix:
        """Sparse map from the flattened padded spectrum to the (ky, kx, k) bins.

        Combines the two interpolation weights with the standoff phase, so one
        sparse product performs the whole resampling step.
        """
        nv, nh, nf = self.kz.shape
        rows = np.arange(nv * nh * nf, dtype=np.int64)
        pix = (np.arange(nv * nh, dtype=np.int64) * self.n_grid).repeat(nf)
        cols = np.concatenate([pix + self.lower.ravel(), pix + self.upper.ravel()])
        vals = np.concatenate([((1 - self.weight) * self.phase).ravel(), (self.weight * self.phase).ravel()])
        shape = (nv * nh * nf, nv * nh * self.n_grid)
        return sp.csr_matrix((vals, (np.concatenate([rows, rows]), cols)), shape=shape)

    @cached_property
    def stolt_adjoint(self) -> sp.csr_matrix:
        return self.stolt.conj().T.tocsr()


@lru_cache(maxsize=16)
def spectrum_lattice(geom: SystemGeometry) -> SpectrumLattice:
    kv = 2 * np.pi * np.fft.fftfreq(geom.n_vertical, geom.d_vertical)
    kh = 2 * np.pi * np.fft.fftfreq(geom.n_horizontal, geom.d_horizontal)
    k = wavenumbers(geom)
    krho2 = kv[:, None, None] ** 2 + kh[None, :, None] ** 2
    kz2 = 4 * k[None, None, :] ** 2 - krho2
    valid = kz2 >= 0
    kz = np.sqrt(np.where(valid, kz2, 0.0))

    n_grid = geom.n_range * geom.range_oversample
    dkz = 2 * np.pi / (n_grid * geom.d_range)
    u = kz / dkz
    base = np.floor(u)
    weight = u - base
    lower = base.astype(np.int64) % n_grid
    upper = (lower + 1) % n_grid
    phase = np.where(valid, np.exp(-1j * kz * geom.standoff_r0), 0.0)
    # slot of range voxel l on the zero-padded, centre-at-zero range axis
    slots = (np.arange(geom.n_range) - geom.n_range // 2) % n_grid
    for arr in (kz, valid, lower, upper, weight, phase):
        arr.setflags(write=False)
    return SpectrumLattice(kv, kh, k, kz, valid, n_grid, dkz, lower, upper, weight, phase, slots)


def _check_scene(scene: SceneVolume | np.ndarray, geom: SystemGeometry) -> np.ndarray:
    data = scene.data if isinstance(scene, SceneVolume) else np.asarray(scene)
    if data.shape != geom.scene_shape:
        raise ValueError(f"scene dims {data.shape} do not match the aperture lattice {geom.scene_shape}")
    if isinstance(scene, SceneVolume) and not np.allclose(scene.pitch, geom.scene_pitch, rtol=1e-9, atol=0):
        raise ValueError(f"scene pitch {scene.pitch} inconsistent with geometry {geom.scene_pitch}")
    return data


def _check_echo(echo: EchoCube | np.ndarray, geom: SystemGeometry) -> np.ndarray:
    data = echo.data if isinstance(echo, EchoCube) else np.asarray(echo)
    if data.shape != geom.echo_shape:
        raise ValueError(f"echo dims {data.shape} do not match geometry {geom.echo_shape}")
    return data


def _embed_range(data: np.ndarray, lat: SpectrumLattice) -> np.ndarray:
    padded = np.zeros(data.shape[:2] + (lat.n_grid,), dtype=np.result_type(data, np.complex64))
    padded[:, :, lat.slots] = data
    return padded


def forward_array(scene: np.ndarray, geom: SystemGeometry) -> np.ndarray:
    """Array-level forward model; ``scene`` must have ``geom.scene_shape``."""
    lat = spectrum_lattice(geom)
    spec = sfft.fftn(_embed_range(scene, lat), norm="ortho")
    stolt = (lat.stolt @ spec.ravel()).reshape(lat.kz.shape)
    return sfft.ifft2(stolt, axes=(0, 1), norm="ortho")


def adjoint_array(echo: np.ndarray, geom: SystemGeometry) -> np.ndarray:
    """Exact adjoint of :func:`forward_array`."""
    lat = spectrum_lattice(geom)
    nv, nh, _ = echo.shape
    stolt = sfft.fft2(echo, axes=(0, 1), norm="ortho")
    spec = lat.stolt_adjoint @ stolt.ravel()
    padded = sfft.ifftn(spec.reshape(nv, nh, lat.n_grid), norm="ortho")
    return padded[:, :, lat.slots]


def forward_operator(scene: SceneVolume, geom: SystemGeometry) -> EchoCube:
    """Echo predicted by the FFT scattering model for ``scene``."""
    return EchoCube(forward_array(_check_scene(scene, geom), geom), geom)


def adjoint_operator(echo: EchoCube, geom: SystemGeometry) -> SceneVolume:
    """Apply the adjoint scattering model; the inverse of nothing, just ``H^*``."""
    data = adjoint_array(_check_echo(echo, geom), geom)
    return SceneVolume(data, geom.scene_pitch, scene_origin(geom))


def rma_array(echo: np.ndarray, geom: SystemGeometry) -> np.ndarray:
    lat = spectrum_lattice(geom)
    nv, nh, nf = echo.shape
    spec = np.fft.fft2(echo, axes=(0, 1), norm="ortho") * np.conj(lat.phase)
    kz = np.where(lat.valid, lat.kz, np.nan)
    with np.errstate(invalid="ignore"):
        g_lo = int(np.ceil(np.nanmin(kz) / lat.dkz)) if np.any(lat.valid) else 0
        g_hi = int(np.floor(np.nanmax(kz) / lat.dkz)) if np.any(lat.valid) else -1
    out = np.zeros((nv, nh, lat.n_grid), complex)
    if nf < 2 or g_hi < g_lo:
        return np.fft.ifftn(out, norm="ortho")[:, :, lat.slots]

    targets = np.arange(g_lo, g_hi + 1) * lat.dkz
    krho2 = lat.kv[:, None, None] ** 2 + lat.kh[None, :, None] ** 2
    k0, dk = lat.k[0], lat.k[1] - lat.k[0]
    # invert the dispersion relation to find the bracketing measured samples
    k_target = np.sqrt(targets[None, None, :] ** 2 + krho2) / 2
    pos = (k_target - k0) / dk
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, nf - 2)
    inside = (pos >= -1e-9) & (pos <= nf - 1 + 1e-9)
    kz_lo = np.take_along_axis(lat.kz, i0, axis=2)
    kz_hi = np.take_along_axis(lat.kz, i0 + 1, axis=2)
    ok_lo = np.take_along_axis(lat.valid, i0, axis=2)
    ok_hi = np.take_along_axis(lat.valid, i0 + 1, axis=2)
    inside &= ok_lo & ok_hi & (kz_hi > kz_lo)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(inside, (targets[None, None, :] - kz_lo) / (kz_hi - kz_lo), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    vals = (1 - frac) * np.take_along_axis(spec, i0, axis=2) + frac * np.take_along_axis(spec, i0 + 1, axis=2)
    vals = np.where(inside, vals, 0.0)

    bins = np.broadcast_to(np.arange(g_lo, g_hi + 1) % lat.n_grid, vals.shape)
    pix = (np.arange(nv * nh, dtype=np.int64) * lat.n_grid).reshape(nv, nh, 1)
    index = (pix + bins).ravel()
    size = nv * nh * lat.n_grid
    flat = np.bincount(index, vals.real.ravel(), size) + 1j * np.bincount(index, vals.imag.ravel(), size)
    return np.fft.ifftn(flat.reshape(nv, nh, lat.n_grid), norm="ortho")[:, :, lat.slots]


def rma_reconstruct(echo: EchoCube, geom: SystemGeometry) -> SceneVolume:
    """Range-migration (omega-k) image of a fully or zero-filled echo."""
    data = rma_array(_check_echo(echo, geom), geom)
    return SceneVolume(data, geom.scene_pitch, scene_origin(geom))


def brute_force_echo(points: PointScattererSet, geom: SystemGeometry, chunk: int = 64) -> EchoCube:
    """Exact two-way spherical-wave echo of point scatterers.

    Each element-point pair inside the rectangular beam footprint contributes
    ``amplitude * exp(-2j k R)`` with ``R`` the Euclidean distance.  Points are
    accumulated in input order so the result is reproducible bit for bit.
    """
    if len(points) == 0:
        raise ValueError("point set is empty")
    ev, eh = geom.element_positions()
    k = wavenumbers(geom)
    v_max, h_max = geom.footprint
    out = np.zeros(geom.echo_shape, complex)
    pos, amp = points.positions, points.amplitudes
    for start in range(0, len(points), chunk):
        for (pv, ph, pz), a in zip(pos[start:start + chunk], amp[start:start + chunk]):
            dv = ev[:, None] - pv
            dh = eh[None, :] - ph
            inside = (np.abs(dv) <= v_max) & (np.abs(dh) <= h_max)
            if a == 0 or not inside.any():
                continue
            r = np.sqrt(dv**2 + dh**2 + pz**2)
            out += (a * inside)[:, :, None] * np.exp(-2j * k[None, None, :] * r[:, :, None])
    return EchoCube(out, geom)


def scene_points(scene: SceneVolume, geom: SystemGeometry, threshold: float = 0.0) -> PointScattererSet:
    """Nonzero voxels of ``scene`` as point scatterers at their voxel centres."""
    idx = np.argwhere(np.abs(scene.data) > threshold)
    shape = np.array(scene.shape)
    pitch = np.array(scene.pitch)
    origin = np.array(scene.origin)
    positions = origin + (idx - shape // 2) * pitch
    return PointScattererSet(positions, scene.data[tuple(idx.T)])


def echo_phase_gradient(echo: EchoCube | np.ndarray) -> np.ndarray:
    """Magnitude of the unwrapped-phase gradient per aperture element.

    Works on the centre-frequency slice of an :class:`EchoCube` or directly
    on a 2-D complex slice.  The phase is unwrapped along each axis before
    differencing; interior points use central differences and edges
    one-sided ones.  Units are radians per element.
    """
    slice_ = echo.center_slice if isinstance(echo, EchoCube) else np.asarray(echo)
    if slice_.ndim != 2:
        raise ValueError("expected a 2-D aperture slice")
    phase = np.angle(slice_)
    grads = []
    for axis in (0, 1):
        if slice_.shape[axis] < 2:
            grads.append(np.zeros(slice_.shape))
            continue
        grads.append(np.gradient(np.unwrap(phase, axis=axis), axis=axis))
    return np.hypot(grads[0], grads[1])
