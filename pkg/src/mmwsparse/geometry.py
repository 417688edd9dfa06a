"""Imaging geometry, scene volumes and synthetic phantom scenes.

Axis convention used throughout the package: arrays over the aperture are
indexed ``(vertical, horizontal)`` and scene volumes ``(vertical, horizontal,
range)``.  Element and voxel positions are centred, i.e. index ``i`` along an
axis with ``n`` samples sits at ``(i - n // 2) * pitch``.  Scene voxels share
the aperture lattice in cross-range; along range, voxel ``l`` sits at distance
``standoff_r0 + (l - n_range // 2) * d_range`` from the aperture plane.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SystemGeometry:
    """Monostatic planar aperture, frequency sweep and image range lattice."""

    n_vertical: int = 381
    n_horizontal: int = 251
    d_vertical: float = 0.005
    d_horizontal: float = 0.004
    f_min: float = 32e9
    f_max: float = 37e9
    n_freq: int = 50
    standoff_r0: float = 0.3
    beamwidth_az: float = np.pi / 3
    beamwidth_el: float = np.pi / 3
    n_range: int = 16
    d_range: float = 0.005
    range_oversample: int = 2

    def __post_init__(self):
        for name in ("n_vertical", "n_horizontal", "n_freq", "n_range", "range_oversample"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        for name in ("d_vertical", "d_horizontal", "standoff_r0", "d_range", "f_min", "f_max"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("beamwidth_az", "beamwidth_el"):
            value = getattr(self, name)
            if not 0 < value < np.pi:
                raise ValueError(f"{name} must lie in (0, pi), got {value!r}")
        if self.n_freq == 1:
            if self.f_max < self.f_min:
                raise ValueError("f_max must not be below f_min")
        elif not self.f_min < self.f_max:
            raise ValueError("f_min must be below f_max")

    @property
    def aperture_shape(self) -> tuple[int, int]:
        return (self.n_vertical, self.n_horizontal)

    @property
    def echo_shape(self) -> tuple[int, int, int]:
        return (self.n_vertical, self.n_horizontal, self.n_freq)

    @property
    def scene_shape(self) -> tuple[int, int, int]:
        return (self.n_vertical, self.n_horizontal, self.n_range)

    @property
    def scene_pitch(self) -> tuple[float, float, float]:
        return (self.d_vertical, self.d_horizontal, self.d_range)

    @property
    def n_elements(self) -> int:
        return self.n_vertical * self.n_horizontal

    @property
    def frequencies(self) -> np.ndarray:
        if self.n_freq == 1:
            return np.array([self.f_min], dtype=float)
        return np.linspace(self.f_min, self.f_max, self.n_freq)

    @property
    def center_wavenumber(self) -> float:
        return float(wavenumbers(self)[self.n_freq // 2])

    @property
    def footprint(self) -> tuple[float, float]:
        """Half-widths (vertical, horizontal) of the illuminated patch at R0."""
        return (
            self.standoff_r0 * np.tan(self.beamwidth_el / 2),
            self.standoff_r0 * np.tan(self.beamwidth_az / 2),
        )

    def element_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Vertical and horizontal element coordinates in metres."""
        return (
            _centred_axis(self.n_vertical, self.d_vertical),
            _centred_axis(self.n_horizontal, self.d_horizontal),
        )

    def range_positions(self) -> np.ndarray:
        """Absolute range of each image slice from the aperture plane."""
        return self.standoff_r0 + _centred_axis(self.n_range, self.d_range)

    def with_(self, **changes) -> "SystemGeometry":
        return replace(self, **changes)


def _centred_axis(n: int, pitch: float) -> np.ndarray:
    return (np.arange(n) - n // 2) * pitch


def default_geometry() -> SystemGeometry:
    """Full-array configuration of the 32-37 GHz scanned prototype."""
    return SystemGeometry()


def desk_geometry() -> SystemGeometry:
    """64 x 64 x 16 voxel configuration at 5 mm pitch for desktop runs."""
    return SystemGeometry(n_vertical=64, n_horizontal=64, d_vertical=0.005, d_horizontal=0.005)


def wavenumbers(geom: SystemGeometry) -> np.ndarray:
    """Free-space wavenumbers ``2 pi f / c`` of the frequency sweep."""
    return 2 * np.pi * geom.frequencies / SPEED_OF_LIGHT


@dataclass(frozen=True, eq=False)
class SceneVolume:
    """Complex reflectivity on a voxel lattice.

    ``origin`` is the position (vertical, horizontal, range) of voxel
    ``(n0 // 2, n1 // 2, n2 // 2)``; range is measured from the aperture plane.
    """

    data: np.ndarray
    pitch: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"scene grid must be 3-D with every axis >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("scene contains non-finite values")
        data = data.astype(np.complex128, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "pitch", tuple(float(p) for p in self.pitch))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, geom: SystemGeometry) -> "SceneVolume":
        return cls(np.zeros(geom.scene_shape, complex), geom.scene_pitch, scene_origin(geom))

    def like(self, data: np.ndarray) -> "SceneVolume":
        return SceneVolume(data, self.pitch, self.origin)


def scene_origin(geom: SystemGeometry) -> tuple[float, float, float]:
    return (0.0, 0.0, geom.standoff_r0)


@dataclass(frozen=True)
class PointScattererSet:
    """Point scatterers as rows ``(vertical, horizontal, range, amplitude)``.

    Coordinates are metres; range is the absolute distance from the aperture
    plane.
    """

    positions: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        amp = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.shape[1] != 3 or pos.shape[0] != amp.shape[0]:
            raise ValueError("positions must be (n, 3) with one amplitude per point")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(amp))):
            raise ValueError("point coordinates and amplitudes must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_tuples(cls, points: Sequence[tuple[float, float, float, complex]]) -> "PointScattererSet":
        points = list(points)
        if not points:
            return cls(np.zeros((0, 3)), np.zeros(0, complex))
        arr = np.array([p[:3] for p in points], dtype=float)
        return cls(arr, np.array([p[3] for p in points], dtype=complex))


def scene_from_points(
    points: PointScattererSet,
    geom: SystemGeometry,
    shape: tuple[int, int, int] | None = None,
    pitch: tuple[float, float, float] | None = None,
) -> SceneVolume:
    """Snap point scatterers onto the voxel lattice.

    Snapping is to the nearest voxel centre, exact half-way ties going to the
    lower index.  Points sharing a voxel add up.
    """
    if len(points) == 0:
        raise ValueError("point set is empty")
    shape = tuple(shape) if shape is not None else geom.scene_shape
    pitch = tuple(pitch) if pitch is not None else geom.scene_pitch
    origin = scene_origin(geom)
    data = np.zeros(shape, complex)
    for idx, (pos, amp) in enumerate(zip(points.positions, points.amplitudes)):
        voxel = []
        for axis in range(3):
            u = (pos[axis] - origin[axis]) / pitch[axis] + shape[axis] // 2
            # nearest centre; ceil(u - 0.5) sends exact .5 ties downward
            i = int(np.ceil(np.round(u - 0.5, 9)))
            if not 0 <= i < shape[axis]:
                raise ValueError(f"point {idx} at {tuple(pos)} lies outside the scene grid")
            voxel.append(i)
        data[tuple(voxel)] += amp
    return SceneVolume(data, pitch, origin)


@dataclass(frozen=True)
class Inclusion:
    """Concealed object footprint in the cross-range plane.

    ``kind`` is ``"rect"`` or ``"ellipse"``; centre and size are metres,
    ``lift`` is how many range voxels the object sits in front of the body.
    """

    kind: str
    center_v: float
    center_h: float
    size_v: float
    size_h: float
    amplitude: complex = 1.5
    lift: int = 1

    def __post_init__(self):
        if self.kind not in ("rect", "ellipse"):
            raise ValueError(f"unknown inclusion kind {self.kind!r}")
        if self.size_v <= 0 or self.size_h <= 0:
            raise ValueError("inclusion sizes must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of the synthetic humanoid phantom.

    The phantom is a torso ellipse with a head disc and two arms, seen from
    the front.  Its surface bulges toward the array and carries a smooth
    random reflectivity texture.  All lengths in metres.
    """

    shape: tuple[int, int, int] = (64, 64, 16)
    pitch: tuple[float, float, float] = (0.005, 0.005, 0.005)
    standoff_r0: float = 0.3
    torso_center: tuple[float, float] = (0.03, 0.0)
    torso_radii: tuple[float, float] = (0.09, 0.07)
    head_radius: float = 0.035
    arm_width: float = 0.025
    arm_gap: float = 0.01
    bulge: float = 0.02
    body_amplitude: float = 1.0
    texture: float = 0.3
    phase_roughness: float = 0.5
    correlation_length: float = 0.02
    inclusions: tuple[Inclusion, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError("phantom grid needs three positive dims")
        if min(self.pitch) <= 0:
            raise ValueError("phantom pitches must be positive")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))

    @classmethod
    def for_geometry(cls, geom: SystemGeometry, **kwargs) -> "PhantomSpec":
        return cls(shape=geom.scene_shape, pitch=geom.scene_pitch, standoff_r0=geom.standoff_r0, **kwargs)


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], pitch: tuple[float, float], length: float) -> np.ndarray:
    noise = rng.standard_normal(shape)
    kv = np.fft.fftfreq(shape[0], pitch[0])[:, None]
    kh = np.fft.fftfreq(shape[1], pitch[1])[None, :]
    kernel = np.exp(-2 * (np.pi * length) ** 2 * (kv**2 + kh**2))
    out = np.fft.ifft2(np.fft.fft2(noise) * kernel).real
    std = out.std()
    return out / std if std > 0 else out


def _inclusion_footprint(inc: Inclusion, spec: PhantomSpec) -> np.ndarray:
    nv, nh, _ = spec.shape
    uv = (np.arange(nv) - nv // 2) - inc.center_v / spec.pitch[0]
    uh = (np.arange(nh) - nh // 2) - inc.center_h / spec.pitch[1]
    hv = inc.size_v / spec.pitch[0] / 2
    hh = inc.size_h / spec.pitch[1] / 2
    tol = 1e-9
    if inc.kind == "rect":
        in_v = (uv >= -hv - tol) & (uv < hv - tol)
        in_h = (uh >= -hh - tol) & (uh < hh - tol)
        return in_v[:, None] & in_h[None, :]
    rv = (uv + 0.5)[:, None] / hv
    rh = (uh + 0.5)[None, :] / hh
    return rv**2 + rh**2 <= 1.0 + tol


def body_silhouette(spec: PhantomSpec) -> np.ndarray:
    """Boolean cross-range mask of the phantom body."""
    nv, nh, _ = spec.shape
    v = ((np.arange(nv) - nv // 2) * spec.pitch[0])[:, None]
    h = ((np.arange(nh) - nh // 2) * spec.pitch[1])[None, :]
    cv, ch = spec.torso_center
    rv, rh = spec.torso_radii
    torso = ((v - cv) / rv) ** 2 + ((h - ch) / rh) ** 2 <= 1.0
    head_cv = cv - rv - spec.head_radius * 0.8
    head = (v - head_cv) ** 2 + (h - ch) ** 2 <= spec.head_radius**2
    arm_lo = cv - rv * 0.7
    arm_hi = cv + rv
    arm_in = rh + spec.arm_gap
    arms = (v >= arm_lo) & (v <= arm_hi) & (np.abs(h - ch) >= arm_in) & (np.abs(h - ch) <= arm_in + spec.arm_width)
    return torso | head | arms


def phantom_scene(spec: PhantomSpec, seed: int) -> SceneVolume:
    """Synthetic humanoid reflectivity volume with concealed inclusions.

    The body occupies one range layer per cross-range pixel (split linearly
    between the two nearest range voxels); inclusions replace the body
    reflectivity in their footprint and sit ``lift`` voxels closer to the
    array.  Background is zero.
    """
    nv, nh, nz = spec.shape
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    body = body_silhouette(spec)

    texture = _smooth_field(rng, (nv, nh), spec.pitch[:2], spec.correlation_length)
    phase = _smooth_field(rng, (nv, nh), spec.pitch[:2], spec.correlation_length)
    magnitude = spec.body_amplitude * np.exp(spec.texture * texture - 0.5 * spec.texture**2)
    reflectivity = magnitude * np.exp(1j * spec.phase_roughness * phase)

    v = ((np.arange(nv) - nv // 2) * spec.pitch[0])[:, None]
    h = ((np.arange(nh) - nh // 2) * spec.pitch[1])[None, :]
    cv, ch = spec.torso_center
    rv, rh = spec.torso_radii
    radius2 = np.minimum(((v - cv) / (2 * rv)) ** 2 + ((h - ch) / (2 * rh)) ** 2, 1.0)
    # bulge toward the array at the torso centre, receding at the edges
    depth = nz // 2 + (spec.bulge * (radius2 - 0.5)) / spec.pitch[2]
    depth = np.clip(depth, 0, nz - 1)

    lift = np.zeros((nv, nh))
    for idx, inc in enumerate(spec.inclusions):
        fp = _inclusion_footprint(inc, spec)
        if not fp.any() or _touches_outside(inc, spec):
            raise ValueError(f"inclusion {idx} lies outside the phantom grid")
        reflectivity = np.where(fp, inc.amplitude, reflectivity)
        lift = np.where(fp, inc.lift, lift)
        body = body | fp

    depth = np.clip(depth - lift, 0, nz - 1)
    lower = np.floor(depth).astype(int)
    upper = np.minimum(lower + 1, nz - 1)
    frac = depth - lower
    data = np.zeros(spec.shape, complex)
    iv, ih = np.nonzero(body)
    np.add.at(data, (iv, ih, lower[iv, ih]), (1 - frac[iv, ih]) * reflectivity[iv, ih])
    np.add.at(data, (iv, ih, upper[iv, ih]), frac[iv, ih] * reflectivity[iv, ih])
    return SceneVolume(data, spec.pitch, (0.0, 0.0, spec.standoff_r0))


def _touches_outside(inc: Inclusion, spec: PhantomSpec) -> bool:
    nv, nh, _ = spec.shape
    lo_v = (-(nv // 2) - 0.5) * spec.pitch[0]
    hi_v = (nv - nv // 2 - 0.5) * spec.pitch[0]
    lo_h = (-(nh // 2) - 0.5) * spec.pitch[1]
    hi_h = (nh - nh // 2 - 0.5) * spec.pitch[1]
    eps = 1e-12
    return (
        inc.center_v - inc.size_v / 2 < lo_v - eps
        or inc.center_v + inc.size_v / 2 > hi_v + eps
        or inc.center_h - inc.size_h / 2 < lo_h - eps
        or inc.center_h + inc.size_h / 2 > hi_h + eps
    )


def random_inclusions(rng: np.random.Generator, spec: PhantomSpec, count: int) -> tuple[Inclusion, ...]:
    """Draw concealed objects placed on the torso, for ensemble generation."""
    out = []
    cv, ch = spec.torso_center
    rv, rh = spec.torso_radii
    nv, nh, _ = spec.shape
    # grid extent per axis; objects are shrunk and shifted so they always fit
    lo = (-(nv // 2) * spec.pitch[0], -(nh // 2) * spec.pitch[1])
    hi = ((nv - nv // 2 - 1) * spec.pitch[0], (nh - nh // 2 - 1) * spec.pitch[1])

    def fit(centre, size, axis):
        size = min(size, hi[axis] - lo[axis])
        return float(np.clip(centre, lo[axis] + size / 2, hi[axis] - size / 2)), float(size)

    for _ in range(count):
        size_v = rng.uniform(0.015, 0.05)
        size_h = rng.uniform(0.015, 0.05)
        kind = str(rng.choice(["rect", "ellipse"]))
        centre_v, size_v = fit(cv + rng.uniform(-0.5, 0.5) * rv, size_v, 0)
        centre_h, size_h = fit(ch + rng.uniform(-0.5, 0.5) * rh, size_h, 1)
        out.append(
            Inclusion(
                kind=kind,
                center_v=centre_v,
                center_h=centre_h,
                size_v=size_v,
                size_h=size_h,
                amplitude=complex(rng.choice([0.3, 1.6, 2.0])),
                lift=int(rng.integers(1, 3)),
            )
        )
    return tuple(out)
