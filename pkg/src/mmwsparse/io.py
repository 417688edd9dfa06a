"""File formats: binary cubes, masks and ranking maps, text configs, images and CSV.

Binary layouts (all little-endian):

``MMWCUBE1``
    magic, three u32 dims, then interleaved (real, imag) float64 pairs in
    row-major order.
``MMWMASK1``
    magic, two u32 dims, row-major bits packed MSB-first and padded to a byte
    boundary, then a text footer of ``key=value`` lines (S, ratio, seed, kind).
``MMWRANK1``
    magic, two u32 dims, then the importance map, the average amplitude and
    the inverse phase gradient as float64 planes.

Every writer produces the same bytes for the same object, so write -> read ->
write is byte-identical.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
import struct
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .geometry import SceneVolume, SystemGeometry
from .metrics import ProjectionImage, Scores
from .physics import EchoCube
from .sampling import RankingMap, SamplingMask

CUBE_MAGIC = b"MMWCUBE1"
MASK_MAGIC = b"MMWMASK1"
RANK_MAGIC = b"MMWRANK1"

METRIC_FIELDS = ("scene_id", "mask_type", "ratio", "S", "seed", "method", "rmse", "psnr", "ssim")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


# --- plain-text config ------------------------------------------------------------


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped.

    Raises :class:`FormatError` naming the line number for malformed or
    duplicated keys.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not key.replace("_", "").replace(".", "").isalnum():
            raise FormatError(f"{source}:{lineno}: invalid key {key!r}")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return "none" if value is None else str(value)


def format_config(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def coerce(value: str, kind: type, key: str = "value"):
    """Convert a config string to ``kind``; ``none`` maps to ``None``."""
    text = value.strip()
    if text.lower() == "none":
        return None
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text, 0)
        return kind(text)
    except ValueError:
        raise FormatError(f"{key}: cannot interpret {value!r} as {kind.__name__}") from None


def geometry_to_config(geom: SystemGeometry) -> str:
    return format_config(dataclasses.asdict(geom))


def geometry_from_config(values: dict[str, str], base: SystemGeometry | None = None) -> SystemGeometry:
    """Build a geometry from config entries, falling back to ``base`` for missing fields."""
    base = base or SystemGeometry()
    changes = {}
    for f in dataclasses.fields(SystemGeometry):
        if f.name in values:
            kind = type(getattr(base, f.name))
            changes[f.name] = coerce(values[f.name], kind, f.name)
    return dataclasses.replace(base, **changes)


# --- cubes --------------------------------------------------------------------------


def cube_bytes(data: np.ndarray) -> bytes:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"cube must be 3-D, got shape {data.shape}")
    pairs = np.empty(data.shape + (2,), "<f8")
    pairs[..., 0] = data.real
    pairs[..., 1] = data.imag if np.iscomplexobj(data) else 0.0
    return CUBE_MAGIC + struct.pack("<3I", *data.shape) + pairs.tobytes()


def cube_from_bytes(raw: bytes, source: str = "<cube>") -> np.ndarray:
    if raw[:8] != CUBE_MAGIC:
        raise FormatError(f"{source}: not an MMWCUBE1 file")
    if len(raw) < 20:
        raise FormatError(f"{source}: truncated header")
    dims = struct.unpack("<3I", raw[8:20])
    expected = 20 + 16 * int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for dims {dims}, found {len(raw)}")
    pairs = np.frombuffer(raw, "<f8", offset=20).reshape(dims + (2,))
    return (pairs[..., 0] + 1j * pairs[..., 1]).astype(complex)


def _write(path: Path, payload: bytes | str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(payload, str):
            path.write_text(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def _read(path: Path) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc


def geometry_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".geom")


def write_cube(path: str | Path, data: np.ndarray, geom: SystemGeometry | None = None) -> Path:
    """Write a cube; with ``geom`` a ``.geom`` text file is written next to it."""
    out = _write(Path(path), cube_bytes(data))
    if geom is not None:
        _write(geometry_path(out), geometry_to_config(geom))
    return out


def read_cube(path: str | Path) -> np.ndarray:
    return cube_from_bytes(_read(Path(path)), str(path))


def read_geometry(path: str | Path) -> SystemGeometry:
    gpath = geometry_path(path)
    if not gpath.exists():
        raise FileNotFoundError(f"missing geometry file {gpath}")
    return geometry_from_config(read_config(gpath))


def write_echo(path: str | Path, echo: EchoCube) -> Path:
    return write_cube(path, echo.data, echo.geometry)


def read_echo(path: str | Path) -> EchoCube:
    data = read_cube(path)
    geom = read_geometry(path)
    if data.shape != geom.echo_shape:
        raise FormatError(f"{path}: cube dims {data.shape} do not match its geometry {geom.echo_shape}")
    return EchoCube(data, geom)


def write_volume(path: str | Path, vol: SceneVolume, geom: SystemGeometry | None = None) -> Path:
    return write_cube(path, vol.data, geom)


def read_volume(path: str | Path) -> SceneVolume:
    data = read_cube(path)
    gpath = geometry_path(path)
    if gpath.exists():
        geom = read_geometry(path)
        from .geometry import scene_origin

        return SceneVolume(data, geom.scene_pitch, scene_origin(geom))
    return SceneVolume(data, (1.0, 1.0, 1.0))


# --- masks and rankings ----------------------------------------------------------------


def mask_bytes(mask: SamplingMask) -> bytes:
    rows, cols = mask.shape
    bits = np.packbits(mask.values.ravel().astype(np.uint8)).tobytes()
    footer = format_config({"S": mask.S, "ratio": float(mask.ratio), "seed": mask.seed, "kind": mask.kind})
    return MASK_MAGIC + struct.pack("<2I", rows, cols) + bits + footer.encode("ascii")


def mask_from_bytes(raw: bytes, source: str = "<mask>") -> SamplingMask:
    if raw[:8] != MASK_MAGIC:
        raise FormatError(f"{source}: not an MMWMASK1 file")
    rows, cols = struct.unpack("<2I", raw[8:16])
    n = rows * cols
    nbytes = (n + 7) // 8
    if len(raw) < 16 + nbytes:
        raise FormatError(f"{source}: truncated bit field")
    bits = np.unpackbits(np.frombuffer(raw, np.uint8, nbytes, 16))[:n]
    meta = parse_config(raw[16 + nbytes:].decode("ascii"), source + " footer")
    for key in ("ratio", "kind"):
        if key not in meta:
            raise FormatError(f"{source}: footer lacks {key!r}")
    return SamplingMask(
        bits.reshape(rows, cols).astype(bool),
        coerce(meta["ratio"], float, "ratio"),
        coerce(meta.get("seed", "none"), int, "seed"),
        coerce(meta.get("S", "none"), float, "S"),
        meta["kind"],
    )


def write_mask(path: str | Path, mask: SamplingMask) -> Path:
    return _write(Path(path), mask_bytes(mask))


def read_mask(path: str | Path) -> SamplingMask:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    return mask_from_bytes(_read(path), str(path))


def ranking_bytes(ranking: RankingMap) -> bytes:
    planes = np.stack([ranking.values, ranking.amplitude, ranking.inverse_gradient]).astype("<f8")
    return RANK_MAGIC + struct.pack("<2I", *ranking.shape) + planes.tobytes()


def ranking_from_bytes(raw: bytes, source: str = "<ranking>") -> RankingMap:
    if raw[:8] != RANK_MAGIC:
        raise FormatError(f"{source}: not an MMWRANK1 file")
    rows, cols = struct.unpack("<2I", raw[8:16])
    if len(raw) != 16 + 3 * 8 * rows * cols:
        raise FormatError(f"{source}: size does not match dims {rows}x{cols}")
    planes = np.frombuffer(raw, "<f8", offset=16).reshape(3, rows, cols)
    return RankingMap(planes[0], planes[1], planes[2])


def write_ranking(path: str | Path, ranking: RankingMap) -> Path:
    return _write(Path(path), ranking_bytes(ranking))


def read_ranking(path: str | Path) -> RankingMap:
    return ranking_from_bytes(_read(Path(path)), str(path))


# --- images -----------------------------------------------------------------------------


def pgm_bytes(pixels: np.ndarray) -> bytes:
    """Binary 8-bit PGM (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("PGM export expects a 2-D uint8 array")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def pgm_from_bytes(raw: bytes, source: str = "<pgm>") -> np.ndarray:
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise FormatError(f"{source}: unsupported PGM header")
    w, h = (int(v) for v in parts[1].split())
    body = parts[3]
    if len(body) != w * h:
        raise FormatError(f"{source}: expected {w * h} pixels, found {len(body)}")
    return np.frombuffer(body, np.uint8).reshape(h, w).copy()


def write_pgm(path: str | Path, pixels: np.ndarray) -> Path:
    return _write(Path(path), pgm_bytes(pixels))


def read_pgm(path: str | Path) -> np.ndarray:
    return pgm_from_bytes(_read(Path(path)), str(path))


def heatmap(values: np.ndarray) -> np.ndarray:
    """Scale a non-negative map so its maximum becomes 255."""
    values = np.asarray(values, dtype=float)
    peak = values.max() if values.size else 0.0
    if peak <= 0 or not math.isfinite(peak):
        return np.zeros(values.shape, np.uint8)
    return np.floor(np.clip(values / peak, 0, 1) * 255 + 0.5).astype(np.uint8)


def projection_pixels(image: ProjectionImage) -> np.ndarray:
    return image.to_uint8()


def curve_plot(x: Iterable[float], y: Iterable[float], size: tuple[int, int] = (120, 160)) -> np.ndarray:
    """Rasterise a polyline onto a white canvas (black curve, grey frame)."""
    x = np.asarray(list(x), float)
    y = np.asarray(list(y), float)
    h, w = size
    img = np.full((h, w), 255, np.uint8)
    img[[0, -1], :] = 128
    img[:, [0, -1]] = 128
    finite = np.isfinite(y)
    if x.size == 0 or not finite.any():
        return img
    y = np.where(finite, y, np.nanmax(np.where(finite, y, np.nan)))

    def norm(a, n):
        lo, hi = a.min(), a.max()
        return np.full(a.shape, (n - 1) / 2) if hi == lo else (a - lo) / (hi - lo) * (n - 5) + 2

    px = norm(x, w)
    py = (h - 1) - norm(y, h)
    if x.size == 1:
        img[int(round(py[0])), int(round(px[0]))] = 0
    for (x0, y0), (x1, y1) in zip(zip(px[:-1], py[:-1]), zip(px[1:], py[1:])):
        steps = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        t = np.linspace(0, 1, steps + 1)
        img[np.rint(y0 + t * (y1 - y0)).astype(int), np.rint(x0 + t * (x1 - x0)).astype(int)] = 0
    return img


# --- CSV and sidecars -------------------------------------------------------------------------


def _num(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metric_row(scene_id: str, mask_type: str, ratio, S, seed, method: str, scores: Scores) -> list[str]:
    row = [str(scene_id), mask_type, _num(ratio), _num(S), _num(seed), method, _num(scores.rmse), _num(scores.psnr), _num(scores.ssim)]
    assert len(row) == len(METRIC_FIELDS)
    return row


def append_csv(path: str | Path, row: list[str], header: Iterable[str] = METRIC_FIELDS) -> Path:
    """Append one row, writing the header first when the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(list(header))
            writer.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_csv(path: str | Path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    lines = [",".join(header)] + [",".join(_num(v) for v in row) for row in rows]
    return _write(Path(path), "\n".join(lines) + "\n")


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def report_sidecar(losses: Iterable[float], config: dict[str, Any]) -> str:
    """Loss trace (one value per line) followed by a commented config echo."""
    lines = [repr(float(v)) for v in losses]
    lines += [f"# {k} = {format_value(v)}" for k, v in config.items()]
    return "\n".join(lines) + "\n"


def read_losses(path: str | Path) -> list[float]:
    return [float(line) for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]


# --- manifest ---------------------------------------------------------------------------------


class RunManifest:
    """JSON record of a command run, written at start and finalised at the end."""

    def __init__(self, path: str | Path, command: str, config: dict[str, Any], seed: int | None, inputs: list[str]):
        from . import __version__

        self.path = Path(path)
        self.data: dict[str, Any] = {
            "command": command,
            "version": __version__,
            "seed": seed,
            "config": {k: format_value(v) for k, v in config.items()},
            "inputs": [str(p) for p in inputs],
            "outputs": [],
            "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "finished": None,
            "status": "running",
        }
        self._flush()

    def add_output(self, path: str | Path) -> None:
        self.data["outputs"].append(str(path))

    def finish(self, status: str = "ok") -> None:
        self.data["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        self.data["status"] = status
        self._flush()

    def _flush(self) -> None:
        _write(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")
