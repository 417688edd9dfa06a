"""Statistical element ranking and sparse aperture masks.

Elements are ranked by the product of the ensemble-average echo amplitude and
the inverse phase gradient at the centre frequency.  Masks draw a uniform
number per element in rank order and keep the element when the draw is at
least the sparsity threshold ``S``, until the element budget is spent.

Randomness uses numpy's PCG64 generator seeded through ``SeedSequence``.
Derived streams (sweep cells, repeated passes) are spawned with explicit
``spawn_key`` tuples, so every mask is reproducible from its seed alone.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import SystemGeometry
from .physics import EchoCube, echo_phase_gradient

logger = logging.getLogger(__name__)

MAX_PASSES = 10_000


@dataclass(frozen=True, eq=False)
class RankingMap:
    """Element importance over the aperture, normalised to a maximum of 1."""

    values: np.ndarray
    amplitude: np.ndarray
    inverse_gradient: np.ndarray

    def __post_init__(self):
        for name in ("values", "amplitude", "inverse_gradient"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be a finite non-negative 2-D map")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def order(self) -> np.ndarray:
        """Flat element indices from most to least important.

        Stable sort, so ties fall back to row-major (row, column) order.
        """
        return np.argsort(-self.values.ravel(), kind="stable")

    def ranks(self) -> np.ndarray:
        """Rank (0 = most important) of every element as a 2-D map."""
        ranks = np.empty(self.values.size, dtype=np.int64)
        ranks[self.order()] = np.arange(self.values.size)
        return ranks.reshape(self.shape)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary aperture selection.  ``S`` is ``None`` for random masks."""

    values: np.ndarray
    ratio: float
    seed: int | None = None
    S: float | None = None
    kind: str = "statistical"

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask values must be 0 or 1")
        arr = arr.astype(bool).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        expected = element_budget(self.ratio, arr.size)
        if int(arr.sum()) != expected:
            raise ValueError(f"mask has {int(arr.sum())} elements, ratio {self.ratio} requires {expected}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def count(self) -> int:
        return int(self.values.sum())

    @classmethod
    def full(cls, shape: tuple[int, int]) -> "SamplingMask":
        return cls(np.ones(shape, bool), 1.0, None, None, "full")


def element_budget(ratio: float, n_elements: int) -> int:
    """``round(ratio * N)`` with halves rounded up; must be at least one."""
    if not 0 < ratio <= 1:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {ratio}")
    budget = int(math.floor(ratio * n_elements + 0.5))
    if budget < 1:
        raise ValueError(f"ratio {ratio} selects no element out of {n_elements}")
    return budget


def _seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=key)


def derive_seed(seed: int, *key: int) -> int:
    """Child seed for a sub-task, e.g. sweep cell ``(ratio index, S index)``."""
    return int(_seed_sequence(seed, *key).generate_state(1, np.uint64)[0])


def compute_ranking(
    ensemble: Sequence[EchoCube] | Iterable[EchoCube],
    geom: SystemGeometry | None = None,
    average: str = "complex",
) -> RankingMap:
    """Importance map ``M = A * P`` from an echo ensemble.

    ``average="complex"`` takes the magnitude of the averaged complex slice;
    ``"magnitude"`` averages slice magnitudes instead.  The phase gradient is
    always taken from the averaged complex slice.
    """
    ensemble = list(ensemble)
    if not ensemble:
        raise ValueError("echo ensemble is empty")
    shape = ensemble[0].shape
    for i, echo in enumerate(ensemble):
        if echo.shape != shape:
            raise ValueError(f"echo {i} has dims {echo.shape}, expected {shape}")
        if geom is not None and echo.shape != geom.echo_shape:
            raise ValueError(f"echo {i} has dims {echo.shape}, geometry expects {geom.echo_shape}")
    if average not in ("complex", "magnitude"):
        raise ValueError(f"unknown averaging mode {average!r}")

    stack = np.stack([e.center_slice for e in ensemble])
    mean_slice = stack.mean(axis=0)
    amplitude = np.abs(mean_slice) if average == "complex" else np.abs(stack).mean(axis=0)
    grad = echo_phase_gradient(mean_slice)
    g_max = float(grad.max())
    if g_max > 0:
        inverse = 1.0 / (grad + 1e-6 * g_max)
    else:
        inverse = np.ones_like(grad)
    product = amplitude * inverse
    peak = float(product.max())
    values = product / peak if peak > 0 else np.zeros_like(product)
    return RankingMap(values, amplitude, inverse)


def design_mask(ranking: RankingMap, S: float, ratio: float, seed: int) -> SamplingMask:
    """Statistical sparse mask.

    Elements are visited in rank order; each gets a fresh draw ``r`` from
    ``Uniform[0, 1)`` and is kept when ``r >= S``.  Selection stops once
    ``round(ratio * N)`` elements are kept.  A pass that ends short of the
    budget is followed by further passes over the still-unselected elements in
    rank order (pass ``p`` uses the stream spawned with key ``(p,)``).  With
    ``S == 1`` no draw can pass, so the budget is filled in rank order.
    """
    if not 0 <= S <= 1:
        raise ValueError(f"sparsity S must lie in [0, 1], got {S}")
    n = ranking.values.size
    budget = element_budget(ratio, n)
    order = ranking.order()
    chosen = np.zeros(n, dtype=bool)
    remaining = order
    taken = 0
    n_passes = MAX_PASSES if S < 1 else 0
    for p in range(n_passes):
        rng = np.random.default_rng(_seed_sequence(seed, p))
        draws = rng.random(remaining.size)
        hits = remaining[draws >= S][: budget - taken]
        chosen[hits] = True
        taken += hits.size
        if taken == budget:
            break
        remaining = remaining[~chosen[remaining]]
    if taken < budget:
        fill = order[~chosen[order]][: budget - taken]
        chosen[fill] = True
    return SamplingMask(chosen.reshape(ranking.shape), ratio, seed, S, "statistical")


def random_mask(geom: SystemGeometry | tuple[int, int], ratio: float, seed: int) -> SamplingMask:
    """Uniformly random subset of exactly ``round(ratio * N)`` elements."""
    shape = geom.aperture_shape if isinstance(geom, SystemGeometry) else tuple(geom)
    n = int(np.prod(shape))
    budget = element_budget(ratio, n)
    rng = np.random.default_rng(_seed_sequence(seed))
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, size=budget, replace=False)] = True
    return SamplingMask(chosen.reshape(shape), ratio, seed, None, "random")


def apply_mask(echo: EchoCube, mask: SamplingMask) -> EchoCube:
    """Zero every unsampled element across all frequencies."""
    if mask.shape != echo.geometry.aperture_shape:
        raise ValueError(f"mask dims {mask.shape} do not match aperture {echo.geometry.aperture_shape}")
    return EchoCube(echo.data * mask.values[:, :, None], echo.geometry, mask.values)


def mean_rank(mask: SamplingMask, ranking: RankingMap) -> float:
    """Average importance rank of the selected elements (lower is better)."""
    return float(ranking.ranks()[mask.values].mean())


@dataclass
class SweepResult:
    """Mean metrics per (ratio, S) cell plus the best S per ratio."""

    ratios: list[float]
    s_values: list[float]
    rmse: np.ndarray
    psnr: np.ndarray
    ssim: np.ndarray
    counts: np.ndarray = field(default=None)

    def best_s(self) -> dict[float, float]:
        """PSNR-maximising S per ratio (first one on ties)."""
        return {r: self.s_values[int(np.argmax(self.psnr[i]))] for i, r in enumerate(self.ratios)}

    def rows(self) -> list[tuple[float, float, float, float, float]]:
        return [
            (r, s, float(self.rmse[i, j]), float(self.psnr[i, j]), float(self.ssim[i, j]))
            for i, r in enumerate(self.ratios)
            for j, s in enumerate(self.s_values)
        ]


def dedupe(values: Iterable[float], what: str = "grid") -> list[float]:
    out: list[float] = []
    for v in values:
        v = float(v)
        if v in out:
            logger.warning("duplicate value %s in %s dropped", v, what)
            continue
        out.append(v)
    return out


def sweep_sparsity(
    ensemble: Sequence[EchoCube],
    geom: SystemGeometry,
    ratios: Sequence[float],
    s_values: Sequence[float],
    reconstructor: Callable[[EchoCube], np.ndarray],
    reference: Sequence[np.ndarray],
    held_out: Sequence[EchoCube] | None = None,
    seed: int = 0,
    ranking: RankingMap | None = None,
) -> SweepResult:
    """Score statistical masks over a (ratio, S) grid.

    The ranking is computed from ``ensemble`` (unless given); masks are applied
    to ``held_out`` echoes (defaults to the ensemble itself), reconstructed with
    ``reconstructor`` and scored against the matching ``reference`` volumes.
    Cell ``(i, j)`` uses seed stream ``(seed, i, j)``.
    """
    from . import metrics

    ratios = dedupe(ratios, "ratio grid")
    s_values = dedupe(s_values, "S grid")
    if not ratios or not s_values:
        raise ValueError("ratio and S grids must be non-empty")
    targets = list(held_out) if held_out is not None else list(ensemble)
    if len(reference) != len(targets):
        raise ValueError("need one reference volume per evaluated echo")
    if ranking is None:
        ranking = compute_ranking(ensemble, geom)
    ref_proj = [metrics.max_projection(r) for r in reference]

    shape = (len(ratios), len(s_values))
    rmse, psnr, ssim = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    counts = np.zeros(shape, dtype=int)
    for i, ratio in enumerate(ratios):
        for j, s in enumerate(s_values):
            mask = design_mask(ranking, s, ratio, derive_seed(seed, i, j))
            scores = []
            for echo, ref in zip(targets, ref_proj):
                vol = reconstructor(apply_mask(echo, mask))
                scores.append(metrics.evaluate(ref, metrics.max_projection(vol)))
            rmse[i, j] = np.mean([sc.rmse for sc in scores])
            psnr[i, j] = np.mean([sc.psnr for sc in scores])
            ssim[i, j] = np.mean([sc.ssim for sc in scores])
            counts[i, j] = mask.count
    return SweepResult(ratios, s_values, rmse, psnr, ssim, counts)
