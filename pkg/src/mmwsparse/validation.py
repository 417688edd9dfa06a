"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import math
from typing import Iterable

from .physics import EchoCube


def check_echo(echo) -> EchoCube:
    if not isinstance(echo, EchoCube):
        raise TypeError(f"expected an EchoCube, got {type(echo).__name__}")
    return echo


def check_echoes(X) -> tuple[list[EchoCube], bool]:
    """Normalise ``X`` to a list of echoes; the flag says whether one echo was passed."""
    if isinstance(X, EchoCube):
        return [X], True
    if not isinstance(X, Iterable):
        raise TypeError("expected an EchoCube or an iterable of EchoCubes")
    echoes = [check_echo(e) for e in X]
    if not echoes:
        raise ValueError("no echoes given")
    shape = echoes[0].shape
    for i, e in enumerate(echoes):
        if e.shape != shape:
            raise ValueError(f"echo {i} has dims {e.shape}, expected {shape}")
    return echoes, False


def check_ratio(ratio: float) -> float:
    ratio = float(ratio)
    if not (0 < ratio <= 1):
        raise ValueError(f"sampling ratio must lie in (0, 1], got {ratio}")
    return ratio


def check_unit(value: float, name: str) -> float:
    value = float(value)
    if not (0 <= value <= 1) or math.isnan(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
