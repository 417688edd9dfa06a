"""Sparse-array millimeter-wave imaging toolkit.

Echo simulation on a co-registered aperture/voxel lattice, statistical
antenna-element ranking and thinning, and reconstruction by range migration,
TV-regularised ADMM or an untrained complex convolutional network.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .geometry import (
    PhantomSpec,
    PointScattererSet,
    SceneVolume,
    SystemGeometry,
    default_geometry,
    desk_geometry,
    phantom_scene,
    scene_from_points,
)
from .metrics import Scores, evaluate, evaluate_volumes, max_projection, psnr, rmse, ssim
from .physics import EchoCube, adjoint_operator, brute_force_echo, forward_operator, rma_reconstruct
from .recon import ReconConfig, ReconReport, admm_reconstruct, complex_tv, rma_zero_fill, untrained_reconstruct
from .sampling import RankingMap, SamplingMask, apply_mask, compute_ranking, design_mask, random_mask, sweep_sparsity
from .estimators import ADMMReconstructor, RandomMaskSampler, RMAReconstructor, StatisticalMaskDesigner, UntrainedReconstructor

__all__ = [name for name in dir() if not name.startswith("_")]
