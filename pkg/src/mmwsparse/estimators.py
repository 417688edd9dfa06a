"""scikit-learn style wrappers around mask design and reconstruction.

Mask designers learn an aperture mask in ``fit`` and thin echoes in
``transform``.  Reconstructors are stateless apart from bookkeeping: ``fit``
only validates, ``transform`` maps echoes to volumes, and ``score`` returns
the mean PSNR against reference volumes.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics, recon, sampling
from .validation import check_echoes, check_ratio, check_unit


class _MaskTransformer(BaseEstimator, TransformerMixin):
    def transform(self, X):
        check_is_fitted(self, "mask_")
        echoes, single = check_echoes(X)
        out = [sampling.apply_mask(e, self.mask_) for e in echoes]
        return out[0] if single else out


class StatisticalMaskDesigner(_MaskTransformer):
    """Rank elements on an echo ensemble and draw a statistical sparse mask.

    Fitted attributes: ``ranking_`` (:class:`RankingMap`) and ``mask_``.
    """

    def __init__(self, ratio=0.25, S=0.5, seed=0, average="complex"):
        self.ratio = ratio
        self.S = S
        self.seed = seed
        self.average = average

    def fit(self, X, y=None):
        echoes, _ = check_echoes(X)
        ratio = check_ratio(self.ratio)
        s = check_unit(self.S, "S")
        self.ranking_ = sampling.compute_ranking(echoes, average=self.average)
        self.mask_ = sampling.design_mask(self.ranking_, s, ratio, int(self.seed))
        return self


class RandomMaskSampler(_MaskTransformer):
    """Uniformly random aperture subset of the requested size."""

    def __init__(self, ratio=0.25, seed=0):
        self.ratio = ratio
        self.seed = seed

    def fit(self, X, y=None):
        echoes, _ = check_echoes(X)
        self.mask_ = sampling.random_mask(echoes[0].geometry.aperture_shape, check_ratio(self.ratio), int(self.seed))
        return self


class _Reconstructor(BaseEstimator, TransformerMixin):
    method = "rma"

    def _config(self) -> recon.ReconConfig:
        return recon.ReconConfig(method=self.method)

    def fit(self, X, y=None):
        check_echoes(X)
        self.config_ = self._config()
        return self

    def transform(self, X):
        """Reconstruct each echo using the mask attached to it (full aperture if none)."""
        check_is_fitted(self, "config_")
        echoes, single = check_echoes(X)
        self.reports_ = [recon.reconstruct(e, e.mask, e.geometry, self.config_) for e in echoes]
        vols = [r.volume for r in self.reports_]
        return vols[0] if single else vols

    def score(self, X, y):
        """Mean PSNR of the reconstructions against the reference volumes ``y``."""
        vols = self.transform(X)
        vols = vols if isinstance(vols, list) else [vols]
        refs = y if isinstance(y, (list, tuple)) else [y]
        if len(refs) != len(vols):
            raise ValueError("need one reference volume per echo")
        return float(np.mean([metrics.evaluate_volumes(r, v).psnr for r, v in zip(refs, vols)]))


class RMAReconstructor(_Reconstructor):
    """Zero-filled range migration."""

    method = "rma"


class ADMMReconstructor(_Reconstructor):
    method = "admm"

    def __init__(self, rho=1.0, lam=None, lambda_scale=0.05, n_iter=30, cg_iter=20, tol=1e-5):
        self.rho = rho
        self.lam = lam
        self.lambda_scale = lambda_scale
        self.n_iter = n_iter
        self.cg_iter = cg_iter
        self.tol = tol

    def _config(self):
        return recon.ReconConfig(
            method="admm", admm_rho=self.rho, admm_lambda=self.lam, admm_lambda_scale=self.lambda_scale,
            admm_iterations=self.n_iter, cg_iterations=self.cg_iter, tolerance=self.tol,
        )


class UntrainedReconstructor(_Reconstructor):
    """Per-measurement fit of a randomly initialised complex network."""

    method = "untrained"

    def __init__(self, iterations=100, learning_rate=1e-3, hidden=32, n_blocks=5, tv_weight=None, tv_scale=1e-3, early_stop=None, seed=0):
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.hidden = hidden
        self.n_blocks = n_blocks
        self.tv_weight = tv_weight
        self.tv_scale = tv_scale
        self.early_stop = early_stop
        self.seed = seed

    def _config(self):
        return recon.ReconConfig(
            method="untrained", iterations=self.iterations, learning_rate=self.learning_rate, hidden=self.hidden,
            n_blocks=self.n_blocks, tv_weight=self.tv_weight, tv_scale=self.tv_scale, early_stop=self.early_stop, seed=self.seed,
        )

    @property
    def loss_curve_(self):
        check_is_fitted(self, "reports_")
        return self.reports_[-1].losses
