"""Image/signal quality metrics: RMSE, PSNR, SNR, SSIM, and the atom
recovery ratio used by the dictionary-recovery experiments."""

from __future__ import annotations

import math

import numpy as np

# 11x11 Gaussian window, sigma 1.5, normalized to sum 1 (standard SSIM setup).
_SSIM_SIDE = 11
_SSIM_SIGMA = 1.5


def rmse(x, xhat) -> float:
    """sqrt(||x - xhat||_F^2 / n_elements)."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    diff = x - xhat
    return float(np.sqrt(np.sum(diff * diff) / x.size))


def atom_recovery_ratio(d_true, d_learned, threshold: float = 0.01) -> float:
    """Fraction of true atoms within ``threshold`` Euclidean distance of some
    learned atom, up to sign.  A learned atom may match several true atoms.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    dt = np.asarray(d_true, dtype=np.float64)
    dl = np.asarray(d_learned, dtype=np.float64)
    if dt.shape[0] != dl.shape[0]:
        raise ValueError(f"atom length mismatch: {dt.shape[0]} vs {dl.shape[0]}")
    nt = np.sum(dt * dt, axis=0)
    nl = np.sum(dl * dl, axis=0)
    cross = np.abs(dt.T @ dl)                       # best sign per pair
    dist_sq = nt[:, None] + nl[None, :] - 2.0 * cross
    best = np.sqrt(np.maximum(dist_sq.min(axis=1), 0.0))
    return float(np.mean(best < threshold))


def psnr(ref, test, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def snr_db(ref, estimate) -> float:
    """10 log10(||ref||^2 / ||ref - estimate||^2); +inf for identical inputs."""
    ref = np.asarray(ref, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if ref.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {estimate.shape}")
    err = float(np.sum((ref - estimate) ** 2))
    if err == 0.0:
        return math.inf
    sig = float(np.sum(ref * ref))
    if sig == 0.0:
        return -math.inf
    return 10.0 * math.log10(sig / err)


def _ssim_window() -> np.ndarray:
    half = (_SSIM_SIDE - 1) / 2.0
    coords = np.arange(_SSIM_SIDE) - half
    g = np.exp(-(coords ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _windowed_moments(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(img, win.shape)
    return np.tensordot(views, win, axes=([2, 3], [0, 1]))


def ssim(ref, test) -> float:
    """Mean local SSIM over all 11x11 Gaussian windows fully inside the image
    (sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1)."""
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < _SSIM_SIDE:
        raise ValueError(f"images must be 2-D with min dimension >= {_SSIM_SIDE}")
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    win = _ssim_window()
    mu_a = _windowed_moments(a, win)
    mu_b = _windowed_moments(b, win)
    aa = _windowed_moments(a * a, win) - mu_a * mu_a
    bb = _windowed_moments(b * b, win) - mu_b * mu_b
    ab = _windowed_moments(a * b, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (aa + bb + c2)
    return float(np.mean(num / den))
