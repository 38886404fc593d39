"""Guided super-resolution: joint-code each LR/guidance patch pair over the
learned coupled dictionaries, reconstruct HR patches from the common and
target-unique codes, and reassemble with overlap averaging.

The image pipeline follows the testing recipe: bicubic-upscale the LR input
to the target size, walk aligned overlapping patches of the upscaled input
and the guidance image, remove each patch's mean before coding, add the
upscaled-LR patch's mean back to its HR estimate (the DC component survives
upscaling, and it belongs to the target modality), and average overlaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CoupledDictionarySet
from .imaging import Image, PatchGrid, bicubic_resize, extract_patches, reassemble
from .sparse_coding import (JointDictionary, SignalPair, ista_joint, omp_batch,
                            omp_joint, stack_joint_dictionary)


@dataclass(frozen=True)
class SrConfig:
    """Pipeline settings: upscale factor, patch side (patch_side**2 must be
    the dictionary's N), overlap stride, coding budget, and solver choice
    ("omp", or "ista" with its lambda)."""

    scale: int
    patch_side: int
    sparsity: int
    overlap_stride: int = 1
    solver: str = "omp"
    ista_lambda: float = 0.01
    ista_max_iter: int = 500
    ista_tol: float = 1e-6

    def __post_init__(self):
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        if self.patch_side < 1:
            raise ValueError("patch_side must be >= 1")
        if not 1 <= self.overlap_stride <= self.patch_side:
            raise ValueError("overlap_stride must be in [1, patch_side]")
        if self.sparsity < 1:
            raise ValueError("sparsity must be >= 1")
        if self.solver not in ("omp", "ista"):
            raise ValueError(f"unknown solver '{self.solver}'")
        if self.solver == "ista" and not self.ista_lambda > 0:
            raise ValueError("ista_lambda must be positive")


def hr_dimensions(lr_height: int, lr_width: int, scale: int) -> tuple[int, int]:
    """Target size under the ceil rounding rule."""
    return (int(math.ceil(lr_height * scale)), int(math.ceil(lr_width * scale)))


def super_resolve_patch(x_l, y, dset: CoupledDictionarySet, sparsity: int) -> np.ndarray:
    """Code one DC-removed patch pair and reconstruct its HR estimate
    psi_c_h z + psi_h u (the guidance-unique part v is discarded)."""
    jd = stack_joint_dictionary(dset.psi_c_l, dset.psi_l, dset.phi_c, dset.phi)
    code = omp_joint(SignalPair(x_l=x_l, y=y), jd, sparsity)
    return dset.psi_c_h @ code.z + dset.psi_h @ code.u


def _code_pairs(jd: JointDictionary, x_cols: np.ndarray, y_cols: np.ndarray,
                cfg: SrConfig, workers: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Batch-code aligned patch columns; returns (Z, U) row blocks."""
    signals = np.vstack([x_cols, y_cols])
    if cfg.solver == "omp":
        codes, _ = omp_batch(jd.stacked, signals, cfg.sparsity, workers=workers)
    else:
        codes = np.zeros((jd.stacked.shape[1], signals.shape[1]))
        for j in range(signals.shape[1]):
            c = ista_joint(SignalPair(x_l=x_cols[:, j], y=y_cols[:, j]), jd,
                           cfg.ista_lambda, max_iter=cfg.ista_max_iter,
                           tol=cfg.ista_tol)
            codes[:, j] = np.concatenate([c.z, c.u, c.v])
    k = jd.k
    return codes[:k], codes[k:2 * k]


def super_resolve_image(lr_image: Image, guidance_image: Image,
                        dset: CoupledDictionarySet, cfg: SrConfig,
                        workers: int | None = None) -> Image:
    """Full guided pipeline; guidance dimensions define the target size and
    must match ceil(LR size x scale)."""
    n = cfg.patch_side ** 2
    if dset.n != n:
        raise ValueError(f"dictionary N={dset.n} does not match "
                         f"patch_side^2={n}")
    if dset.m != n:
        raise ValueError("image pipeline expects M == N (upscaled-LR patches); "
                         f"dictionary has M={dset.m}, N={dset.n}")
    hr_h, hr_w = hr_dimensions(lr_image.height, lr_image.width, cfg.scale)
    if (guidance_image.height, guidance_image.width) != (hr_h, hr_w):
        raise ValueError(
            f"guidance size {guidance_image.pixels.shape} does not match the "
            f"target HR size {(hr_h, hr_w)}")

    upscaled = bicubic_resize(lr_image, hr_w, hr_h)
    grid_x = extract_patches(upscaled, cfg.patch_side, cfg.overlap_stride)
    grid_y = extract_patches(guidance_image, cfg.patch_side, cfg.overlap_stride)

    jd = stack_joint_dictionary(dset.psi_c_l, dset.psi_l, dset.phi_c, dset.phi)
    z, u = _code_pairs(jd, grid_x.patches, grid_y.patches, cfg, workers)
    hr_patches = dset.psi_c_h @ z + dset.psi_h @ u

    out_grid = PatchGrid(patch_side=cfg.patch_side, origins=grid_x.origins,
                         patches=hr_patches, dc_means=grid_x.dc_means)
    out = reassemble(out_grid, hr_w, hr_h)
    return Image(np.clip(out.pixels, 0.0, 1.0))


def super_resolve_without_side_info(lr_image: Image, dset_single,
                                    cfg: SrConfig,
                                    workers: int | None = None) -> Image:
    """Same pipeline with the guidance branch removed: codes come from the
    2K-column dictionary [psi_c_l, psi_l] alone.  ``dset_single`` needs the
    psi_c_l/psi_l/psi_c_h/psi_h attributes (a coupled set also qualifies)."""
    n = cfg.patch_side ** 2
    if dset_single.psi_c_l.shape[0] != n:
        raise ValueError("dictionary patch dimension does not match patch_side^2")
    hr_h, hr_w = hr_dimensions(lr_image.height, lr_image.width, cfg.scale)

    upscaled = bicubic_resize(lr_image, hr_w, hr_h)
    grid_x = extract_patches(upscaled, cfg.patch_side, cfg.overlap_stride)

    lr_dict = np.hstack([dset_single.psi_c_l, dset_single.psi_l])
    codes, _ = omp_batch(lr_dict, grid_x.patches, cfg.sparsity, workers=workers)
    k = dset_single.psi_c_l.shape[1]
    hr_patches = dset_single.psi_c_h @ codes[:k] + dset_single.psi_h @ codes[k:]

    out_grid = PatchGrid(patch_side=cfg.patch_side, origins=grid_x.origins,
                         patches=hr_patches, dc_means=grid_x.dc_means)
    out = reassemble(out_grid, hr_w, hr_h)
    return Image(np.clip(out.pixels, 0.0, 1.0))
