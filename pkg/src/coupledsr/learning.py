"""Coupled dictionary learning.

Step 1 alternates global sparse coding with K-SVD-style local updates to
learn the LR pair [psi_c_l, psi_l] and the guidance pair [phi_c, phi] along
with the code batch (Z, U, V); it never sees HR data.  Step 2 then solves the
HR pair [psi_c_h, psi_h] in closed form from the final codes, since HR
patches share the codes of their LR counterparts.

Each atom update replaces the atom with the top left singular vector of the
restricted residual and refreshes the atom's code row with the matching
singular pair (the rank-1 coupling of K-SVD), so the update-phase objective
is non-increasing atom by atom.  The singular vector's sign is fixed by
forcing its first nonzero entry positive; the code row absorbs the flip.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import CoupledDictionarySet, TrainConfig, TrainingBatch
from .sparse_coding import omp_batch, stack_joint_dictionary

AtomUpdateCallback = Callable[[str, int, dict[str, np.ndarray]], None]


@dataclass(frozen=True)
class CodeBatch:
    """Code matrices Z, U, V, each K x T; per-column total nonzeros stay
    within the coding budget."""

    z: np.ndarray
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class LrGuidanceDicts:
    """The Step-1 dictionaries: LR pair and guidance pair."""

    psi_c_l: np.ndarray
    psi_l: np.ndarray
    phi_c: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True)
class SingleModalitySet:
    """Dictionaries of the no-guidance baseline: a 2K-atom LR dictionary
    [psi_c_l, psi_l] plus the regressed HR pair."""

    psi_c_l: np.ndarray
    psi_l: np.ndarray
    psi_c_h: np.ndarray
    psi_h: np.ndarray


@dataclass
class TrainingTrace:
    """Per-coding-pass RMSE of both branches plus wall time per update phase."""

    rmse_x: list[float] = field(default_factory=list)
    rmse_y: list[float] = field(default_factory=list)
    phase_seconds: list[float] = field(default_factory=list)


def init_dictionaries(m: int, n: int, k: int, rng: np.random.Generator) -> LrGuidanceDicts:
    """I.i.d. standard-Gaussian initialization; stacked common pairs and
    unique atoms are normalized to unit l2 norm."""
    common = rng.standard_normal((m + n, k))
    common /= np.linalg.norm(common, axis=0)
    psi_l = rng.standard_normal((m, k))
    psi_l /= np.linalg.norm(psi_l, axis=0)
    phi = rng.standard_normal((n, k))
    phi /= np.linalg.norm(phi, axis=0)
    return LrGuidanceDicts(psi_c_l=common[:m].copy(), psi_l=psi_l,
                           phi_c=common[m:].copy(), phi=phi)


def global_sparse_coding(x_l, y, dicts: LrGuidanceDicts, budget: int,
                         workers: int | None = None) -> CodeBatch:
    """Code every sample column of [x_l; y] jointly with the dictionaries
    fixed.  Columns are independent; output is worker-count invariant."""
    x_l = np.asarray(x_l, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    jd = stack_joint_dictionary(dicts.psi_c_l, dicts.psi_l, dicts.phi_c, dicts.phi)
    if x_l.shape[0] != jd.m or y.shape[0] != jd.n:
        raise ValueError("data row counts do not match dictionary dims")
    if x_l.shape[1] != y.shape[1]:
        raise ValueError("x_l and y must have the same number of columns")
    signals = np.vstack([x_l, y])
    codes, _ = omp_batch(jd.stacked, signals, budget, workers=workers)
    k = jd.k
    return CodeBatch(z=codes[:k], u=codes[k:2 * k], v=codes[2 * k:])


def _top_left_singular_vector(e: np.ndarray, warm: np.ndarray | None = None) -> np.ndarray:
    """Top left singular vector of ``e`` by power iteration on e e^T, with a
    full-SVD fallback when the iteration has not converged (near-degenerate
    leading singular values)."""
    s = e @ e.T
    d = e.shape[0]
    v = None
    if warm is not None:
        nw = np.linalg.norm(warm)
        if nw > 0:
            v = warm / nw
    if v is None:
        v = np.full(d, 1.0 / np.sqrt(d))
    for _ in range(300):
        w = s @ v
        lam = np.linalg.norm(w)
        if lam == 0.0:
            break
        w /= lam
        if np.linalg.norm(w - v) <= 1e-12:
            return w
        v = w
    return np.linalg.svd(e, full_matrices=False)[0][:, 0]


def _first_nonzero_sign(vec: np.ndarray) -> float:
    nz = np.nonzero(vec)[0]
    if nz.size == 0:
        return 1.0
    return 1.0 if vec[nz[0]] > 0 else -1.0


def _ksvd_sweep(residual: np.ndarray, atoms: np.ndarray, code_rows: np.ndarray,
                label: str, views: dict[str, np.ndarray],
                on_atom_update: AtomUpdateCallback | None) -> None:
    """One K-SVD pass over ``atoms`` (mutated in place).

    Each used atom and its code row are replaced together by the best rank-1
    approximation of the restricted residual (top singular pair), so the
    update objective cannot increase.  ``residual`` holds data minus the full
    current reconstruction and is kept consistent as atoms change.  Unused
    atoms adopt the direction of the currently worst-represented sample
    (lowest index on ties).
    """
    n_atoms = atoms.shape[1]
    for k in range(n_atoms):
        row = code_rows[k]
        omega = np.nonzero(row)[0]
        if omega.size == 0:
            col_norms = np.linalg.norm(residual, axis=0)
            j = int(np.argmax(col_norms))
            if col_norms[j] > 1e-12:
                atoms[:, k] = residual[:, j] / col_norms[j]
            if on_atom_update is not None:
                on_atom_update(label, k, views)
            continue

        c = row[omega]
        old = atoms[:, k].copy()
        e = residual[:, omega] + np.outer(old, c)
        if np.linalg.norm(e) > 0.0:
            u1 = _top_left_singular_vector(e, warm=e @ c)
            u1 = _first_nonzero_sign(u1) * u1
            new_row = u1 @ e                 # equals sigma_1 * v_1^T
            atoms[:, k] = u1
            code_rows[k, omega] = new_row
            residual[:, omega] += np.outer(old, c) - np.outer(u1, new_row)
        if on_atom_update is not None:
            on_atom_update(label, k, views)


def _branch_residuals(x_l, y, dicts: LrGuidanceDicts, codes: CodeBatch):
    rx = x_l - dicts.psi_c_l @ codes.z - dicts.psi_l @ codes.u
    ry = y - dicts.phi_c @ codes.z - dicts.phi @ codes.v
    return rx, ry


def _update_common(x_l, y, dicts, codes, rx, ry, on_atom_update):
    m = dicts.psi_c_l.shape[0]
    stacked_atoms = np.vstack([dicts.psi_c_l, dicts.phi_c])
    residual = np.vstack([rx, ry])
    views = {"psi_c_l": stacked_atoms[:m], "phi_c": stacked_atoms[m:]}
    _ksvd_sweep(residual, stacked_atoms, codes.z, "common", views, on_atom_update)
    return stacked_atoms[:m].copy(), stacked_atoms[m:].copy()


def _update_unique(x_l, y, dicts, codes, rx, ry, on_atom_update):
    psi_l = dicts.psi_l.copy()
    _ksvd_sweep(rx.copy(), psi_l, codes.u, "psi_l", {"psi_l": psi_l}, on_atom_update)
    phi = dicts.phi.copy()
    _ksvd_sweep(ry.copy(), phi, codes.v, "phi", {"phi": phi}, on_atom_update)
    return psi_l, phi


def update_common_dictionaries(x_l, y, dicts: LrGuidanceDicts, codes: CodeBatch,
                               on_atom_update: AtomUpdateCallback | None = None):
    """Update the stacked common pairs [psi_c_l; phi_c] atom by atom with the
    unique dictionaries fixed; returns (psi_c_l, phi_c).

    The rows of ``codes.z`` belonging to used atoms are refreshed in place as
    part of each rank-1 update; supports never grow."""
    x_l = np.asarray(x_l, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rx, ry = _branch_residuals(x_l, y, dicts, codes)
    return _update_common(x_l, y, dicts, codes, rx, ry, on_atom_update)


def update_unique_dictionaries(x_l, y, dicts: LrGuidanceDicts, codes: CodeBatch,
                               on_atom_update: AtomUpdateCallback | None = None):
    """Update psi_l from the X-branch residual and phi from the Y-branch
    residual, common dictionaries fixed; returns (psi_l, phi).

    Used rows of ``codes.u`` and ``codes.v`` are refreshed in place as part
    of each rank-1 update; supports never grow."""
    x_l = np.asarray(x_l, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rx, ry = _branch_residuals(x_l, y, dicts, codes)
    return _update_unique(x_l, y, dicts, codes, rx, ry, on_atom_update)


def _rmse_of(residual: np.ndarray) -> float:
    return float(np.sqrt(np.sum(residual * residual) / residual.size))


def learn_lr_guidance_dictionaries(
        x_l, y, cfg: TrainConfig, workers: int | None = None,
        init: LrGuidanceDicts | None = None,
        on_atom_update: AtomUpdateCallback | None = None,
) -> tuple[LrGuidanceDicts, CodeBatch, TrainingTrace]:
    """Step 1: the full alternating loop.

    For each outer iteration, ``in_iter`` rounds of (global coding, common
    update) are followed by ``in_iter`` rounds of (global coding, unique
    update).  Returns the final dictionaries, the codes from the last coding
    pass, and a trace with one RMSE pair per coding pass.
    """
    x_l = np.asarray(x_l, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, t = x_l.shape
    n = y.shape[0]
    k = cfg.n_atoms
    if t < k:
        warnings.warn(f"sample count T={t} is below the atom count K={k}; "
                      "dictionary recovery is unreliable", stacklevel=2)
    if cfg.sparsity > m + n:
        raise ValueError("sparsity budget exceeds the stacked signal dimension")

    rng = np.random.default_rng(cfg.seed)
    dicts = init if init is not None else init_dictionaries(m, n, k, rng)
    trace = TrainingTrace()
    codes = None

    for _ in range(cfg.out_iter):
        t0 = time.perf_counter()
        for _ in range(cfg.in_iter):
            codes = global_sparse_coding(x_l, y, dicts, cfg.sparsity, workers=workers)
            rx, ry = _branch_residuals(x_l, y, dicts, codes)
            trace.rmse_x.append(_rmse_of(rx))
            trace.rmse_y.append(_rmse_of(ry))
            psi_c_l, phi_c = _update_common(x_l, y, dicts, codes, rx, ry, on_atom_update)
            dicts = LrGuidanceDicts(psi_c_l=psi_c_l, psi_l=dicts.psi_l,
                                    phi_c=phi_c, phi=dicts.phi)
        trace.phase_seconds.append(time.perf_counter() - t0)

        t0 = time.perf_counter()
        for _ in range(cfg.in_iter):
            codes = global_sparse_coding(x_l, y, dicts, cfg.sparsity, workers=workers)
            rx, ry = _branch_residuals(x_l, y, dicts, codes)
            trace.rmse_x.append(_rmse_of(rx))
            trace.rmse_y.append(_rmse_of(ry))
            psi_l, phi = _update_unique(x_l, y, dicts, codes, rx, ry, on_atom_update)
            dicts = LrGuidanceDicts(psi_c_l=dicts.psi_c_l, psi_l=psi_l,
                                    phi_c=dicts.phi_c, phi=phi)
        trace.phase_seconds.append(time.perf_counter() - t0)

    return dicts, codes, trace


def solve_hr_dictionaries(x_h, z, u, ridge_lambda: float):
    """Closed-form ridge solve of the HR pair: X^h G^T (G G^T + lam I)^-1
    with G = [Z; U]; returns (psi_c_h, psi_h)."""
    if not ridge_lambda > 0:
        raise ValueError("ridge_lambda must be positive")
    x_h = np.asarray(x_h, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if z.shape != u.shape or z.shape[1] != x_h.shape[1]:
        raise ValueError("code and data shapes are inconsistent")
    k = z.shape[0]
    gamma = np.vstack([z, u])
    lhs = gamma @ gamma.T
    lhs[np.diag_indices_from(lhs)] += ridge_lambda
    sol = np.linalg.solve(lhs, gamma @ x_h.T)
    d = sol.T
    return d[:, :k].copy(), d[:, k:].copy()


def train(batch: TrainingBatch, cfg: TrainConfig, workers: int | None = None,
          init: LrGuidanceDicts | None = None,
          ) -> tuple[CoupledDictionarySet, TrainingTrace]:
    """Run Step 1 on (x_l, y) — x_h is untouched there — then Step 2 on x_h
    with the final codes, and assemble the six-dictionary set."""
    dicts, codes, trace = learn_lr_guidance_dictionaries(
        batch.x_l, batch.y, cfg, workers=workers, init=init)
    psi_c_h, psi_h = solve_hr_dictionaries(batch.x_h, codes.z, codes.u, cfg.ridge_lambda)
    dset = CoupledDictionarySet(
        psi_c_l=dicts.psi_c_l, psi_l=dicts.psi_l,
        psi_c_h=psi_c_h, psi_h=psi_h,
        phi_c=dicts.phi_c, phi=dicts.phi)
    return dset, trace


def train_single_modality(x_l, x_h, cfg: TrainConfig,
                          workers: int | None = None) -> SingleModalitySet:
    """No-guidance baseline: the same Step-1 machinery restricted to the
    X-branch (a 2K-atom dictionary [psi_c_l, psi_l] over x_l), then the usual
    closed-form HR solve."""
    x_l = np.asarray(x_l, dtype=np.float64)
    x_h = np.asarray(x_h, dtype=np.float64)
    m, t = x_l.shape
    k = cfg.n_atoms
    if cfg.sparsity > m:
        raise ValueError("sparsity budget exceeds the signal dimension")

    rng = np.random.default_rng(cfg.seed)
    psi_c = rng.standard_normal((m, k))
    psi_c /= np.linalg.norm(psi_c, axis=0)
    psi = rng.standard_normal((m, k))
    psi /= np.linalg.norm(psi, axis=0)

    codes = None
    for _ in range(cfg.out_iter):
        for phase in ("common", "unique"):
            for _ in range(cfg.in_iter):
                full = np.hstack([psi_c, psi])
                c, _r = omp_batch(full, x_l, cfg.sparsity, workers=workers)
                z, u = c[:k], c[k:]
                residual = x_l - psi_c @ z - psi @ u
                if phase == "common":
                    _ksvd_sweep(residual, psi_c, z, "psi_c", {"psi_c": psi_c}, None)
                else:
                    _ksvd_sweep(residual, psi, u, "psi", {"psi": psi}, None)
                codes = (z, u)

    psi_c_h, psi_h = solve_hr_dictionaries(x_h, codes[0], codes[1], cfg.ridge_lambda)
    return SingleModalitySet(psi_c_l=psi_c, psi_l=psi,
                             psi_c_h=psi_c_h, psi_h=psi_h)
