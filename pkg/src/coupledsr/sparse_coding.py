"""Joint sparse coding over the stacked coupled dictionary.

The stacked system couples an LR target patch and a guidance patch through a
shared code block::

    [x_l]   [psi_c_l  psi_l   0  ] [z]
    [ y ] = [phi_c     0     phi ] [u]
                                   [v]

``omp_joint``/``omp_batch`` solve the l0-budgeted problem greedily (OMP);
``ista_joint`` solves the l1-relaxed problem by iterative soft-thresholding.
OMP is the default everywhere; the l1 route is provided as an alternative.

Batch coding is deterministic for any worker count: signals are processed in
fixed-width column chunks with BLAS pinned to one thread, so the arithmetic
per chunk does not depend on how chunks are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .core import JointSparseCode

# Fixed chunk width for batch coding.  Must stay independent of the worker
# count, otherwise per-chunk arithmetic (and so the output bits) would change.
_CHUNK = 512


@dataclass(frozen=True)
class JointDictionary:
    """Stacked (M+N) x 3K coding dictionary with per-column l2 norms."""

    stacked: np.ndarray
    column_norms: np.ndarray
    m: int
    n: int
    k: int


@dataclass(frozen=True)
class SignalPair:
    """A DC-removed LR target patch ``x_l`` (length M) and guidance patch
    ``y`` (length N)."""

    x_l: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_l", np.asarray(self.x_l, dtype=np.float64).ravel())
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64).ravel())
        if not (np.all(np.isfinite(self.x_l)) and np.all(np.isfinite(self.y))):
            raise ValueError("signal entries must be finite")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x_l, self.y])


def stack_joint_dictionary(psi_c_l, psi_l, phi_c, phi) -> JointDictionary:
    """Assemble the block dictionary [[psi_c_l, psi_l, 0], [phi_c, 0, phi]].

    The zero blocks are exact zeros.  Raises on dimension mismatch, non-finite
    entries, or zero-norm columns.
    """
    mats = [np.asarray(a, dtype=np.float64) for a in (psi_c_l, psi_l, phi_c, phi)]
    names = ("psi_c_l", "psi_l", "phi_c", "phi")
    for name, mat in zip(names, mats):
        if mat.ndim != 2:
            raise ValueError(f"{name} must be 2-D")
        if not np.all(np.isfinite(mat)):
            raise ValueError(f"{name} must have finite entries")
    pcl, pl, phc, ph = mats
    m, k = pcl.shape
    n = phc.shape[0]
    if pl.shape != (m, k):
        raise ValueError(f"psi_l: expected shape {(m, k)}, got {pl.shape}")
    if phc.shape != (n, k):
        raise ValueError(f"phi_c: expected shape {(n, k)}, got {phc.shape}")
    if ph.shape != (n, k):
        raise ValueError(f"phi: expected shape {(n, k)}, got {ph.shape}")

    stacked = np.zeros((m + n, 3 * k))
    stacked[:m, :k] = pcl
    stacked[:m, k:2 * k] = pl
    stacked[m:, :k] = phc
    stacked[m:, 2 * k:] = ph
    norms = np.linalg.norm(stacked, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("stacked dictionary has zero-norm columns")
    return JointDictionary(stacked=stacked, column_norms=norms, m=m, n=n, k=k)


def _chunk_bounds(t: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + _CHUNK, t)) for lo in range(0, t, _CHUNK)]


def _lstsq_refit(dictionary, xt, sel_rows, out_coef, out_recon):
    """Per-sample minimum-norm refit on the original columns (rank-deficient
    or numerically failed normal equations)."""
    for i, cols in enumerate(sel_rows):
        sub = dictionary[:, cols]
        sol, *_ = np.linalg.lstsq(sub, xt[i], rcond=None)
        out_coef[i] = sol
        out_recon[i] = sub @ sol


def _omp_chunk(dictionary, gram, inv_norms, signals, budget, rel_tol):
    """OMP on one column chunk.  Returns (codes (A, B), residual_norms (B,))."""
    d, n_atoms = dictionary.shape
    xt = np.ascontiguousarray(signals.T)            # (B, d)
    b = xt.shape[0]
    ht = xt @ dictionary                            # (B, A)

    sel = np.zeros((b, budget), dtype=np.intp)
    coef = np.zeros((b, budget))
    n_sel = np.zeros(b, dtype=np.intp)
    taken = np.zeros((b, n_atoms), dtype=bool)
    rt = xt.copy()
    r_norm = np.linalg.norm(rt, axis=1)
    thresh = rel_tol * r_norm
    alive = r_norm > thresh

    for step in range(budget):
        act = np.nonzero(alive)[0]
        if act.size == 0:
            break
        score = np.abs(rt[act] @ dictionary) * inv_norms[None, :]
        score[taken[act]] = -1.0
        picked = np.argmax(score, axis=1)
        sel[act, step] = picked
        taken[act, picked] = True
        n_sel[act] = step + 1

        i = step + 1
        rows = sel[act, :i]                          # (a, i)
        gs = gram[rows[:, :, None], rows[:, None, :]]
        hs = ht[act[:, None], rows]
        try:
            c = np.linalg.solve(gs, hs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            c = np.empty((act.size, i))
            recon = np.empty((act.size, d))
            _lstsq_refit(dictionary, xt[act], rows, c, recon)
        else:
            recon = np.einsum("dai,ai->ad", dictionary[:, rows], c)

        new_rt = xt[act] - recon
        new_norm = np.linalg.norm(new_rt, axis=1)
        # Least squares can only shrink the residual; a growth signals a
        # numerically bad solve of the normal equations.  Refit those samples
        # on the original columns (minimum-norm).
        bad = ~np.isfinite(new_norm) | (new_norm > r_norm[act] * (1.0 + 1e-8))
        if np.any(bad):
            ib = np.nonzero(bad)[0]
            cb = np.empty((ib.size, i))
            rec_b = np.empty((ib.size, d))
            _lstsq_refit(dictionary, xt[act[ib]], rows[ib], cb, rec_b)
            c[ib] = cb
            new_rt[ib] = xt[act[ib]] - rec_b
            new_norm[ib] = np.linalg.norm(new_rt[ib], axis=1)

        coef[act, :i] = c
        rt[act] = new_rt
        r_norm[act] = new_norm
        alive[act] = new_norm > thresh[act]

    codes = np.zeros((n_atoms, b))
    cols = np.arange(b)
    for slot in range(budget):
        use = n_sel > slot
        if not np.any(use):
            break
        codes[sel[use, slot], cols[use]] = coef[use, slot]
    return codes, r_norm


def omp_batch(dictionary, signals, budget, *, rel_tol=1e-12, workers=None):
    """Greedy l0 coding of ``signals`` (d x T) over ``dictionary`` (d x A).

    Each step picks the unselected column maximizing |<residual, column>| /
    ||column|| and re-solves the unrestricted least squares on all selected
    original columns; a sample stops early once its residual drops below
    ``rel_tol`` times its own norm.  Returns ``(codes, residual_norms)`` with
    ``codes`` of shape (A, T).

    Output is bit-identical for any ``workers`` value.
    """
    D = np.asarray(dictionary, dtype=np.float64)
    X = np.asarray(signals, dtype=np.float64)
    if D.ndim != 2 or X.ndim != 2 or D.shape[0] != X.shape[0]:
        raise ValueError("dictionary and signals must share their row dimension")
    d, n_atoms = D.shape
    if not 1 <= budget <= n_atoms or budget > d:
        raise ValueError(
            f"budget out of range: need 1 <= budget <= {n_atoms} and budget <= {d}, "
            f"got {budget}")
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("dictionary has zero-norm columns")
    inv_norms = 1.0 / norms

    t = X.shape[1]
    codes = np.zeros((n_atoms, t))
    r_norms = np.zeros(t)
    bounds = _chunk_bounds(t)

    with threadpool_limits(limits=1, user_api="blas"):
        gram = D.T @ D

        def run(lo, hi):
            c, r = _omp_chunk(D, gram, inv_norms, X[:, lo:hi], budget, rel_tol)
            codes[:, lo:hi] = c
            r_norms[lo:hi] = r

        if workers is not None and workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(lambda b: run(*b), bounds))
        else:
            for lo, hi in bounds:
                run(lo, hi)
    return codes, r_norms


def _split_code(vec: np.ndarray, k: int) -> JointSparseCode:
    return JointSparseCode(z=vec[:k].copy(), u=vec[k:2 * k].copy(), v=vec[2 * k:].copy())


def omp_joint(sig: SignalPair, jd: JointDictionary, budget: int) -> JointSparseCode:
    """OMP on one stacked signal; the coefficient vector is split into the
    (z, u, v) blocks.  Total nonzeros never exceed ``budget``."""
    if sig.x_l.size != jd.m or sig.y.size != jd.n:
        raise ValueError(
            f"signal lengths ({sig.x_l.size}, {sig.y.size}) do not match "
            f"dictionary dims ({jd.m}, {jd.n})")
    codes, _ = omp_batch(jd.stacked, sig.stacked()[:, None], budget)
    return _split_code(codes[:, 0], jd.k)


def _top_singular_value_sq(mat: np.ndarray, max_iter: int = 500, tol: float = 1e-14) -> float:
    """Largest squared singular value via power iteration on the smaller Gram."""
    d, a = mat.shape
    dim = min(d, a)
    v = np.full(dim, 1.0 / np.sqrt(dim))
    lam = 0.0
    for _ in range(max_iter):
        if d <= a:
            w = mat @ (mat.T @ v)
        else:
            w = mat.T @ (mat @ v)
        new_lam = float(np.linalg.norm(w))
        if new_lam == 0.0:
            return 0.0
        v = w / new_lam
        if abs(new_lam - lam) <= tol * new_lam:
            lam = new_lam
            break
        lam = new_lam
    return lam


def ista_joint(sig: SignalPair, jd: JointDictionary, lam: float,
               max_iter: int = 500, tol: float = 1e-6) -> JointSparseCode:
    """Iterative soft-thresholding for ||x - D c||^2 + lam * ||c||_1.

    The step size is the reciprocal of the gradient Lipschitz constant
    2 * sigma_max(D)^2 (top squared singular value by power iteration), which
    makes the objective non-increasing; iteration stops when the relative
    objective decrease falls below ``tol`` or at ``max_iter``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if sig.x_l.size != jd.m or sig.y.size != jd.n:
        raise ValueError("signal lengths do not match dictionary dims")
    d_mat = jd.stacked
    x = sig.stacked()
    s1_sq = _top_singular_value_sq(d_mat)
    step = 1.0 / (2.0 * s1_sq * (1.0 + 1e-9))

    c = np.zeros(d_mat.shape[1])
    resid = x.copy()
    obj = float(resid @ resid)
    for _ in range(max_iter):
        grad = -2.0 * (d_mat.T @ resid)
        raw = c - step * grad
        c_new = np.sign(raw) * np.maximum(np.abs(raw) - step * lam, 0.0)
        resid = x - d_mat @ c_new
        new_obj = float(resid @ resid) + lam * float(np.abs(c_new).sum())
        assert new_obj <= obj * (1.0 + 1e-12) + 1e-300, \
            "ISTA objective increased; step size invariant violated"
        c = c_new
        if obj - new_obj < tol * max(obj, 1e-300):
            obj = new_obj
            break
        obj = new_obj
    return _split_code(c, jd.k)


def residual_norm(sig: SignalPair, jd: JointDictionary, code: JointSparseCode) -> float:
    """l2 norm of [x_l; y] - D [z; u; v]."""
    vec = np.concatenate([code.z, code.u, code.v])
    if vec.size != jd.stacked.shape[1]:
        raise ValueError("code length does not match dictionary column count")
    if sig.x_l.size != jd.m or sig.y.size != jd.n:
        raise ValueError("signal lengths do not match dictionary dims")
    return float(np.linalg.norm(sig.stacked() - jd.stacked @ vec))
