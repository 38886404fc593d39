"""Domain types for coupled dictionaries, sparse codes and training data.

The six-dictionary model couples a target modality (LR/HR pair) with a
guidance modality through a shared sparse code: LR and guidance atoms are
learned jointly, HR atoms are regressed afterwards.  This module holds the
containers, a diagnostic validator and the bit-exact on-disk format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

DICT_MAGIC = "CDL1"

# Fixed block order of the container file.
_BLOCK_NAMES = ("psi_c_l", "psi_l", "psi_c_h", "psi_h", "phi_c", "phi")


class DictionaryFormatError(Exception):
    """Raised when a dictionary container file cannot be parsed."""


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class CoupledDictionarySet:
    """The six learned dictionaries.

    ``psi_c_l``/``psi_l`` are M x K (LR common/unique), ``psi_c_h``/``psi_h``
    are N x K (HR common/unique), ``phi_c``/``phi`` are N x K (guidance
    common/unique).  After training, each stacked common pair
    ``[psi_c_l[:, j]; phi_c[:, j]]`` and each unique atom of ``psi_l`` and
    ``phi`` has unit l2 norm; HR columns are unconstrained.
    """

    psi_c_l: np.ndarray
    psi_l: np.ndarray
    psi_c_h: np.ndarray
    psi_h: np.ndarray
    phi_c: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        for name in _BLOCK_NAMES:
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))

    @property
    def m(self) -> int:
        return self.psi_c_l.shape[0]

    @property
    def n(self) -> int:
        return self.psi_c_h.shape[0]

    @property
    def k(self) -> int:
        return self.psi_c_l.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        """(M, N, K)."""
        return (self.m, self.n, self.k)

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _BLOCK_NAMES}


@dataclass(frozen=True)
class JointSparseCode:
    """Sparse code triplet for one sample: common ``z``, target-unique ``u``,
    guidance-unique ``v``, each of length K."""

    z: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.z) + np.count_nonzero(self.u)
                   + np.count_nonzero(self.v))


@dataclass(frozen=True)
class TrainingBatch:
    """Column-stacked training patches: ``x_l`` (M x T), ``x_h`` (N x T),
    ``y`` (N x T).  Column i of each matrix is the same registered triple."""

    x_l: np.ndarray
    x_h: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_l", _as_matrix(self.x_l, "x_l"))
        object.__setattr__(self, "x_h", _as_matrix(self.x_h, "x_h"))
        object.__setattr__(self, "y", _as_matrix(self.y, "y"))
        t = self.x_l.shape[1]
        if self.x_h.shape[1] != t or self.y.shape[1] != t:
            raise ValueError(
                "sample-count mismatch: x_l has %d columns, x_h has %d, y has %d"
                % (t, self.x_h.shape[1], self.y.shape[1]))
        if self.x_h.shape[0] != self.y.shape[0]:
            raise ValueError(
                "x_h and y must have the same row count (HR/guidance dimension)")

    @property
    def t(self) -> int:
        return self.x_l.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters: K atoms, total sparsity budget s, loop depths,
    ridge weight for the HR solve, and the RNG seed."""

    n_atoms: int
    sparsity: int
    out_iter: int = 10
    in_iter: int = 20
    ridge_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if not 1 <= self.sparsity <= 3 * self.n_atoms:
            raise ValueError("sparsity must satisfy 1 <= s <= 3K")
        if self.out_iter < 1 or self.in_iter < 1:
            raise ValueError("out_iter and in_iter must be >= 1")
        if not self.ridge_lambda > 0:
            raise ValueError("ridge_lambda must be positive")


@dataclass
class DictionaryDiagnostics:
    """Result of :func:`validate`: shape problems, norm violations on the
    norm-constrained atoms, and non-finite entries."""

    shape_errors: list[str] = field(default_factory=list)
    norm_violations: list[tuple[str, int, float]] = field(default_factory=list)
    max_norm_deviation: float = 0.0
    non_finite: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.shape_errors or self.norm_violations or self.non_finite)


def validate(dset: CoupledDictionarySet, norm_tol: float = 1e-9) -> DictionaryDiagnostics:
    """Diagnose a dictionary set without mutating it.

    Checks that all six matrices agree on (M, N, K) with M <= N, that the
    stacked common pairs and the unique LR/guidance atoms have unit l2 norm
    within ``norm_tol``, and that no entry is NaN/Inf.  HR columns are not
    norm-checked.
    """
    d = DictionaryDiagnostics()
    m, km = dset.psi_c_l.shape
    n, kn = dset.psi_c_h.shape

    expected = {
        "psi_c_l": (m, km), "psi_l": (m, km),
        "psi_c_h": (n, km), "psi_h": (n, km),
        "phi_c": (n, km), "phi": (n, km),
    }
    for name, shape in expected.items():
        actual = getattr(dset, name).shape
        if actual != shape:
            d.shape_errors.append(f"{name}: expected shape {shape}, got {actual}")
    if kn != km:
        d.shape_errors.append(f"psi_c_h: expected {km} columns, got {kn}")
    if m > n:
        d.shape_errors.append(f"LR row count {m} exceeds HR row count {n}")

    for name, mat in dset.blocks().items():
        if not np.all(np.isfinite(mat)):
            d.non_finite.append(name)

    if not d.shape_errors and not d.non_finite:
        stacked_common = np.vstack([dset.psi_c_l, dset.phi_c])
        for label, mat in (("common_pair", stacked_common),
                           ("psi_l", dset.psi_l),
                           ("phi", dset.phi)):
            norms = np.linalg.norm(mat, axis=0)
            dev = np.abs(norms - 1.0)
            for j in np.nonzero(dev > norm_tol)[0]:
                d.norm_violations.append((label, int(j), float(dev[j])))
            if dev.size:
                d.max_norm_deviation = max(d.max_norm_deviation, float(dev.max()))
    return d


def _write_block(fh: BinaryIO, name: str, mat: np.ndarray) -> None:
    rows, cols = mat.shape
    fh.write(f"{name} {rows} {cols}\n".encode("ascii"))
    fh.write(np.asfortranarray(mat, dtype="<f8").tobytes(order="F"))


def _read_line(fh: BinaryIO) -> str:
    raw = bytearray()
    while True:
        b = fh.read(1)
        if not b:
            raise DictionaryFormatError("unexpected end of file in header line")
        if b == b"\n":
            break
        raw.extend(b)
    return raw.decode("ascii")


def save_dictionary_set(dset: CoupledDictionarySet, path) -> None:
    """Write ``dset`` in the CDL1 container format (bit-exact round trip)."""
    m, n, k = dset.dims
    with open(path, "wb") as fh:
        fh.write(f"{DICT_MAGIC} {m} {n} {k}\n".encode("ascii"))
        for name, mat in dset.blocks().items():
            _write_block(fh, name, mat)


def load_dictionary_set(path) -> CoupledDictionarySet:
    """Read a CDL1 container written by :func:`save_dictionary_set`."""
    with open(path, "rb") as fh:
        header = _read_line(fh).split()
        if len(header) != 4 or header[0] != DICT_MAGIC:
            raise DictionaryFormatError(
                f"bad magic: expected '{DICT_MAGIC}', got {header[:1] or ['<empty>']}")
        try:
            m, n, k = (int(x) for x in header[1:])
        except ValueError as exc:
            raise DictionaryFormatError(f"malformed dimension header: {header[1:]}") from exc

        expected_shapes = {
            "psi_c_l": (m, k), "psi_l": (m, k),
            "psi_c_h": (n, k), "psi_h": (n, k),
            "phi_c": (n, k), "phi": (n, k),
        }
        blocks = {}
        for name in _BLOCK_NAMES:
            line = _read_line(fh).split()
            if len(line) != 3 or line[0] != name:
                raise DictionaryFormatError(
                    f"expected block '{name}', got header {line}")
            rows, cols = int(line[1]), int(line[2])
            if (rows, cols) != expected_shapes[name]:
                raise DictionaryFormatError(
                    f"block '{name}': header says {rows}x{cols}, "
                    f"container dimensions imply {expected_shapes[name]}")
            nbytes = rows * cols * 8
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise DictionaryFormatError(
                    f"block '{name}': payload truncated "
                    f"({len(payload)} of {nbytes} bytes)")
            blocks[name] = np.frombuffer(payload, dtype="<f8").reshape(
                (rows, cols), order="F").copy()
    return CoupledDictionarySet(**blocks)
