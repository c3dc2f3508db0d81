"""Fixed dictionaries mapping sparse codes ``a`` (width k) to latents ``z = D a`` (width m)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, as_tensor, matmul


@dataclass(frozen=True)
class Dictionary:
    atoms: np.ndarray  # m x k, unit-norm columns
    kind: str

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64)
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "_atoms_t", Tensor(atoms.T))

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    def gram(self) -> np.ndarray:
        return self.atoms.T @ self.atoms


def build_dct(m: int, k: int, grid_offset: float = 0.5, subtract_dc_mean: bool = False) -> Dictionary:
    """Overcomplete DCT: column r holds cos((l + grid_offset) pi r / k), r = 0..k-1.

    Columns r >= 1 are mean-subtracted, then every column is scaled to unit
    norm.  The constant column (r = 0) would vanish under mean subtraction, so
    it is only normalised (``subtract_dc_mean=True`` raises instead).

    ``grid_offset=0.5`` samples cosines at half-integer positions, which makes
    the complete case (k = m) an orthonormal DCT-II basis.  ``grid_offset=0``
    gives the integer grid cos(l pi r / k), l = 0..m-1, used by K-SVD style
    overcomplete DCT dictionaries; that grid is only approximately orthogonal.
    """
    if m < 2 or k < 1:
        raise ValueError(f"build_dct needs m >= 2 and k >= 1, got m={m}, k={k}")
    atoms = dct_raw(m, k, grid_offset)
    atoms[:, 1:] -= atoms[:, 1:].mean(axis=0, keepdims=True)
    if subtract_dc_mean:
        atoms[:, 0] -= atoms[:, 0].mean()
    norms = np.linalg.norm(atoms, axis=0)
    if np.any(norms < 1e-12):
        bad = int(np.argmax(norms < 1e-12))
        raise ValueError(f"DCT atom {bad} vanishes after mean subtraction (m={m}, k={k})")
    return Dictionary(atoms / norms, "dct")


def dct_raw(m: int, k: int, grid_offset: float = 0.5) -> np.ndarray:
    """Unnormalised cosine atoms, m x k."""
    ell = np.arange(m)[:, None] + grid_offset
    r = np.arange(k)[None, :]
    return np.cos(ell * np.pi * r / k)


def build_identity(m: int) -> Dictionary:
    if m < 1:
        raise ValueError(f"build_identity needs m >= 1, got {m}")
    return Dictionary(np.eye(m), "identity")


def apply(d: Dictionary, codes) -> Tensor:
    """Rows of ``codes`` (batch x k) mapped to rows of ``z`` (batch x m).

    Gradients reach ``codes`` only; the dictionary is a constant.
    """
    codes = as_tensor(codes)
    if codes.shape[1] != d.k:
        raise DimensionError(f"codes have width {codes.shape[1]}, dictionary expects k={d.k}")
    if d.kind == "identity":
        return codes
    return matmul(codes, d._atoms_t)
