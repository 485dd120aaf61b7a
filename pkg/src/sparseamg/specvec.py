"""Smooth test vectors from the generalized eigenvalue problem A_g u = lambda T u.

T = P^T P for the bilinear prolongation into the next-finer grid.  The
eigenvectors with the smallest eigenvalues are the coarse-grid images of the
error components that relaxation cannot remove, which is what the sparsifier
training needs to preserve.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import stencil as stmod
from .stencil import Stencil

RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True)
class EigPair:
    value: float
    vector: np.ndarray  # unit 2-norm, on the coarse grid


def build_T(n_coarse: int) -> np.ndarray:
    """Dense T = Pmat^T Pmat for bilinear prolongation at this coarse size."""
    P = stmod.prolongation_matrix(n_coarse)
    return P.T @ P


def smooth_vectors(Ag: np.ndarray, T: np.ndarray, s: int) -> list:
    """The s smallest-eigenvalue pairs of Ag u = lambda T u.

    Ag is symmetrized defensively (with a warning past 1e-10 asymmetry);
    T must be SPD.  Solved by Cholesky reduction to a standard symmetric
    problem, which is what scipy's generalized eigh does.
    """
    Ag = np.asarray(Ag, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if s > Ag.shape[0]:
        raise ValueError(f"requested {s} pairs from a problem of size {Ag.shape[0]}")
    asym = np.abs(Ag - Ag.T).max()
    if asym > 1e-10 * max(np.abs(Ag).max(), 1.0):
        warnings.warn(f"symmetrizing Ag with asymmetry {asym:.3e}", stacklevel=2)
    Ag = 0.5 * (Ag + Ag.T)
    try:
        sla.cholesky(T)
    except sla.LinAlgError as exc:
        raise ValueError("T is not symmetric positive definite") from exc
    w, V = sla.eigh(Ag, T)
    m = int(round(np.sqrt(Ag.shape[0])))
    shape = (m, m) if m * m == Ag.shape[0] else (Ag.shape[0],)  # block vectors stay flat
    scale = np.linalg.norm(Ag, "fro")
    pairs = []
    for idx in range(s):
        vec = V[:, idx] / np.linalg.norm(V[:, idx])
        res = np.linalg.norm(Ag @ vec - w[idx] * (T @ vec))
        if res > RESIDUAL_RTOL * scale:
            raise RuntimeError(f"eigenpair residual {res:.3e} exceeds {RESIDUAL_RTOL * scale:.3e}")
        pairs.append(EigPair(float(w[idx]), vec.reshape(shape)))
    return pairs


def rayleigh(A_fine: np.ndarray, P: np.ndarray, e_c: np.ndarray) -> float:
    """(A P e_c, P e_c) / (P e_c, P e_c)."""
    e = np.asarray(e_c, dtype=np.float64).ravel()
    if np.linalg.norm(e) == 0.0:
        raise ValueError("e_c must be nonzero")
    Pe = P @ e
    return float((A_fine @ Pe) @ Pe / (Pe @ Pe))


def training_vectors(st: Stencil, n_coarse: int, s: int) -> list:
    """Smooth test vectors for a coarse-level stencil.

    Assembles the stencil on its grid and solves the generalized problem.
    Negative definite stencils (negative center) are sign-flipped for the
    smallest-eigenvalue selection so "smooth" keeps its meaning; the stored
    eigenvalues refer to the flipped SPD-form problem.
    """
    sign = -1.0 if st.center_value < 0 else 1.0
    Ag = sign * stmod.assemble(st, n_coarse, n_coarse)
    return smooth_vectors(Ag, build_T(n_coarse), s)


def vectors_to_json(level: int, beta, pairs: list) -> str:
    """Serialize one instance's test-vector bundle."""
    return json.dumps(
        {
            "level": level,
            "beta": beta,
            "eigvalues": [p.value for p in pairs],
            "vectors": [p.vector.ravel().tolist() for p in pairs],
        }
    )


def vectors_from_json(s: str):
    d = json.loads(s)
    m = int(round(np.sqrt(len(d["vectors"][0]))))
    pairs = [
        EigPair(float(v), np.asarray(vec, dtype=np.float64).reshape(m, m))
        for v, vec in zip(d["eigvalues"], d["vectors"])
    ]
    return d["level"], d["beta"], pairs
