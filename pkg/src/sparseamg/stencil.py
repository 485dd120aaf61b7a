"""Constant-coefficient stencils on 2-D Dirichlet grids.

A grid function is a plain 2-D float64 array of interior unknowns; everything
outside the array is an implicit zero (homogeneous Dirichlet).  Stencils are
stored the way they are usually displayed: row 0 is the north row, so the
coefficient at ``coeffs[p+s, q+t]`` multiplies the grid value at offset
``(i+s, j+t)`` from the center ``(p, q)``.

Grids shrink by full coarsening: a fine side of n = 2m+1 interior points has
an m-point coarse side whose nodes sit at odd fine indices (0-based).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

# Dense assembly is for oracles and small-grid diagnostics only.
DENSE_CAP = 40_000

# Full-weighting restriction mask (gather form).  The matching bilinear
# prolongation scatters [1/4, 1/2, 1/4] per axis, so Pmat^T = 4 * Rmat.
_FW = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
_BILIN = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])


@dataclass(frozen=True)
class Stencil:
    """Odd-shaped real coefficient array with the anchor at its center."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] % 2 == 0 or c.shape[1] % 2 == 0:
            raise ValueError(f"stencil shape must be odd in both dims, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("stencil coefficients must be finite")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def shape(self):
        return self.coeffs.shape

    @property
    def center(self):
        return self.coeffs.shape[0] // 2, self.coeffs.shape[1] // 2

    @property
    def center_value(self) -> float:
        p, q = self.center
        return float(self.coeffs[p, q])

    def nnz(self, tol: float = 0.0) -> int:
        return int(np.sum(np.abs(self.coeffs) > tol))

    def vec(self) -> np.ndarray:
        """Row-major vectorization of the coefficient array."""
        return self.coeffs.ravel().copy()

    def to_dict(self) -> dict:
        return {
            "rows": self.coeffs.shape[0],
            "cols": self.coeffs.shape[1],
            "coeffs": self.coeffs.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Stencil":
        arr = np.asarray(d["coeffs"], dtype=np.float64).reshape(d["rows"], d["cols"])
        return cls(arr)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Stencil":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class BlockStencil2x2:
    """Stencil pair for a 2x2 block operator with A_vv = A_uu, A_vu = A_uv^T."""

    uu: Stencil
    uv: Stencil
    vu: Stencil
    vv: Stencil

    def __post_init__(self):
        for st in (self.uu, self.uv, self.vu, self.vv):
            if st.shape != (3, 3):
                raise ValueError("block stencils must be 3x3")
        if not np.array_equal(self.uu.coeffs, self.vv.coeffs):
            raise ValueError("uu and vv stencils must be identical")
        if not np.allclose(self.vu.coeffs, self.uv.coeffs[::-1, ::-1], atol=0.0):
            raise ValueError("vu must be the transpose-flip of uv")

    @classmethod
    def from_pair(cls, uu: Stencil, uv: Stencil) -> "BlockStencil2x2":
        return cls(uu, uv, Stencil(uv.coeffs[::-1, ::-1]), uu)


def apply(st: Stencil, x: np.ndarray) -> np.ndarray:
    """Apply a stencil to a grid function with zero padding.

    y[i, j] = sum_{s,t} coeffs[s, t] * x[i+s-p, j+t-q]
    """
    x = np.asarray(x, dtype=np.float64)
    return ndimage.correlate(x, st.coeffs, mode="constant", cval=0.0)


def assemble(st: Stencil, nx: int, ny: int) -> np.ndarray:
    """Dense matrix of the stencil operator, rows in lexicographic order.

    vec(apply(st, x)) == assemble(st, nx, ny) @ vec(x) for every x.
    """
    if nx * ny > DENSE_CAP:
        raise ValueError(f"dense assembly of {nx * ny} unknowns exceeds cap {DENSE_CAP}")
    return assemble_sparse(st, nx, ny).toarray()


def assemble_sparse(st: Stencil, nx: int, ny: int) -> sp.csr_matrix:
    """Sparse CSR version of :func:`assemble` (no size cap)."""
    p, q = st.center
    c = st.coeffs
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    base = (ii * ny + jj).ravel()
    for s in range(c.shape[0]):
        for t in range(c.shape[1]):
            if c[s, t] == 0.0:
                continue
            di, dj = s - p, t - q
            keep = ((ii + di >= 0) & (ii + di < nx) & (jj + dj >= 0) & (jj + dj < ny)).ravel()
            rows.append(base[keep])
            cols.append(base[keep] + di * ny + dj)
            vals.append(np.full(keep.sum(), c[s, t]))
    if not rows:
        return sp.csr_matrix((nx * ny, nx * ny))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    )


def restrict_fw(x: np.ndarray) -> np.ndarray:
    """Full-weighting restriction from an n=2m+1 fine grid to the m coarse grid."""
    n0, n1 = x.shape
    if n0 % 2 == 0 or n1 % 2 == 0 or n0 < 3 or n1 < 3:
        raise ValueError(f"fine grid must have odd sides >= 3, got {x.shape}")
    y = ndimage.correlate(np.asarray(x, dtype=np.float64), _FW, mode="constant", cval=0.0)
    return y[1::2, 1::2]


def prolong_bilinear(xc: np.ndarray) -> np.ndarray:
    """Bilinear interpolation from an m coarse grid to the n=2m+1 fine grid.

    Coarse values are reproduced exactly at the injection points.
    """
    m0, m1 = xc.shape
    y = np.zeros((2 * m0 + 1, 2 * m1 + 1))
    y[1::2, 1::2] = xc
    return ndimage.convolve(y, _BILIN, mode="constant", cval=0.0)


def restriction_matrix(m: int) -> np.ndarray:
    """Dense full-weighting restriction matrix, (m*m) x (n*n) with n = 2m+1."""
    return prolongation_matrix(m).T / 4.0


def prolongation_matrix(m: int) -> np.ndarray:
    """Dense bilinear prolongation matrix, (n*n) x (m*m) with n = 2m+1."""
    n = 2 * m + 1
    if n * n > DENSE_CAP:
        raise ValueError(f"dense transfer matrix with {n * n} rows exceeds cap {DENSE_CAP}")
    P = np.zeros((n * n, m * m))
    for jc in range(m):
        for kc in range(m):
            col = jc * m + kc
            fi, fj = 2 * jc + 1, 2 * kc + 1
            for ds in (-1, 0, 1):
                for dt in (-1, 0, 1):
                    P[(fi + ds) * n + (fj + dt), col] = _BILIN[ds + 1, dt + 1]
    return P


def galerkin_coarsen(st: Stencil, probe_coarse: int = 9) -> Stencil:
    """Coarse-grid stencil of R A P under full-weighting / bilinear transfers.

    Extracted by probing: apply prolong -> stencil -> restrict to a coarse
    delta on a grid with at least 7x7 coarse interior points and read off the
    3x3 neighborhood.  The column read around the delta is the point
    reflection of the row stencil, hence the final flip.
    """
    if st.shape != (3, 3):
        raise ValueError(f"galerkin_coarsen expects a 3x3 stencil, got {st.shape}")
    if probe_coarse < 7 or probe_coarse % 2 == 0:
        raise ValueError("probe grid must be odd and >= 7")
    m = probe_coarse
    delta = np.zeros((m, m))
    c = m // 2
    delta[c, c] = 1.0
    yc = restrict_fw(apply(st, prolong_bilinear(delta)))
    block = yc[c - 1 : c + 2, c - 1 : c + 2]
    return Stencil(block[::-1, ::-1])


def analytic_equivalent_5pt(st9: Stencil, form_rtol: float = 1e-8) -> Stencil:
    """Spectrally equivalent 5-point stencil of a 9-point circulant stencil.

    Input layout [[c, b, c], [a, d, a], [c, b, c]] with d = -2(a+b)-4c;
    output [[0, b+2c, 0], [a+2c, -2(a+b)-8c, a+2c], [0, b+2c, 0]].
    """
    if st9.shape != (3, 3):
        raise ValueError("expected a 3x3 stencil")
    k = st9.coeffs
    scale = max(np.abs(k).max(), 1.0)
    a, b, c = k[1, 0], k[0, 1], k[0, 0]
    form = np.array([[c, b, c], [a, -2 * (a + b) - 4 * c, a], [c, b, c]])
    if np.abs(k - form).max() > form_rtol * scale:
        raise ValueError("stencil is not of the 9-point circulant form")
    return Stencil(
        np.array(
            [
                [0.0, b + 2 * c, 0.0],
                [a + 2 * c, -2 * (a + b) - 8 * c, a + 2 * c],
                [0.0, b + 2 * c, 0.0],
            ]
        )
    )


def truncate_by_magnitude(st: Stencil, k: int) -> Stencil:
    """Keep the k largest-magnitude coefficients, zero the rest.

    Ties break toward the lower row-major index (stable sort).
    """
    flat = st.coeffs.ravel()
    if not 1 <= k <= flat.size:
        raise ValueError(f"k must be in [1, {flat.size}], got {k}")
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros_like(flat)
    keep = order[:k]
    out[keep] = flat[keep]
    return Stencil(out.reshape(st.shape))
