"""2-D linear elasticity as a 2x2 block system with red-black node coarsening.

The displacement components u, v live on the same n x n Dirichlet grid; the
block matrix is [[A_uu, A_uv], [A_vu, A_vv]] with A_vv = A_uu and
A_vu = A_uv^T.  The coarse set is one checkerboard color, so the coarse
lattice is rotated 45 degrees and coarse-grid stencils live on the offsets
{(0,0), (+-1,+-1), (+-2,0), (0,+-2)}, indexed here as a 3x3 array over the
rotated axes e1 = (1,1), e2 = (1,-1).

Transfers follow the classical plus-shaped distribution stencils; restriction
is half the prolongation transpose, which keeps the Galerkin coarse operator
symmetric.  Everything is assembled explicitly (sparse); grids stay small.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mg import DIVERGENCE_FACTOR, NumericalError, SolveReport
from .problems import ElasticityParams
from .stencil import BlockStencil2x2, Stencil

# (alpha, beta) -> fine offset alpha*(1,1) + beta*(1,-1); row-major over alpha, beta
ROT_OFFSETS = [
    (a + b, a - b) for a in (-1, 0, 1) for b in (-1, 0, 1)
]


def elasticity_block_stencil(p: ElasticityParams) -> BlockStencil2x2:
    """Fine-level 9-point uu stencil (center normalized to 1) and corner uv stencil."""
    mu, lam = p.lame
    by = p.b_y
    den = 2.0 * (2.0 * lam * by**2 + lam + 4.0 * (by**2 + 1.0) * mu)
    a_n = ((by**2 - 1.0) * lam + 2.0 * (by**2 - 2.0) * mu) / den
    a_w = -(2.0 * lam * by**2 + 4.0 * mu * by**2 + lam + mu) / den
    a_x = (-lam * by**2 - 2.0 * mu * by**2 + lam + mu) / (2.0 * den)
    a_uv = 3.0 * by * (lam + mu) / (4.0 * den)
    uu = Stencil(np.array([[a_x, a_n, a_x], [a_w, 1.0, a_w], [a_x, a_n, a_x]]))
    # north-up corners: nw = se = +a_uv, ne = sw = -a_uv
    uv = Stencil(np.array([[a_uv, 0.0, -a_uv], [0.0, 0.0, 0.0], [-a_uv, 0.0, a_uv]]))
    return BlockStencil2x2.from_pair(uu, uv)


def _stencil_csr(c: np.ndarray, n: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for s in range(3):
        for t in range(3):
            if c[s, t] == 0.0:
                continue
            di, dj = s - 1, t - 1
            i0, i1 = max(0, -di), min(n, n - di)
            j0, j1 = max(0, -dj), min(n, n - dj)
            ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
            r = (ii * n + jj).ravel()
            rows.append(r)
            cols.append(r + di * n + dj)
            vals.append(np.full(r.size, c[s, t]))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    )


class ElasticitySystem:
    """Assembled block operator, red-black transfers, and a two-grid solver."""

    def __init__(self, params: ElasticityParams, n: int):
        if n < 7 or n % 2 == 0:
            raise ValueError("mesh side must be odd and >= 7")
        if 2 * n * n > 200_000:
            raise ValueError(f"elasticity mesh {n}x{n} too large")
        self.params = params
        self.n = n
        self.block = elasticity_block_stencil(params)
        Auu = _stencil_csr(self.block.uu.coeffs, n)
        Auv = _stencil_csr(self.block.uv.coeffs, n)
        self.A = sp.bmat([[Auu, Auv], [Auv.T, Auu]]).tocsr()
        self._build_transfers()
        self._cache = {}

    def _build_transfers(self):
        n = self.n
        N = n * n
        self.coarse_index = {}
        for i in range(n):
            for j in range(n):
                if (i + j) % 2 == 0:
                    self.coarse_index[(i, j)] = len(self.coarse_index)
        nc = len(self.coarse_index)
        self.nc = nc
        plus = [(-1, 0), (1, 0), (0, -1), (0, 1)]
        # P_uu: injection 1 at the coarse node, 1/4 to its plus neighbors.
        # P_uv: +-1/4 on the plus neighbors, + for north/south, - for west/east.
        ru, cu, vu, rv, cv, vv = [], [], [], [], [], []
        for (i, j), z in self.coarse_index.items():
            ru.append(i * n + j)
            cu.append(z)
            vu.append(1.0)
            for di, dj in plus:
                ii, jj = i + di, j + dj
                if 0 <= ii < n and 0 <= jj < n:
                    ru.append(ii * n + jj)
                    cu.append(z)
                    vu.append(0.25)
                    rv.append(ii * n + jj)
                    cv.append(z)
                    vv.append(0.25 if dj == 0 else -0.25)
        Puu = sp.csr_matrix((vu, (ru, cu)), shape=(N, nc))
        Puv = sp.csr_matrix((vv, (rv, cv)), shape=(N, nc))
        self.Puu, self.Puv = Puu, Puv
        self.P = sp.bmat([[Puu, Puv], [-Puv, Puu]]).tocsr()
        self.R = (0.5 * self.P.T).tocsr()

    # ---- coarse-grid operators ----

    def galerkin_matrix(self) -> sp.csr_matrix:
        if "rap" not in self._cache:
            self._cache["rap"] = (self.R @ self.A @ self.P).tocsr()
        return self._cache["rap"]

    def coarse_stencils(self):
        """(uu, uv) 3x3 stencils over the rotated lattice, read at an interior
        coarse node of the Galerkin operator."""
        Ac = self.galerkin_matrix()
        c = self.n // 2  # (c + c) is even, so (c, c) is a coarse node
        z = self.coarse_index[(c, c)]
        row = Ac[z].toarray().ravel()
        uu = np.zeros(9)
        uv = np.zeros(9)
        for e, (di, dj) in enumerate(ROT_OFFSETS):
            zz = self.coarse_index[(c + di, c + dj)]
            uu[e] = row[zz]
            uv[e] = row[self.nc + zz]
        return Stencil(uu.reshape(3, 3)), Stencil(uv.reshape(3, 3))

    def operator_from_stencils(self, uu: Stencil, uv: Stencil) -> sp.csr_matrix:
        """Coarse block operator rebuilt from rotated-lattice stencils.

        Applied uniformly over coarse nodes with Dirichlet dropping; the vu
        block uses the point reflection of uv so the block transpose relation
        holds exactly.
        """
        n = self.n
        idx = self.coarse_index
        nc = self.nc
        entries = {off: (uu.coeffs.ravel()[e], uv.coeffs.ravel()[e]) for e, off in enumerate(ROT_OFFSETS)}
        r_uu, c_uu, v_uu, r_uv, c_uv, v_uv = [], [], [], [], [], []
        for (i, j), z in idx.items():
            for (di, dj), (cu, cv) in entries.items():
                zz = idx.get((i + di, j + dj))
                if zz is None:
                    continue
                if cu != 0.0:
                    r_uu.append(z)
                    c_uu.append(zz)
                    v_uu.append(cu)
                if cv != 0.0:
                    r_uv.append(z)
                    c_uv.append(zz)
                    v_uv.append(cv)
        Buu = sp.csr_matrix((v_uu, (r_uu, c_uu)), shape=(nc, nc))
        Buv = sp.csr_matrix((v_uv, (r_uv, c_uv)), shape=(nc, nc))
        return sp.bmat([[Buu, Buv], [Buv.T, Buu]]).tocsr()

    # ---- smoothing and the two-grid cycle ----

    def _tri_parts(self):
        if "tri" not in self._cache:
            A = self.A
            self._cache["tri"] = (
                sp.tril(A, 0).tocsr(),
                sp.triu(A, 0).tocsr(),
                sp.tril(A, -1).tocsr(),
                sp.triu(A, 1).tocsr(),
            )
        return self._cache["tri"]

    def _coarse_factor(self, Ac):
        key = id(Ac)
        if self._cache.get("lu_key") != key:
            try:
                self._cache["lu"] = spla.splu(Ac.tocsc())
            except RuntimeError as exc:
                raise NumericalError(f"coarse factorization failed: {exc}") from exc
            self._cache["lu_key"] = key
        return self._cache["lu"]

    def two_grid_solve(self, f: np.ndarray, coarse_op=None, tol: float = 1e-6, max_iter: int = 400):
        """Symmetric-GS two-grid iteration; monitors the pre-smoothing residual.

        coarse_op defaults to the Galerkin matrix; pass the rebuilt operator
        from sparsified stencils for the non-Galerkin runs.
        """
        Ac = self.galerkin_matrix() if coarse_op is None else coarse_op
        lu = self._coarse_factor(Ac)
        AL, AU, ALs, AUs = self._tri_parts()
        f = np.asarray(f, dtype=np.float64).ravel()
        nf = float(np.linalg.norm(f))
        x = np.zeros_like(f)
        if nf == 0.0:
            return x, SolveReport(0, [0.0], converged=True, diverged=False)
        history = [1.0]
        converged = diverged = False
        it = 0
        for it in range(1, max_iter + 1):
            x = spla.spsolve_triangular(AL, f - AUs @ x, lower=True)
            r = f - self.A @ x
            rel = float(np.linalg.norm(r)) / nf
            history.append(rel)
            if not np.isfinite(rel) or rel > DIVERGENCE_FACTOR:
                diverged = True
                break
            if rel <= tol:
                converged = True
                break
            ec = lu.solve(self.R @ r)
            x = x + self.P @ ec
            x = spla.spsolve_triangular(AU, f - ALs @ x, lower=False)
        return x, SolveReport(it, history, converged, diverged)

    def random_rhs(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).standard_normal(2 * self.n * self.n)


def split_k(nnz_uu: int, nnz_uv: int, k_total: int):
    """Proportional split of the retained-entry budget, remainder toward uu."""
    total = nnz_uu + nnz_uv
    k_uu = k_total * nnz_uu // total
    k_uv = k_total * nnz_uv // total
    for _ in range(k_total - k_uu - k_uv):
        if k_uu < 9:  # remainder (ties) resolves toward uu first
            k_uu += 1
        else:
            k_uv += 1
    return k_uu, k_uv


def _rot_shift_matrix(coarse_index: dict, n: int, di: int, dj: int) -> sp.csr_matrix:
    """(S x)[i,j] = x[i+di, j+dj] on the rotated coarse lattice, zero outside."""
    nc = len(coarse_index)
    rows, cols = [], []
    for (i, j), z in coarse_index.items():
        zz = coarse_index.get((i + di, j + dj))
        if zz is not None:
            rows.append(z)
            cols.append(zz)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nc, nc))


_FLIP = [8 - e for e in range(9)]  # point reflection of the 3x3 row-major index


def combined_basis(sys: "ElasticitySystem", vec: np.ndarray) -> np.ndarray:
    """(18, 2nc) action basis of the combined (uu, uv) coefficient pair on a
    block vector, under the hybrid coarse-operator construction: entry e of
    uu acts on both diagonal blocks, entry e of uv acts off-diagonally with
    its point reflection in the vu block; rows are restricted to the
    stencil-exact interior and symmetrized exactly like the operator."""
    rows = []
    for e in range(9):
        M = sys.sym_basis_matrix(e, "uu")
        rows.append(M @ vec)
    for e in range(9):
        M = sys.sym_basis_matrix(e, "uv")
        rows.append(M @ vec)
    return np.asarray(rows)


def build_elasticity_train_set(n_train: int = 9, nus=(0.1, 0.2, 0.3, 0.4), s: int = 8, E: float = 1e-5):
    """Combined-stencil training data for the block sparsifier.

    Returns (TrainSet with block_split (9, 9), k_blocks) where the retention
    budget halves the total nonzeros of the two Galerkin coarse stencils,
    split proportionally to their supports.
    """
    from .neural import TrainSet
    from .specvec import smooth_vectors

    inputs, bases, targets, screens = [], [], [], []
    nnz_uu = nnz_uv = None
    for nu in nus:
        sys = ElasticitySystem(ElasticityParams(E=E, nu=nu), n_train)
        uu, uv = sys.coarse_stencils()
        v_in = np.concatenate([uu.vec(), uv.vec()])
        Ag = sys.galerkin_matrix().toarray()
        P = sys.P.toarray()
        pairs = smooth_vectors(Ag, P.T @ P, s)
        B = np.hstack([combined_basis(sys, p.vector) for p in pairs])
        t = np.concatenate([Ag @ p.vector for p in pairs])
        inputs.append(v_in)
        bases.append([B])
        targets.append([t])
        screens.append(_block_theta_screen(sys, Ag))
        scale = max(np.abs(v_in).max(), 1.0)
        if nnz_uu is None:
            nnz_uu = int(np.sum(np.abs(uu.coeffs) > 1e-12 * scale))
            nnz_uv = int(np.sum(np.abs(uv.coeffs) > 1e-12 * scale))
    k_total = (nnz_uu + nnz_uv) // 2
    k_blocks = split_k(nnz_uu, nnz_uv, k_total)
    ts = TrainSet(2, 18, inputs, bases, targets, betas=list(nus), block_split=(9, 9), screens=screens)
    return ts, k_blocks


def _block_theta_screen(sys: "ElasticitySystem", Ag_dense: np.ndarray):
    from .neural import spectral_norm_est

    AgInv = np.linalg.inv(Ag_dense)
    I = np.eye(Ag_dense.shape[0])

    def screen(coeffs: np.ndarray) -> float:
        uu = Stencil(coeffs[:9].reshape(3, 3))
        uv = Stencil(coeffs[9:].reshape(3, 3))
        Ac = sys.operator_from_stencils(uu, uv).toarray()
        return spectral_norm_est(I - Ac @ AgInv)

    return screen


def train_elasticity_model(n_train: int = 9, nus=(0.1, 0.2, 0.3, 0.4), cfg=None, k_total: int | None = None):
    """Train the combined-stencil sparsifier; returns (model, k_blocks)."""
    from .neural import TrainConfig, train_level

    cfg = cfg or TrainConfig(epochs=2500)
    ts, k_blocks = build_elasticity_train_set(n_train, nus, cfg.s)
    if k_total is not None:
        k_blocks = split_k(*_galerkin_nnz(n_train, nus), k_total)
    model = train_level(ts, k_blocks, cfg)
    return model, k_blocks


def _galerkin_nnz(n_train, nus):
    sys = ElasticitySystem(ElasticityParams(nu=nus[0]), n_train)
    uu, uv = sys.coarse_stencils()
    scale = max(np.abs(uu.coeffs).max(), np.abs(uv.coeffs).max(), 1.0)
    return (
        int(np.sum(np.abs(uu.coeffs) > 1e-12 * scale)),
        int(np.sum(np.abs(uv.coeffs) > 1e-12 * scale)),
    )


def model_coarse_operator(sys: "ElasticitySystem", model) -> sp.csr_matrix:
    """Sparsified coarse block operator for one assembled system."""
    uu, uv = sys.coarse_stencils()
    vals = model.sparsify_vector(np.concatenate([uu.vec(), uv.vec()]))
    return sys.operator_from_stencils(
        Stencil(vals[:9].reshape(3, 3)), Stencil(vals[9:].reshape(3, 3))
    )


def elasticity_counts(nu: float, n_test: int, model=None, seed: int = 0, tol: float = 1e-6, E: float = 1e-5):
    """(galerkin iterations, model iterations) for one sampled Poisson ratio."""
    sys = ElasticitySystem(ElasticityParams(E=E, nu=nu), n_test)
    f = sys.random_rhs(seed)
    _, rg = sys.two_grid_solve(f, tol=tol)
    g = rg.iterations if rg.converged else None
    if model is None:
        return g, None
    _, rm = sys.two_grid_solve(f, coarse_op=model_coarse_operator(sys, model), tol=tol)
    m = rm.iterations if rm.converged else None
    return g, m
