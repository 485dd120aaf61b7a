"""Multigrid hierarchies, V-cycles, and spectral-equivalence diagnostics.

The operating coarse operator at every level is a 3x3 stencil applied with
zero padding; for the full-weighting / bilinear transfer pair this coincides
with the assembled triple product R A P on every row, boundary included.

``solve`` monitors the relative residual that each V-cycle computes after its
pre-smoothing step (the same residual that gets restricted), so convergence
costs no extra operator applications.  The reported iteration count is the
number of completed cycles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import stencil as stmod
from .relax import SmootherSpec, smooth
from .stencil import Stencil, analytic_equivalent_5pt, galerkin_coarsen, truncate_by_magnitude

DIVERGENCE_FACTOR = 1e6
DENSE_SOLVE_MAX = 2_500

COARSE_MODES = ("galerkin", "model", "analytic5pt", "truncate")


class NumericalError(RuntimeError):
    """Singular operator, non-convergent inner solver, or similar failure."""


@dataclass(frozen=True)
class Level:
    stencil: Stencil
    n: int


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    diverged: bool

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "converged": self.converged,
            "diverged": self.diverged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def write_history_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,relative_residual\n")
            for i, r in enumerate(self.residual_history):
                fh.write(f"{i},{r!r}\n")


@dataclass(eq=False)
class MgHierarchy:
    levels: list
    smoother: SmootherSpec = SmootherSpec()
    coarse_solver: str = "auto"  # auto | dense | cg
    cg_tol: float = 1e-12
    _factor: object = field(default=None, repr=False)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def coarse_solve(self, rc: np.ndarray) -> np.ndarray:
        bottom = self.levels[-1]
        m = bottom.n
        if self.coarse_solver == "cg":
            return _cg_solve(bottom.stencil, rc, self.cg_tol)
        if self._factor is None:
            N = m * m
            if self.coarse_solver == "dense" or (self.coarse_solver == "auto" and N <= DENSE_SOLVE_MAX):
                A = stmod.assemble(bottom.stencil, m, m)
                try:
                    self._factor = ("dense", sla.lu_factor(A))
                except (sla.LinAlgError, ValueError) as exc:
                    raise NumericalError(f"coarse operator factorization failed: {exc}") from exc
            else:
                A = stmod.assemble_sparse(bottom.stencil, m, m).tocsc()
                try:
                    self._factor = ("splu", spla.splu(A))
                except RuntimeError as exc:
                    raise NumericalError(f"coarse operator factorization failed: {exc}") from exc
        kind, fac = self._factor
        if kind == "dense":
            sol = sla.lu_solve(fac, rc.ravel())
        else:
            sol = fac.solve(rc.ravel())
        if not np.all(np.isfinite(sol)):
            raise NumericalError("coarse solve produced non-finite values")
        return sol.reshape(m, m)


def coarse_size(n: int) -> int:
    if n < 3 or n % 2 == 0:
        raise ValueError(f"grid side must be odd and >= 3 to coarsen, got {n}")
    return (n - 1) // 2


def build_hierarchy(
    fine: Stencil,
    n: int,
    L: int,
    mode: str = "galerkin",
    models: dict | None = None,
    k: int | None = None,
    smoother: SmootherSpec = SmootherSpec(),
    coarse_solver: str = "auto",
) -> MgHierarchy:
    """Construct an L-level hierarchy from the fine stencil.

    Each coarse level starts from the Galerkin stencil of the level above
    (computed from that level's operating stencil) and is then replaced
    according to ``mode``:

    * galerkin:    keep R A P
    * analytic5pt: 5-point circulant equivalent
    * truncate:    keep the k largest-magnitude entries
    * model:       SparsifyStencil with the trained model for that level;
                   ``models`` maps 1-based level index (2..L) to the model

    Sparsification applies to every coarse level including the bottom one;
    the two-level experiments use the sparsified stencil as the coarse
    operator directly.
    """
    if mode not in COARSE_MODES:
        raise ValueError(f"unknown coarse mode {mode!r}")
    if L < 1:
        raise ValueError("need at least one level")
    if mode == "truncate" and k is None:
        raise ValueError("truncate mode needs k")
    levels = [Level(fine, n)]
    size = n
    for l in range(2, L + 1):
        size = coarse_size(size)
        if size < 1:
            raise ValueError(f"grid exhausted at level {l}: n={n}, L={L}")
        ag = galerkin_coarsen(levels[-1].stencil)
        if mode == "galerkin":
            st = ag
        elif mode == "analytic5pt":
            st = analytic_equivalent_5pt(ag)
        elif mode == "truncate":
            st = truncate_by_magnitude(ag, k)
        else:
            if models is None or l not in models:
                raise ValueError(f"missing sparsifier model for level {l}")
            st = models[l].sparsify(ag)
        levels.append(Level(st, size))
    return MgHierarchy(levels, smoother=smoother, coarse_solver=coarse_solver)


def _cg_solve(st: Stencil, b: np.ndarray, tol: float) -> np.ndarray:
    """Matrix-free CG on the stencil operator; sign-flips negative definite input."""
    sign = -1.0 if st.center_value < 0 else 1.0
    rhs = sign * b
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(np.sum(r * r))
    nb = float(np.sqrt(np.sum(rhs * rhs)))
    if nb == 0.0:
        return x
    for _ in range(10 * b.size):
        Ap = sign * stmod.apply(st, p)
        denom = float(np.sum(p * Ap))
        if denom <= 0.0:
            raise NumericalError("CG breakdown: operator not definite")
        alpha = rs / denom
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.sum(r * r))
        if np.sqrt(rs_new) <= tol * nb:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise NumericalError("coarse CG failed to converge")


def _cycle(h: MgHierarchy, l: int, u: np.ndarray, f: np.ndarray):
    """One V-cycle at 0-based level l; returns (u, pre-smoothing residual norm)."""
    if l == h.num_levels - 1:
        r = f - stmod.apply(h.levels[l].stencil, u)
        rn = float(np.linalg.norm(r))
        return u + h.coarse_solve(r), rn
    st = h.levels[l].stencil
    u = smooth(st, u, f, h.smoother, "forward")
    r = f - stmod.apply(st, u)
    rn = float(np.linalg.norm(r))
    rc = stmod.restrict_fw(r)
    if l + 1 == h.num_levels - 1:
        ec = h.coarse_solve(rc)
    else:
        ec, _ = _cycle(h, l + 1, np.zeros_like(rc), rc)
    u = u + stmod.prolong_bilinear(ec)
    u = smooth(st, u, f, h.smoother, "backward")
    return u, rn


def v_cycle(h: MgHierarchy, l: int, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """One complete V-cycle starting at 0-based level l."""
    if not 0 <= l < h.num_levels:
        raise ValueError(f"level {l} out of range for {h.num_levels}-level hierarchy")
    out, _ = _cycle(h, l, np.asarray(u, dtype=np.float64), np.asarray(f, dtype=np.float64))
    return out


def solve(
    h: MgHierarchy,
    f: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 1000,
    u0: np.ndarray | None = None,
):
    """Stationary V-cycle iteration down to a relative residual of tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = np.asarray(f, dtype=np.float64)
    nf = float(np.linalg.norm(f))
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=np.float64, copy=True)
    if nf == 0.0:
        report = SolveReport(0, [0.0], converged=True, diverged=False)
        return u, report
    history = [float(np.linalg.norm(f - stmod.apply(h.levels[0].stencil, u))) / nf]
    converged = diverged = False
    it = 0
    for it in range(1, max_iter + 1):
        u, rn = _cycle(h, 0, u, f)
        rel = rn / nf
        history.append(rel)
        if not np.isfinite(rel) or rel > DIVERGENCE_FACTOR:
            diverged = True
            break
        if rel <= tol:
            converged = True
            break
    return u, SolveReport(it, history, converged, diverged)


def probe_cycle_matrix(h: MgHierarchy) -> np.ndarray:
    """Dense matrix K of the zero-guess V-cycle map f -> K f (K plays B^{-1})."""
    n = h.levels[0].n
    if n * n > stmod.DENSE_CAP:
        raise ValueError("probing above the dense cap")
    K = np.zeros((n * n, n * n))
    e = np.zeros((n, n))
    for j in range(n * n):
        e.ravel()[j] = 1.0
        K[:, j] = v_cycle(h, 0, np.zeros((n, n)), e).ravel()
        e.ravel()[j] = 0.0
    return K


def _smoother_matrices(A: np.ndarray, spec: SmootherSpec):
    D = np.diag(np.diag(A))
    if spec.kind == "jacobi":
        M = D
    elif spec.kind == "weighted_jacobi":
        M = D / spec.weight
    else:
        M = np.tril(A)
    return M, M.T


def two_grid_error_ops(
    fine: Stencil,
    n: int,
    nu: int,
    coarse: Stencil,
    smoother: SmootherSpec = SmootherSpec(),
):
    """Dense two-grid error propagation matrix E and the induced B.

    E = (I - M^{-T}A)^nu (I - P A_c^{-1} R A) (I - M^{-1}A)^nu, with B defined
    through E = I - B^{-1}A.  B uses a pseudo-inverse so the nu = 0 projector
    case stays well defined.
    """
    m = coarse_size(n)
    A = stmod.assemble(fine, n, n)
    Ac = stmod.assemble(coarse, m, m)
    P = stmod.prolongation_matrix(m)
    R = P.T / 4.0
    I = np.eye(n * n)
    try:
        CGC = I - P @ sla.solve(Ac, R @ A)
    except sla.LinAlgError as exc:
        raise NumericalError(f"singular coarse operator: {exc}") from exc
    M, Mt = _smoother_matrices(A, smoother)
    Sf = I - sla.solve(M, A)
    Sb = I - sla.solve(Mt, A)
    E = np.linalg.matrix_power(Sb, nu) @ CGC @ np.linalg.matrix_power(Sf, nu)
    B = A @ np.linalg.pinv(I - E)
    return E, B


def theta(Ag_mat: np.ndarray, Ac_mat: np.ndarray) -> float:
    """Spectral-equivalence measure ||I - A_c A_g^{-1}||_2."""
    try:
        X = sla.solve(Ag_mat.T, Ac_mat.T).T
    except sla.LinAlgError as exc:
        raise NumericalError(f"singular A_g: {exc}") from exc
    return float(sla.svdvals(np.eye(Ag_mat.shape[0]) - X)[0])


def speq_spectrum(Ag_mat: np.ndarray, Ac_mat: np.ndarray) -> np.ndarray:
    """Eigenvalues of A_c^{-1} A_g, ascending.

    Symmetric definite pairs go through the generalized symmetric solver;
    anything else falls back to the general eigensolver, asserting that
    imaginary parts stay below 1e-8 relative to the spectral scale.
    """
    sym = np.allclose(Ag_mat, Ag_mat.T, atol=1e-12) and np.allclose(Ac_mat, Ac_mat.T, atol=1e-12)
    if sym:
        for sign in (1.0, -1.0):
            try:
                sla.cholesky(sign * Ac_mat)
            except sla.LinAlgError:
                continue
            w = sla.eigh(sign * Ag_mat, sign * Ac_mat, eigvals_only=True)
            return np.sort(w)
    try:
        w = sla.eig(sla.solve(Ac_mat, Ag_mat), right=False)
    except sla.LinAlgError as exc:
        raise NumericalError(f"singular A_c: {exc}") from exc
    scale = max(np.abs(w).max(), 1.0)
    if np.abs(w.imag).max() > 1e-8 * scale:
        raise NumericalError("spectrum has significant imaginary parts")
    return np.sort(w.real)
