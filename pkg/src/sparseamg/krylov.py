"""Right-preconditioned GMRES for the solver-comparison experiments.

The preconditioner is any fixed linear map, in practice one V-cycle with zero
initial guess.  Convergence is declared on the true relative residual; the
Arnoldi estimate (which equals it for right preconditioning in exact
arithmetic) only schedules when to form the iterate and check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mg import SolveReport


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-6
    max_iter: int = 500
    restart: int | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be >= 1 when set")


def _identity(x):
    return x


def gmres_solve(apply_A, precond, f: np.ndarray, cfg: GmresConfig = GmresConfig()):
    """Solve A u = f with right-preconditioned GMRES.

    apply_A and precond act on grid-shaped arrays.  Returns the solution and
    a SolveReport whose history holds the per-iteration relative residual
    estimates (true residuals at restart/convergence checkpoints).
    """
    if precond is None:
        precond = _identity
    shape = f.shape
    b = np.asarray(f, dtype=np.float64).ravel()
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros(shape), SolveReport(0, [0.0], converged=True, diverged=False)

    applyA = lambda v: np.asarray(apply_A(v.reshape(shape)), dtype=np.float64).ravel()
    applyM = lambda v: np.asarray(precond(v.reshape(shape)), dtype=np.float64).ravel()

    x = np.zeros_like(b)
    history = [1.0]
    total_iters = 0
    converged = False
    cycle_len = cfg.restart if cfg.restart is not None else cfg.max_iter

    while total_iters < cfg.max_iter and not converged:
        r0 = b - applyA(x)
        beta = float(np.linalg.norm(r0))
        if beta / nb <= cfg.tol:
            converged = True
            break
        steps = min(cycle_len, cfg.max_iter - total_iters)
        V = np.empty((steps + 1, b.size))
        V[0] = r0 / beta
        H = np.zeros((steps + 1, steps))
        cs = np.zeros(steps)
        sn = np.zeros(steps)
        g = np.zeros(steps + 1)
        g[0] = beta
        j_done = 0
        breakdown = False
        for j in range(steps):
            w = applyA(applyM(V[j]))
            for i in range(j + 1):
                H[i, j] = float(V[i] @ w)
                w -= H[i, j] * V[i]
            H[j + 1, j] = float(np.linalg.norm(w))
            if H[j + 1, j] > 1e-300:
                V[j + 1] = w / H[j + 1, j]
            else:
                breakdown = True
            # Givens update of the Hessenberg column
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = float(np.hypot(H[j, j], H[j + 1, j]))
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total_iters += 1
            j_done = j + 1
            est = abs(g[j + 1]) / nb
            history.append(est)
            if est <= cfg.tol or breakdown or total_iters >= cfg.max_iter:
                break
        # form iterate, check the true residual
        y = np.zeros(j_done)
        for i in range(j_done - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1 : j_done] @ y[i + 1 : j_done]) / H[i, i]
        x = x + applyM(V[:j_done].T @ y)
        true_rel = float(np.linalg.norm(b - applyA(x))) / nb
        history[-1] = true_rel
        if true_rel <= cfg.tol:
            converged = True
        elif breakdown:
            break
    return x.reshape(shape), SolveReport(total_iters, history, converged, diverged=False)
