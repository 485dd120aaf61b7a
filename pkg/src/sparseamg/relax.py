"""Classical relaxation methods used as smoothers and standalone solvers.

All variants realize u <- (I - M^{-1}A) u + M^{-1} f matrix-free on the grid:

* jacobi:           M = D
* weighted_jacobi:  damped update u <- u + w * r / diag, w in (0, 1]
  (equivalent to M = (1/w) D; the plain M = wD reading with w < 1 would
  amplify the update instead of damping it)
* gauss_seidel:     M = D - L for a forward lexicographic sweep,
                    M = D - U for a backward sweep
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stencil as stmod
from ._kernels import gs_sweep

KINDS = ("jacobi", "weighted_jacobi", "gauss_seidel")


@dataclass(frozen=True)
class SmootherSpec:
    kind: str = "gauss_seidel"
    weight: float = 1.0
    sweeps: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.kind == "weighted_jacobi" and not 0.0 < self.weight <= 1.0:
            raise ValueError("weighted_jacobi weight must be in (0, 1]")
        if self.sweeps < 0:
            raise ValueError("sweep count must be >= 0")


def residual(st: stmod.Stencil, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """r = f - A u."""
    if u.shape != f.shape:
        raise ValueError(f"shape mismatch: u {u.shape} vs f {f.shape}")
    return f - stmod.apply(st, u)


def smooth(
    st: stmod.Stencil,
    u: np.ndarray,
    f: np.ndarray,
    spec: SmootherSpec,
    direction: str = "forward",
) -> np.ndarray:
    """Run spec.sweeps relaxation sweeps starting from u; returns a new array."""
    if st.center_value == 0.0:
        raise ZeroDivisionError("stencil center coefficient is zero")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    out = np.array(u, dtype=np.float64, copy=True)
    d = st.center_value
    for _ in range(spec.sweeps):
        if spec.kind == "jacobi":
            out += (f - stmod.apply(st, out)) / d
        elif spec.kind == "weighted_jacobi":
            out += spec.weight * (f - stmod.apply(st, out)) / d
        else:
            gs_sweep(st.coeffs, out, np.asarray(f, dtype=np.float64), direction == "forward")
    return out
