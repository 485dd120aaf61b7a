"""Experiment protocols behind the reproduce tables and the acceptance runs.

Each runner returns plain row dicts; the CLI writes them as CSV.  Iteration
cells hold the mean over samples or the literal token DIVERGED.  All
randomness flows from one seed per invocation: sample j of a cell uses
seed + j for both the parameter draw and the right-hand side.
"""

from __future__ import annotations

import math

import numpy as np

from . import mg
from .krylov import GmresConfig, gmres_solve
from .neural import SparsifierModel, TrainConfig, build_scalar_train_set, train_level
from .problems import ParamInterval, RotLapParams, circulant_stencil, rotlap_stencil, train_grid
from .relax import SmootherSpec
from .stencil import Stencil, apply, galerkin_coarsen

DIVERGED = "DIVERGED"

CIRC_A, CIRC_B, CIRC_C = 2.720, 1.417, 0.000114
CIRC_SIZES = (63, 95, 127, 191, 255, 383, 511)

ROTLAP_THETA_TABLE = {
    "xis": (100.0, 200.0, 300.0, 400.0),
    "theta_intervals": ((math.pi / 6, math.pi / 4), (math.pi / 4, math.pi / 3), (math.pi / 2, 7 * math.pi / 12)),
}
ROTLAP_XI_TABLE = {
    "thetas": (math.pi / 6, math.pi / 4, math.pi / 3, 5 * math.pi / 12),
    "xi_intervals": ((100.0, 200.0), (80.0, 100.0), (5.0, 10.0)),
}


def rhs_for(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, n))


# ---- model training per problem family ----


def train_rotlap_models(
    theta_spec,
    xi_spec,
    levels: tuple = (2, 3),
    k: int = 5,
    train_n: int = 31,
    cfg: TrainConfig = TrainConfig(),
) -> dict:
    """Train per-level sparsifiers for a rotated-Laplacian parameter interval.

    theta_spec / xi_spec are either a fixed float or a (low, high) interval;
    the interval one is covered by 5 evenly spaced training instances.
    Training data always comes from the pure-Galerkin hierarchy of the
    31x31-by-default training problem.
    """
    if isinstance(theta_spec, tuple):
        thetas = train_grid(ParamInterval(*theta_spec))
        xis = [float(xi_spec)] * len(thetas)
    elif isinstance(xi_spec, tuple):
        xis = train_grid(ParamInterval(*xi_spec))
        thetas = [float(theta_spec)] * len(xis)
    else:
        thetas, xis = [float(theta_spec)], [float(xi_spec)]
    betas = list(zip(thetas, xis))
    stencils = [rotlap_stencil(RotLapParams(t, x)) for t, x in betas]
    models = {}
    n = train_n
    for level in sorted(levels):
        stencils = [galerkin_coarsen(st) for st in stencils]
        n = mg.coarse_size(n)
        ts = build_scalar_train_set(stencils, n, cfg.s, level=level, betas=betas)
        models[level] = train_level(ts, k, cfg)
    return models


def train_circulant_model(
    a: float = CIRC_A,
    b: float = CIRC_B,
    c: float = CIRC_C,
    k: int = 5,
    train_n: int = 31,
    level: int = 2,
    cfg: TrainConfig = TrainConfig(),
) -> SparsifierModel:
    st = circulant_stencil(a, b, c)
    n = train_n
    for _ in range(level - 1):
        st = galerkin_coarsen(st)
        n = mg.coarse_size(n)
    ts = build_scalar_train_set([st], n, cfg.s, level=level, betas=[(a, b, c)])
    return train_level(ts, k, cfg)


# ---- solving protocols ----


def iteration_count(
    fine: Stencil,
    n: int,
    L: int,
    mode: str = "galerkin",
    models=None,
    k=None,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 1000,
    smoother: SmootherSpec = SmootherSpec(),
):
    """V-cycle iterations to tol for a random right-hand side; None if diverged."""
    h = mg.build_hierarchy(fine, n, L, mode=mode, models=models, k=k, smoother=smoother)
    _, rep = mg.solve(h, rhs_for(n, seed), tol=tol, max_iter=max_iter)
    if rep.converged:
        return rep.iterations
    return None


def gmres_count(
    fine: Stencil,
    n: int,
    L: int,
    mode: str = "galerkin",
    models=None,
    k=None,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 500,
    smoother: SmootherSpec = SmootherSpec(sweeps=2),
):
    """Right-preconditioned GMRES iterations; preconditioner is one V-cycle."""
    h = mg.build_hierarchy(fine, n, L, mode=mode, models=models, k=k, smoother=smoother)
    precond = lambda r: mg.v_cycle(h, 0, np.zeros_like(r), r)
    apply_A = lambda u: apply(fine, u)
    _, rep = gmres_solve(apply_A, precond, rhs_for(n, seed), GmresConfig(tol=tol, max_iter=max_iter))
    if rep.converged:
        return rep.iterations
    return None


def mean_or_diverged(counts) -> str:
    if any(c is None for c in counts):
        return DIVERGED
    return f"{np.mean(counts):.1f}"


# ---- reproduce runners ----


def reproduce_circulant(seed: int = 0, sizes=CIRC_SIZES, train_cfg: TrainConfig | None = None, model=None):
    """Two-level iteration table for the Galerkin, analytic, and learned
    coarse operators of the circulant problem."""
    fine = circulant_stencil(CIRC_A, CIRC_B, CIRC_C)
    if model is None:
        model = train_circulant_model(cfg=train_cfg or TrainConfig(seed=seed + 7))
    rows = []
    for label, mode, kwargs in (
        ("A_g", "galerkin", {}),
        ("A_c", "analytic5pt", {}),
        ("A_nn", "model", {"models": {2: model}}),
    ):
        row = {"operator": label}
        for n in sizes:
            its = iteration_count(fine, n, 2, mode=mode, seed=seed, **kwargs)
            row[str(n)] = str(its) if its is not None else DIVERGED
        rows.append(row)
    return rows, model


def _rotlap_cell(
    theta_spec,
    xi_spec,
    n: int,
    seed: int,
    L: int = 3,
    samples: int = 10,
    k_choices=(5, 6, 7),
    ratio_target: float = 1.25,
    train_cfg: TrainConfig | None = None,
    with_truncate: bool = False,
    truncate_budget: float = 2.2,
):
    """One table cell: means over sampled parameters for A_g and A_nn.

    k escalates through k_choices until the first sample's model run stays
    within ratio_target of the Galerkin count (the framework's own guidance:
    the right stencil complexity is found by experiment).  The truncate
    baseline, when requested, runs capped at truncate_budget times the
    Galerkin count since only the "at least twice as slow or diverged"
    outcome matters.
    """
    cfg = train_cfg or TrainConfig(epochs=2500)
    var_interval = theta_spec if isinstance(theta_spec, tuple) else xi_spec
    fixed_is_theta = not isinstance(theta_spec, tuple)
    lo, hi = var_interval

    def sample_params_at(j):
        v = float(np.random.default_rng(seed + j).uniform(lo, hi))
        return (float(theta_spec), v) if fixed_is_theta else (v, float(xi_spec))

    g_counts, m_counts, t_counts = [], [], []
    chosen_k = None
    models = None
    for j in range(samples):
        theta_v, xi_v = sample_params_at(j)
        fine = rotlap_stencil(RotLapParams(theta_v, xi_v))
        g = iteration_count(fine, n, L, "galerkin", seed=seed + j)
        g_counts.append(g)
        if chosen_k is None:
            for k in k_choices:
                models = train_rotlap_models(theta_spec, xi_spec, tuple(range(2, L + 1)), k, cfg=cfg)
                m = iteration_count(fine, n, L, "model", models=models, seed=seed + j)
                chosen_k = k
                if g is not None and m is not None and m <= ratio_target * g:
                    break
        else:
            m = iteration_count(fine, n, L, "model", models=models, seed=seed + j)
        m_counts.append(m)
        if with_truncate:
            cap = 1000 if g is None else min(1000, int(truncate_budget * g) + 1)
            t = iteration_count(fine, n, L, "truncate", k=chosen_k, seed=seed + j, max_iter=cap)
            t_counts.append(t)
    cell = {
        "galerkin": mean_or_diverged(g_counts),
        "model": mean_or_diverged(m_counts),
        "k": chosen_k,
        "galerkin_counts": g_counts,
        "model_counts": m_counts,
    }
    if with_truncate:
        cell["truncate"] = mean_or_diverged(t_counts)
        cell["truncate_counts"] = t_counts
    return cell


def reproduce_rotlap(variant: str, n: int = 255, seed: int = 0, samples: int = 10, with_truncate: bool = False, train_cfg=None):
    """The 12-cell averaged-iteration tables (theta varying or xi varying)."""
    rows = []
    if variant == "theta":
        for xi in ROTLAP_THETA_TABLE["xis"]:
            for interval in ROTLAP_THETA_TABLE["theta_intervals"]:
                cell = _rotlap_cell(interval, xi, n, seed, samples=samples, with_truncate=with_truncate, train_cfg=train_cfg)
                rows.append({"fixed": f"xi={xi:g}", "interval": f"theta=({interval[0]:.4f},{interval[1]:.4f})", **cell})
    elif variant == "xi":
        for theta in ROTLAP_XI_TABLE["thetas"]:
            for interval in ROTLAP_XI_TABLE["xi_intervals"]:
                cell = _rotlap_cell(theta, interval, n, seed, samples=samples, with_truncate=with_truncate, train_cfg=train_cfg)
                rows.append({"fixed": f"theta={theta:.4f}", "interval": f"xi=({interval[0]:g},{interval[1]:g})", **cell})
    else:
        raise ValueError(f"unknown rotlap variant {variant!r}")
    return rows


def reproduce_ksweep(n: int = 255, seed: int = 0, theta: float = math.pi / 4, xi: float = 10.0, ks=(4, 5, 6), train_cfg=None):
    """Two-grid convergence behavior as the stencil complexity k varies."""
    cfg = train_cfg or TrainConfig(epochs=2500)
    fine = rotlap_stencil(RotLapParams(theta, xi))
    g = iteration_count(fine, n, 2, "galerkin", seed=seed)
    rows = [{"k": "galerkin(9)", "iterations": str(g) if g is not None else DIVERGED}]
    for k in ks:
        models = train_rotlap_models(theta, xi, (2,), k, cfg=cfg)
        its = iteration_count(fine, n, 2, "model", models=models, seed=seed)
        rows.append({"k": str(k), "iterations": str(its) if its is not None else DIVERGED})
    return rows, g


def reproduce_gmres_baseline(n: int = 255, seed: int = 0, samples: int = 10, train_cfg=None, thetas=None, intervals=None):
    """GMRES preconditioned by 3-level AMG: Galerkin, learned, and
    magnitude-truncation coarse operators over the xi-interval cells."""
    cfg = train_cfg or TrainConfig(epochs=2500)
    thetas = thetas or ROTLAP_XI_TABLE["thetas"]
    intervals = intervals or ROTLAP_XI_TABLE["xi_intervals"]
    rows = []
    for theta in thetas:
        for interval in intervals:
            lo, hi = interval
            models = None
            chosen_k = None
            g_counts, m_counts, t_counts = [], [], []
            for j in range(samples):
                xi_v = float(np.random.default_rng(seed + j).uniform(lo, hi))
                fine = rotlap_stencil(RotLapParams(theta, xi_v))
                g_counts.append(gmres_count(fine, n, 3, "galerkin", seed=seed + j))
                if models is None:
                    for k in (5, 6, 7):
                        models = train_rotlap_models(theta, interval, (2, 3), k, cfg=cfg)
                        m = gmres_count(fine, n, 3, "model", models=models, seed=seed + j)
                        chosen_k = k
                        if g_counts[0] is not None and m is not None and m <= 2.0 * g_counts[0]:
                            break
                else:
                    m = gmres_count(fine, n, 3, "model", models=models, seed=seed + j)
                m_counts.append(m)
                t_counts.append(gmres_count(fine, n, 3, "truncate", k=chosen_k, seed=seed + j))
            rows.append(
                {
                    "theta": f"{theta:.4f}",
                    "interval": f"xi=({lo:g},{hi:g})",
                    "A_g": mean_or_diverged(g_counts),
                    "A_nn": mean_or_diverged(m_counts),
                    "truncate": mean_or_diverged(t_counts),
                    "k": chosen_k,
                    "galerkin_counts": g_counts,
                    "model_counts": m_counts,
                    "truncate_counts": t_counts,
                }
            )
    return rows


def reproduce_elasticity(seed: int = 0, n_test: int = 65, n_train: int = 9, samples: int = 10, train_cfg=None):
    """Two-grid elasticity iterations with the Galerkin coarse operator and
    with the learned block-stencil operator at half the nonzeros."""
    from .elasticity import train_elasticity_model, elasticity_counts

    cfg = train_cfg or TrainConfig(epochs=2500)
    model, k_blocks = train_elasticity_model(n_train=n_train, cfg=cfg)
    rows = []
    for lo, hi in ((0.1, 0.2), (0.2, 0.3), (0.3, 0.4)):
        g_counts, m_counts = [], []
        for j in range(samples):
            nu = float(np.random.default_rng(seed + j).uniform(lo, hi))
            g, m = elasticity_counts(nu, n_test, model, seed=seed + j)
            g_counts.append(g)
            m_counts.append(m)
        rows.append(
            {
                "interval": f"nu=({lo:g},{hi:g})",
                "A_g": mean_or_diverged(g_counts),
                "A_nn": mean_or_diverged(m_counts),
                "galerkin_counts": g_counts,
                "model_counts": m_counts,
            }
        )
    return rows, model


def spectrum_table(model: SparsifierModel, theta: float, xi: float, meshes=(15, 31, 63)):
    """Eigenvalues of A_nn^{-1} A_g per mesh for a trained rotlap model."""
    from .stencil import assemble

    fine = rotlap_stencil(RotLapParams(theta, xi))
    ag = galerkin_coarsen(fine)
    ann = model.sparsify(ag)
    out = {}
    for m in meshes:
        Ag = assemble(ag, m, m)
        Ann = assemble(ann, m, m)
        out[m] = mg.speq_spectrum(Ag, Ann)
    return out
