"""Attention-based stencil sparsifier: location/value networks and training.

Two multi-head attention networks act on the vectorized coarse stencil (one
token per entry, the scalar value riding on a learned embedding direction
plus a positional row).  The location network ends in a softmax over entries
whose top-k support becomes a hard mask; the value network output is linear
and supplies the retained coefficients.  The training loss matches the action
of the sparsified stencil to the Galerkin stencil on smooth test vectors.

Gradients cross the hard top-k selection with a straight-through term: the
forward value uses the Boolean mask, the backward pass treats the mask factor
as the softmax probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, basis_action, concat
from .mg import NumericalError
from .stencil import Stencil

D_MODEL = 16
N_HEADS = 4


@dataclass
class AttentionParams:
    """Weights of one multi-head attention network over m stencil tokens."""

    wq: list  # n_h arrays (d_model, d_k)
    wk: list
    wv: list
    wo: np.ndarray  # (n_h*d_k, d_out)
    e_val: np.ndarray  # (1, d_model), embedding direction for the entry value
    e_pos: np.ndarray  # (m, d_model), positional rows

    @property
    def n_heads(self):
        return len(self.wq)

    @property
    def d_model(self):
        return self.e_pos.shape[1]

    @property
    def m(self):
        return self.e_pos.shape[0]

    def copy(self):
        return AttentionParams(
            [w.copy() for w in self.wq],
            [w.copy() for w in self.wk],
            [w.copy() for w in self.wv],
            self.wo.copy(),
            self.e_val.copy(),
            self.e_pos.copy(),
        )

    def to_dict(self):
        return {
            "wq": [w.tolist() for w in self.wq],
            "wk": [w.tolist() for w in self.wk],
            "wv": [w.tolist() for w in self.wv],
            "wo": self.wo.tolist(),
            "E": np.vstack([self.e_val, self.e_pos]).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        E = np.asarray(d["E"], dtype=np.float64)
        return cls(
            [np.asarray(w, dtype=np.float64) for w in d["wq"]],
            [np.asarray(w, dtype=np.float64) for w in d["wk"]],
            [np.asarray(w, dtype=np.float64) for w in d["wv"]],
            np.asarray(d["wo"], dtype=np.float64),
            E[:1],
            E[1:],
        )


def init_attention(m: int, rng, d_model: int = D_MODEL, n_heads: int = N_HEADS, d_out: int = 1):
    """Uniform init scaled by 1/sqrt(fan-in); draw order is fixed for determinism."""
    if d_model % n_heads != 0:
        raise ValueError("d_model must be divisible by the head count")
    d_k = d_model // n_heads
    u = lambda shape, fan: rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan)
    e_val = u((1, d_model), 1)
    e_pos = u((m, d_model), 1)
    wq, wk, wv = [], [], []
    for _ in range(n_heads):
        wq.append(u((d_model, d_k), d_model))
        wk.append(u((d_model, d_k), d_model))
        wv.append(u((d_model, d_k), d_model))
    wo = u((n_heads * d_k, d_out), n_heads * d_k)
    return AttentionParams(wq, wk, wv, wo, e_val, e_pos)


# ---- forward passes ----

_PARAM_FIELDS = ("e_val", "e_pos", "wq", "wk", "wv", "wo")


def params_to_tensors(p: AttentionParams) -> dict:
    t = {"e_val": Tensor(p.e_val), "e_pos": Tensor(p.e_pos), "wo": Tensor(p.wo)}
    for i in range(p.n_heads):
        t[f"wq{i}"] = Tensor(p.wq[i])
        t[f"wk{i}"] = Tensor(p.wk[i])
        t[f"wv{i}"] = Tensor(p.wv[i])
    return t


def tensor_list(t: dict) -> list:
    return [t[k] for k in sorted(t.keys())]


def attention_tensor(t: dict, n_heads: int, v_norm: np.ndarray) -> Tensor:
    """Tensor-valued forward pass; returns one scalar per token as (m, 1)."""
    m = v_norm.size
    d_k = t["wq0"].shape[1]
    vcol = Tensor(v_norm.reshape(m, 1))
    tokens = vcol @ t["e_val"] + t["e_pos"]
    heads = []
    for i in range(n_heads):
        Q = tokens @ t[f"wq{i}"]
        K = tokens @ t[f"wk{i}"]
        V = tokens @ t[f"wv{i}"]
        att = ((Q @ K.t()) / np.sqrt(d_k)).softmax_rows()
        heads.append(att @ V)
    return concat(heads, axis=1) @ t["wo"]


def attention_forward(params: AttentionParams, v: np.ndarray) -> np.ndarray:
    """Inference forward pass: the m-vector of per-token outputs."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != params.m:
        raise ValueError(f"input length {v.size} does not match embedding table m={params.m}")
    return attention_tensor(params_to_tensors(params), params.n_heads, v).data.ravel()


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def topk_mask(p: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries; ties break row-major (stable)."""
    p = np.asarray(p).ravel()
    if not 1 <= k <= p.size:
        raise ValueError(f"k must be in [1, {p.size}], got {k}")
    mask = np.zeros(p.size, dtype=bool)
    mask[np.argsort(-p, kind="stable")[:k]] = True
    return mask


@dataclass
class SparsifierModel:
    """Trained location/value networks plus the sparsification target k.

    block_split partitions the input vector into consecutive blocks (for the
    coupled-stencil input of the elasticity problem); k_blocks then holds the
    per-block retention counts and k is their sum.
    """

    level: int
    k: int
    F: AttentionParams
    G: AttentionParams
    norm_mode: str = "unit_max"
    seed: int | None = None
    block_split: tuple | None = None
    k_blocks: tuple | None = None
    train_meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.F.m

    def _normalize(self, v: np.ndarray):
        if self.norm_mode != "unit_max":
            raise ValueError(f"unknown norm_mode {self.norm_mode!r}")
        scale = float(np.abs(v).max())
        if scale == 0.0:
            scale = 1.0
        return v / scale, scale

    def mask_for(self, probs: np.ndarray) -> np.ndarray:
        if self.block_split is None:
            return topk_mask(probs, self.k)
        mask = np.zeros(probs.size, dtype=bool)
        lo = 0
        for size, kb in zip(self.block_split, self.k_blocks):
            mask[lo : lo + size] = topk_mask(probs[lo : lo + size], kb)
            lo += size
        return mask

    def sparsify_vector(self, v_g: np.ndarray) -> np.ndarray:
        """Hard-masked value-network output, rescaled to the input magnitude."""
        v_g = np.asarray(v_g, dtype=np.float64).ravel()
        vn, scale = self._normalize(v_g)
        probs = _softmax(attention_forward(self.F, vn))
        vals = attention_forward(self.G, vn) * scale
        return np.where(self.mask_for(probs), vals, 0.0)

    def sparsify(self, ag: Stencil) -> Stencil:
        """SparsifyStencil: mask (location net) times values (value net)."""
        if ag.coeffs.size != self.m:
            raise ValueError(f"stencil has {ag.coeffs.size} entries, model expects {self.m}")
        return Stencil(self.sparsify_vector(ag.vec()).reshape(ag.shape))

    def to_dict(self):
        return {
            "level": self.level,
            "k": self.k,
            "d_model": self.F.d_model,
            "n_h": self.F.n_heads,
            "norm_mode": self.norm_mode,
            "seed": self.seed,
            "block_split": list(self.block_split) if self.block_split else None,
            "k_blocks": list(self.k_blocks) if self.k_blocks else None,
            "F": self.F.to_dict(),
            "G": self.G.to_dict(),
            "train_meta": self.train_meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(
            level=d["level"],
            k=d["k"],
            F=AttentionParams.from_dict(d["F"]),
            G=AttentionParams.from_dict(d["G"]),
            norm_mode=d.get("norm_mode", "unit_max"),
            seed=d.get("seed"),
            block_split=tuple(d["block_split"]) if d.get("block_split") else None,
            k_blocks=tuple(d["k_blocks"]) if d.get("k_blocks") else None,
            train_meta=d.get("train_meta", {}),
        )

    @classmethod
    def from_json(cls, s: str):
        return cls.from_dict(json.loads(s))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def location_probs(model: SparsifierModel, v_g: np.ndarray) -> np.ndarray:
    """softmax(F(v_g normalized)): retention probability per stencil entry."""
    vn, _ = model._normalize(np.asarray(v_g, dtype=np.float64).ravel())
    return _softmax(attention_forward(model.F, vn))


def sparsify_stencil(model: SparsifierModel, ag: Stencil) -> Stencil:
    return model.sparsify(ag)


# ---- training ----


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    warmup_frac is the fraction of epochs trained with an all-ones mask
    before top-k selection starts.  Under the straight-through product rule
    a masked-out entry's value receives no gradient, so with a cold start the
    location network would rank entries by their random initial values and
    the mask locks in; the warm-up lets the value network learn all entries
    first.  Best-epoch tracking only considers the top-k phase.
    """

    epochs: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    s: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.15
    final_frac: float = 0.25
    align_weight: float = 0.05
    search_budget: int = 20000

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")
        if not 0.0 < self.final_frac <= 1.0 - self.warmup_frac:
            raise ValueError("warmup_frac + final_frac must fit inside the epoch budget")


@dataclass
class TrainSet:
    """Per-level training data across sampled PDE parameters.

    For instance i, inputs[i] is the vectorized Galerkin stencil (length m),
    bases[i][j] the (m, N) action basis of test vector j (row e = action of a
    unit coefficient at entry e), and targets[i][j] the Galerkin action on
    that vector.  screens optionally holds per-instance callables mapping a
    candidate coefficient vector to the spectral-equivalence measure theta
    against that instance's Galerkin operator on the training grid.
    """

    level: int
    m: int
    inputs: list
    bases: list
    targets: list
    betas: list = field(default_factory=list)
    block_split: tuple | None = None
    screens: list | None = None

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("training set is empty")
        if any(v.size != self.m for v in self.inputs):
            raise ValueError("all stencils in a training set must have the same shape")


def _shifted(v: np.ndarray, di: int, dj: int) -> np.ndarray:
    """v shifted by (di, dj) with zero fill: out[i,j] = v[i+di, j+dj]."""
    out = np.zeros_like(v)
    n0, n1 = v.shape
    i0, i1 = max(0, -di), min(n0, n0 - di)
    j0, j1 = max(0, -dj), min(n1, n1 - dj)
    out[i0:i1, j0:j1] = v[i0 + di : i1 + di, j0 + dj : j1 + dj]
    return out


def conv_basis(shape: tuple, v: np.ndarray) -> np.ndarray:
    """(m, N) basis of a stencil of the given shape acting on grid vector v."""
    p, q = shape[0] // 2, shape[1] // 2
    rows = []
    for s in range(shape[0]):
        for t in range(shape[1]):
            rows.append(_shifted(v, s - p, t - q).ravel())
    return np.asarray(rows)


def spectral_norm_est(M: np.ndarray, iters: int = 50) -> float:
    """Largest singular value by power iteration on M^T M, fixed start."""
    v = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
    s = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        s = nw
    return float(np.sqrt(s))


def _theta_screen(ag_st: Stencil, n_coarse: int):
    """Per-instance theta(candidate) callable on the training grid."""
    from . import stencil as stmod

    Ag = stmod.assemble(ag_st, n_coarse, n_coarse)
    AgInv = np.linalg.inv(Ag)
    I = np.eye(Ag.shape[0])
    shape = ag_st.shape

    def screen(coeffs: np.ndarray) -> float:
        Ac = stmod.assemble(Stencil(coeffs.reshape(shape)), n_coarse, n_coarse)
        return spectral_norm_est(I - Ac @ AgInv)

    return screen


def build_scalar_train_set(stencils, n_coarse: int, s: int, level: int = 2, betas=None) -> TrainSet:
    """Training data for 3x3 coarse stencils: smooth vectors and their actions.

    The per-vector bases of one instance are concatenated into a single
    (m, s*N) matrix; the summed squared norms are identical and the training
    loop then does one basis application per instance and epoch.
    """
    from .specvec import training_vectors

    inputs, bases, targets, screens = [], [], [], []
    for st in stencils:
        pairs = training_vectors(st, n_coarse, s)
        B = np.hstack([conv_basis(st.shape, p.vector) for p in pairs])
        inputs.append(st.vec())
        bases.append([B])
        targets.append([B.T @ st.vec()])
        screens.append(_theta_screen(st, n_coarse))
    return TrainSet(level, inputs[0].size, inputs, bases, targets, betas or [], screens=screens)


def loss(model: SparsifierModel, stencils, vector_sets) -> float:
    """(1/N_t) sum_i sum_j || A_g v_j - A_c v_j ||^2 with hard-masked A_c."""
    from .stencil import apply

    total = 0.0
    for st, pairs in zip(stencils, vector_sets):
        ac = model.sparsify(st)
        for p in pairs:
            v = p.vector if hasattr(p, "vector") else p
            d = apply(st, v) - apply(ac, v)
            total += float(np.sum(d * d))
    return total / len(stencils)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1.0 - self.b1) * (g - m)
            v += (1.0 - self.b2) * (g * g - v)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def _mask_blocks(probs: np.ndarray, k, block_split) -> np.ndarray:
    if block_split is None:
        return topk_mask(probs, k)
    mask = np.zeros(probs.size, dtype=bool)
    lo = 0
    for size, kb in zip(block_split, k):
        mask[lo : lo + size] = topk_mask(probs[lo : lo + size], kb)
        lo += size
    return mask


def _loss_tensor(ft, gt, n_heads: int, ts: TrainSet, k, frozen=None, full_mask=False, fixed_mask=None):
    """Training-path loss (Eq.-style data term only).

    The top-k selection enters through a straight-through term grouped around
    the soft product, M*V + (P*V - sg(P*V)): the forward value is exactly the
    hard-masked stencil while gradients flow through the probability path for
    every entry, so masked-out values keep learning.  ``full_mask`` keeps all
    entries active (warm-up); ``fixed_mask`` pins the mask (guided phase).
    With ``frozen=(masks, anchors)`` the detached product becomes a fixed
    constant so grad_check can probe the smooth branch the gradient lives on.

    Returns (loss, masks, anchors, prob_tensors).
    """
    total = None
    masks, anchors, probs = [], [], []
    for i, v_g in enumerate(ts.inputs):
        scale = float(np.abs(v_g).max()) or 1.0
        vn = v_g / scale
        m = v_g.size
        p_t = attention_tensor(ft, n_heads, vn).reshape(1, m).softmax_rows()
        v_t = attention_tensor(gt, n_heads, vn).reshape(1, m) * scale
        probs.append(p_t)
        soft = p_t * v_t
        if frozen is None:
            if full_mask:
                mask = np.ones(m, dtype=bool)
            elif fixed_mask is not None:
                mask = fixed_mask
            else:
                mask = _mask_blocks(p_t.data.ravel(), k, ts.block_split)
            anchor = soft.detach()
        else:
            mask = frozen[0][i]
            anchor = Tensor(frozen[1][i])
        masks.append(mask)
        anchors.append(soft.data.copy())
        coeffs = Tensor(mask.astype(np.float64).reshape(1, m)) * v_t + (soft - anchor)
        for basis, target in zip(ts.bases[i], ts.targets[i]):
            d = basis_action(coeffs, basis) - Tensor(target)
            term = (d * d).sum()
            total = term if total is None else total + term
    return total / len(ts.inputs), masks, anchors, probs


def _block_ranges(m: int, k, block_split):
    if block_split is None:
        return [(0, m, int(k))]
    out = []
    lo = 0
    for size, kb in zip(block_split, k):
        out.append((lo, lo + size, int(kb)))
        lo += size
    return out


def support_search(ts: TrainSet, k, budget: int = 20000, seed: int = 0, theta_cap: float = 0.95):
    """Best retained-entry support by least-squares refit scoring with a
    spectral-equivalence screen.

    For each candidate support the coefficients are refit per instance (the
    value network can realize any per-instance values), so the fit score is
    the true attainable data loss.  A small fit on smooth vectors does not by
    itself control the rest of the spectrum, so candidates are additionally
    screened by theta = ||I - A_c A_g^{-1}||_2 on the training grid; among
    candidates with max-over-instances theta below the cap the best fit wins,
    otherwise the smallest theta.  Exhaustive when the candidate count fits
    the budget, else a seeded random sample.  Gradient descent through the
    straight-through mask cannot make coordinated support swaps (redundant
    entry groups trap it), which is why the support is searched explicitly.

    Returns (support mask, info dict with the winner's fit and theta).
    """
    import itertools

    grams = []
    for i in range(len(ts.inputs)):
        A = np.vstack([b.T for b in ts.bases[i]])
        b = np.concatenate(ts.targets[i])
        grams.append((A.T @ A, A.T @ b, float(b @ b)))

    def refit(sup):
        idx = np.flatnonzero(sup)
        tot = 0.0
        coeff_vecs = []
        for G, g, bb in grams:
            Gs = G[np.ix_(idx, idx)]
            gs = g[idx]
            c, *_ = np.linalg.lstsq(Gs, gs, rcond=None)
            tot += max(bb - float(gs @ c), 0.0)
            full = np.zeros(ts.m)
            full[idx] = c
            coeff_vecs.append(full)
        return tot, coeff_vecs

    ranges = _block_ranges(ts.m, k, ts.block_split)
    counts = [len(list(itertools.combinations(range(hi - lo), kb))) for lo, hi, kb in ranges]
    n_cand = int(np.prod(counts))
    cands = []
    if n_cand <= budget:
        per_block = [
            [np.array(c, dtype=int) for c in itertools.combinations(range(lo, hi), kb)]
            for lo, hi, kb in ranges
        ]
        for combo in itertools.product(*per_block):
            sup = np.zeros(ts.m, dtype=bool)
            for blockidx in combo:
                sup[blockidx] = True
            cands.append(sup)
    else:
        rng = np.random.default_rng(seed)
        for _ in range(budget):
            sup = np.zeros(ts.m, dtype=bool)
            for lo, hi, kb in ranges:
                sup[rng.choice(np.arange(lo, hi), size=kb, replace=False)] = True
            cands.append(sup)

    best_ok = None  # (fit, idx, theta) among theta-feasible
    best_any = None  # (theta, idx, fit) fallback
    for i, sup in enumerate(cands):
        fit, coeffs = refit(sup)
        if ts.screens is not None:
            th = max(sc(c) for sc, c in zip(ts.screens, coeffs))
        else:
            th = 0.0
        if th <= theta_cap and (best_ok is None or fit < best_ok[0]):
            best_ok = (fit, i, th)
        if best_any is None or th < best_any[0]:
            best_any = (th, i, fit)
    if best_ok is not None:
        fit, i, th = best_ok
    else:
        th, i, fit = best_any
    return cands[i], {"fit": fit, "theta": th, "feasible": best_ok is not None}


def train_level(train_set: TrainSet, k, cfg: TrainConfig, loss_out: list | None = None) -> SparsifierModel:
    """Train location and value networks for one level; keeps the best epoch.

    k is the retained-entry count, or a tuple of per-block counts when the
    training set carries a block split.  Three phases share one optimizer:
    a warm-up with every entry active (the value network learns all
    coefficients), a guided phase whose mask is pinned to the support found
    by :func:`support_search` while a cross-entropy term teaches the location
    network to rank that support on top, and a final phase running the plain
    sparsify -> loss -> gradient -> step loop with the mask taken from the
    location probabilities.  Best-epoch tracking uses the final phase only,
    so the returned parameters are measured exactly as inference applies them.
    """
    rng = np.random.default_rng(cfg.seed)
    m = train_set.m
    F = init_attention(m, rng)
    G = init_attention(m, rng)
    ft = params_to_tensors(F)
    gt = params_to_tensors(G)
    params = tensor_list(ft) + tensor_list(gt)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    warm = int(cfg.epochs * cfg.warmup_frac)
    final_start = cfg.epochs - max(1, int(cfg.epochs * cfg.final_frac))
    final_start = max(final_start, warm)
    target, search_info = support_search(train_set, k, cfg.search_budget, cfg.seed)
    sel = Tensor(target.astype(np.float64).reshape(1, m))
    lam = None
    best = (np.inf, _snapshot(ft), _snapshot(gt), -1)
    for epoch in range(cfg.epochs):
        guided = warm <= epoch < final_start
        opt.zero_grad()
        total, masks, _, probs = _loss_tensor(
            ft,
            gt,
            F.n_heads,
            train_set,
            k,
            full_mask=epoch < warm,
            fixed_mask=target if guided else None,
        )
        val = float(total.data)
        if not np.isfinite(val):
            raise NumericalError(
                f"non-finite training loss at epoch {epoch} "
                f"(lr={cfg.learning_rate}, seed={cfg.seed})"
            )
        if loss_out is not None:
            loss_out.append(val)
        # a snapshot counts only when the measured mask is what inference
        # would use, i.e. the location network's own top-k
        if epoch >= warm and val < best[0]:
            consistent = all(
                np.array_equal(mk, _mask_blocks(p.data.ravel(), k, train_set.block_split))
                for mk, p in zip(masks, probs)
            )
            if consistent:
                best = (val, _snapshot(ft), _snapshot(gt), epoch)
        objective = total
        if epoch < final_start:
            align = None
            for p_t in probs:
                ce = -(sel * p_t.log()).sum()
                align = ce if align is None else align + ce
            if guided and lam is None:
                lam = cfg.align_weight * (abs(val) + 1e-12) / (abs(float(align.data)) + 1e-12)
            objective = total + align * (lam if lam is not None else cfg.align_weight)
        objective.backward()
        opt.step()
    _restore(ft, best[1])
    _restore(gt, best[2])
    k_blocks = tuple(k) if isinstance(k, (tuple, list)) else None
    k_total = int(sum(k)) if k_blocks else int(k)
    model = SparsifierModel(
        level=train_set.level,
        k=k_total,
        F=_to_params(ft, F),
        G=_to_params(gt, G),
        seed=cfg.seed,
        block_split=train_set.block_split,
        k_blocks=k_blocks,
        train_meta={
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "s": cfg.s,
            "best_epoch": best[3],
            "best_loss": best[0],
            "n_instances": len(train_set.inputs),
            "support_fit": search_info["fit"],
            "support_theta": search_info["theta"],
            "support_feasible": search_info["feasible"],
        },
    )
    return model


def _snapshot(t: dict):
    return {kk: v.data.copy() for kk, v in t.items()}


def _restore(t: dict, snap: dict):
    for kk in t:
        t[kk].data = snap[kk].copy()


def _to_params(t: dict, template: AttentionParams) -> AttentionParams:
    n = template.n_heads
    return AttentionParams(
        [t[f"wq{i}"].data.copy() for i in range(n)],
        [t[f"wk{i}"].data.copy() for i in range(n)],
        [t[f"wv{i}"].data.copy() for i in range(n)],
        t["wo"].data.copy(),
        t["e_val"].data.copy(),
        t["e_pos"].data.copy(),
    )


def grad_check(
    model: SparsifierModel,
    train_set: TrainSet,
    direction: dict | None = None,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Relative error between reverse-mode and central-difference directional
    derivatives of the full training loss.

    The top-k mask is frozen at the base point so the finite differences probe
    the smooth branch the gradient lives on.
    """
    k = model.k_blocks if model.k_blocks else model.k
    ft = params_to_tensors(model.F)
    gt = params_to_tensors(model.G)
    names = [("F", kk) for kk in sorted(ft)] + [("G", kk) for kk in sorted(gt)]
    tensors = {("F", kk): v for kk, v in ft.items()} | {("G", kk): v for kk, v in gt.items()}
    if direction is None:
        rng = np.random.default_rng(seed)
        direction = {nm: rng.standard_normal(tensors[nm].data.shape) for nm in names}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
        direction = {nm: d / norm for nm, d in direction.items()}

    total, masks, anchors, _ = _loss_tensor(ft, gt, model.F.n_heads, train_set, k)
    total.backward()
    grad_dot = sum(float(np.sum(tensors[nm].grad * direction[nm])) for nm in names)

    def value_at(eps):
        for nm in names:
            tensors[nm].data = tensors[nm].data + eps * direction[nm]
        val, _, _, _ = _loss_tensor(ft, gt, model.F.n_heads, train_set, k, frozen=(masks, anchors))
        out = float(val.data)
        for nm in names:
            tensors[nm].data = tensors[nm].data - eps * direction[nm]
        return out

    fd = (value_at(h) - value_at(-h)) / (2.0 * h)
    denom = max(abs(grad_dot), abs(fd), 1e-300)
    return abs(grad_dot - fd) / denom
