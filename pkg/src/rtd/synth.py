"""Ground-truth generators: incoherent orthogonal low-rank tensors plus
entrywise or block-structured sparse corruptions."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .tensors import FactorModel, SparseTensor3, SymTensor3

__all__ = [
    "SynthSpec",
    "Instance",
    "gen_low_rank",
    "measured_incoherence",
    "gen_sparse_entrywise",
    "gen_sparse_block",
    "measured_eta",
    "orbit_symmetrize",
    "gen_instance",
]


@dataclass(frozen=True)
class SynthSpec:
    """Instance recipe.

    ``d`` is the per-fiber sparsity budget (expected support per block
    vector in the block model, Bernoulli rate d/n either way), ``B`` the
    number of blocks.  ``mu_target`` is an upper bound on the measured
    incoherence, enforced by redrawing factors (up to 50 attempts);
    ``zero_row_frac`` zeroes a random row subset before re-orthonormalizing,
    which pushes incoherence up for coherence sweeps.  ``factor_mode``
    "gaussian" draws N(0,1) factors; "low_coherence" draws random sign
    vectors, whose orthonormalization stays near the incoherence floor
    mu ~= 1 (Gaussian factors cannot reach that at desk-scale n).
    """

    n: int
    r: int
    sparsity_model: str = "block"
    d: int = 0
    B: int = 0
    mu_target: float | None = None
    orthonormalize: bool = True
    seed: int = 0
    lambdas: tuple[float, ...] | None = None
    symmetrize: bool = False
    rademacher: bool = False
    zero_row_frac: float = 0.0
    factor_mode: str = "gaussian"

    def __post_init__(self):
        if not 1 <= self.r <= self.n:
            raise ValueError("need 1 <= r <= n")
        if not 0 <= self.d <= self.n:
            raise ValueError("need 0 <= d <= n")
        if self.B < 0:
            raise ValueError("need B >= 0")
        if self.sparsity_model not in ("entrywise", "block"):
            raise ValueError(f"unknown sparsity_model {self.sparsity_model!r}")
        if self.factor_mode not in ("gaussian", "low_coherence"):
            raise ValueError(f"unknown factor_mode {self.factor_mode!r}")
        if self.lambdas is not None and len(self.lambdas) != self.r:
            raise ValueError("lambdas must have one entry per component")
        if not 0.0 <= self.zero_row_frac < 1.0:
            raise ValueError("zero_row_frac must be in [0, 1)")

    def value_range(self) -> tuple[float, float]:
        hi = self.r / self.n ** 1.5
        return 0.5 * hi, hi


@dataclass(frozen=True)
class Instance:
    """A generated problem: ground truth plus the observed tensor."""

    spec: SynthSpec
    model: FactorModel
    low_rank: SymTensor3
    sparse: SparseTensor3
    psis: list[np.ndarray] = field(default_factory=list)

    @property
    def tensor(self) -> SymTensor3:
        arr = self.low_rank.data + self.sparse.densify()
        if not self.sparse.symmetric and self.sparse.nnz:
            raise ValueError("observed tensor is asymmetric; generate with symmetrize=True")
        return SymTensor3._wrap(arr)

    def dense_observation(self) -> np.ndarray:
        """L* + S* as a raw array, valid even for asymmetric corruptions."""
        return self.low_rank.data + self.sparse.densify()

    def meta(self) -> dict:
        out = {
            "n": self.spec.n,
            "r": self.spec.r,
            "sparsity_model": self.spec.sparsity_model,
            "d": self.spec.d,
            "B": self.spec.B,
            "seed": self.spec.seed,
            "symmetrize": self.spec.symmetrize,
            "measured_mu": measured_incoherence(self.model),
            "nnz": self.sparse.nnz,
        }
        if self.psis:
            out["measured_eta"] = measured_eta(self.psis)
            out["realized_d_max"] = max(int(p.sum()) for p in self.psis)
        return out


def measured_incoherence(F: FactorModel) -> float:
    """max_i sqrt(n) * ||u_i||_inf; equals 1 for perfectly spread vectors."""
    if F.rank == 0:
        raise ValueError("empty factor model")
    return float(np.sqrt(F.n) * np.max(np.abs(F.vectors)))


def _draw_factors(spec: SynthSpec, rng) -> np.ndarray:
    n, r = spec.n, spec.r
    if spec.factor_mode == "gaussian":
        U = rng.standard_normal((n, r))
    else:
        U = rng.choice(np.array([-1.0, 1.0]), size=(n, r)) / np.sqrt(n)
    if spec.zero_row_frac > 0.0:
        k = int(round(spec.zero_row_frac * n))
        k = min(k, n - r)  # keep enough live rows for full column rank
        if k > 0:
            rows = rng.choice(n, size=k, replace=False)
            U[rows, :] = 0.0
    return U


def gen_low_rank(spec: SynthSpec, rng) -> tuple[FactorModel, SymTensor3]:
    """Draw factors, orthonormalize if requested, and enforce mu_target.

    Redraws up to 50 times until the measured incoherence is at or below
    mu_target; raises naming the best achieved value otherwise.
    """
    if spec.mu_target is not None and spec.mu_target < 1.0:
        raise ValueError(f"mu_target {spec.mu_target} is infeasible: incoherence is always >= 1")
    lambdas = np.ones(spec.r) if spec.lambdas is None else np.asarray(spec.lambdas, dtype=float)
    best_mu = np.inf
    for _ in range(50):
        U = _draw_factors(spec, rng)
        if spec.orthonormalize:
            Q, R = np.linalg.qr(U)
            diag = np.diag(R)
            if np.any(np.abs(diag) < 1e-12):
                continue
            signs = np.where(diag < 0, -1.0, 1.0)
            U = Q * signs
        else:
            norms = np.linalg.norm(U, axis=0)
            if np.any(norms < 1e-12):
                continue
            U = U / norms
        model = FactorModel(spec.n, lambdas, U)
        mu = measured_incoherence(model)
        best_mu = min(best_mu, mu)
        if spec.mu_target is None or mu <= spec.mu_target:
            return model, model.materialize()
    raise ValueError(
        f"mu_target {spec.mu_target} not reached in 50 attempts (best achieved {best_mu:.3f})"
    )


def _draw_values(spec: SynthSpec, count: int, rng) -> np.ndarray:
    lo, hi = spec.value_range()
    vals = rng.uniform(lo, hi, size=count)
    if spec.rademacher:
        vals *= rng.choice(np.array([-1.0, 1.0]), size=count)
    return vals


def gen_sparse_entrywise(spec: SynthSpec, rng) -> SparseTensor3:
    """I.i.d. Bernoulli(d/n) support with uniform values in [r/(2n^1.5), r/n^1.5].

    Not symmetrized unless the spec asks for it (the raw protocol leaves the
    support asymmetric).
    """
    n = spec.n
    p = spec.d / n
    mask = rng.random((n, n, n)) < p
    count = int(mask.sum())
    values = _draw_values(spec, count, rng)
    indices = np.argwhere(mask)
    S = SparseTensor3(n, indices, values, symmetric=False, check=False)
    if spec.symmetrize:
        S = orbit_symmetrize(S)
    return S


def gen_sparse_block(spec: SynthSpec, rng) -> tuple[SparseTensor3, list[np.ndarray]]:
    """Union of B support cubes supp(psi_b)^3 with i.i.d. values per occupied cell.

    Each psi_b has Bernoulli(d/n) 0/1 entries; all-zero draws are retried up
    to 100 times and then accepted as empty blocks.  Returns the psi vectors
    for overlap diagnostics.
    """
    if spec.B < 1:
        raise ValueError("block model needs B >= 1")
    n = spec.n
    p = spec.d / n
    psis: list[np.ndarray] = []
    mask = np.zeros((n, n, n), dtype=bool)
    for _ in range(spec.B):
        psi = np.zeros(n, dtype=np.int64)
        for _ in range(100):
            psi = (rng.random(n) < p).astype(np.int64)
            if psi.any():
                break
        psis.append(psi)
        sup = np.flatnonzero(psi)
        if sup.size:
            mask[np.ix_(sup, sup, sup)] = True
    count = int(mask.sum())
    values = _draw_values(spec, count, rng)
    indices = np.argwhere(mask)
    S = SparseTensor3(n, indices, values, symmetric=False, check=False)
    if spec.symmetrize:
        S = orbit_symmetrize(S)
    return S, psis


def measured_eta(psis: list[np.ndarray]) -> float:
    """max_{i != j} <psi_i, psi_j> / d with d the largest support size."""
    if len(psis) < 2:
        return 0.0
    d = max(int(p.sum()) for p in psis)
    if d == 0:
        return 0.0
    best = 0
    for i in range(len(psis)):
        for j in range(i + 1, len(psis)):
            best = max(best, int(psis[i] @ psis[j]))
    return best / d


def orbit_symmetrize(S: SparseTensor3) -> SparseTensor3:
    """Close the support under index permutation, sharing one value per orbit.

    The orbit value comes from the lexicographically smallest stored entry,
    so the result is deterministic.
    """
    if S.nnz == 0:
        return SparseTensor3.empty(S.n, symmetric=True)
    n = S.n
    tri = np.sort(S.indices, axis=1)
    canon = tri[:, 0] * n * n + tri[:, 1] * n + tri[:, 2]
    _, first = np.unique(canon, return_index=True)
    rep_tri = tri[first]
    rep_val = S.values[first]
    all_idx = np.concatenate([rep_tri[:, list(p)] for p in permutations(range(3))], axis=0)
    all_val = np.tile(rep_val, 6)
    lin = all_idx[:, 0] * n * n + all_idx[:, 1] * n + all_idx[:, 2]
    _, keep = np.unique(lin, return_index=True)  # ascending lin order
    return SparseTensor3(n, all_idx[keep], all_val[keep], symmetric=True, check=False)


def gen_instance(spec: SynthSpec, rng=None) -> Instance:
    """Full instance from one seed: factors, corruption, and metadata."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    model, low_rank = gen_low_rank(spec, rng)
    if spec.sparsity_model == "block":
        sparse, psis = gen_sparse_block(spec, rng)
    else:
        sparse = gen_sparse_entrywise(spec, rng)
        psis = []
    return Instance(spec=spec, model=model, low_rank=low_rank, sparse=sparse, psis=psis)
