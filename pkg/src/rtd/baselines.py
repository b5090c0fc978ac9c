"""Matrix robust-PCA baselines (per-slice and flattened) and the whitening
preprocessing that orthogonalizes non-orthogonal low-rank components."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .decompose import Decomposition, IterationRecord, RtdConfig, ncralgo
from .tensors import FactorModel, SymTensor3, flatten, tensor_slice, unflatten

__all__ = [
    "MatrixRpcaConfig",
    "MatrixRpcaResult",
    "TensorSplitResult",
    "WhitenResult",
    "truncated_svd",
    "matrix_rpca",
    "rpca_slices",
    "rpca_flatten",
    "whiten",
    "unwhiten_model",
    "whiten_decompose",
    "slice_moment_estimate",
]


@dataclass(frozen=True)
class MatrixRpcaConfig:
    """Matrix analogue of the tensor configuration; beta="auto" resolves to
    4 mu^2 r / sqrt(n1 n2), and the practical threshold divides by the same
    geometric-mean dimension.  The theoretical schedule is the default: its
    geometric floor keeps the threshold above the truncated-SVD noise, which
    the bare practical rule does not guarantee."""

    rank: int
    delta: float = 1e-3
    beta: float | str = "auto"
    threshold_mode: str = "theoretical"
    mu: float = 1.0
    max_iters_per_stage: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if isinstance(self.beta, str) and self.beta != "auto":
            raise ValueError("beta must be a positive number or 'auto'")
        if not isinstance(self.beta, str) and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.threshold_mode not in ("theoretical", "practical"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    def resolved_beta(self, n1: int, n2: int) -> float:
        if self.beta == "auto":
            return 4.0 * self.mu ** 2 * self.rank / math.sqrt(n1 * n2)
        return float(self.beta)


@dataclass(frozen=True)
class MatrixRpcaResult:
    L: np.ndarray
    S: np.ndarray
    trace: list[IterationRecord]
    converged: bool
    stages_run: int


@dataclass(frozen=True)
class TensorSplitResult:
    """Low-rank/sparse split of a tensor obtained slice-wise or via flattening."""

    L: np.ndarray
    S: np.ndarray
    trace: list[IterationRecord] = field(default_factory=list)
    converged: bool = True


def truncated_svd(M: np.ndarray, k: int, rng=None, tol: float = 1e-10,
                  max_iters: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k singular triplets by randomized subspace iteration.

    Iterates until the top-k singular values move by less than ``tol``
    relative to the largest one.  Deterministic for a given ``rng`` seed.
    """
    M = np.asarray(M, dtype=np.float64)
    n1, n2 = M.shape
    if k > min(n1, n2):
        raise ValueError(f"k={k} exceeds min(dims)={min(n1, n2)}")
    if k == 0:
        return np.zeros((n1, 0)), np.zeros(0), np.zeros((n2, 0))
    if rng is None:
        rng = np.random.default_rng(0)
    p = min(min(n1, n2), k + 8)
    Q, _ = np.linalg.qr(M @ rng.standard_normal((n2, p)))
    prev = None
    for _ in range(max_iters):
        Z, _ = np.linalg.qr(M.T @ Q)
        Q, _ = np.linalg.qr(M @ Z)
        B = Q.T @ M
        Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
        top = s[:k]
        if prev is not None and np.max(np.abs(top - prev)) <= tol * max(s[0], 1e-300):
            prev = top
            break
        prev = top
    U = Q @ Ub[:, :k]
    V = Vt[:k].T
    return U, prev.copy(), V


def _matrix_ht(M: np.ndarray, zeta: float) -> np.ndarray:
    if zeta <= 0:
        return np.zeros_like(M)
    return np.where(np.abs(M) >= zeta, M, 0.0)


def matrix_rpca(M: np.ndarray, cfg: MatrixRpcaConfig) -> MatrixRpcaResult:
    """Non-convex matrix robust PCA: alternating truncated SVD and hard
    thresholding with the same staged threshold schedule as the tensor loop."""
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("input matrix must be finite")
    n1, n2 = M.shape
    r = cfg.rank
    if r > min(n1, n2):
        raise ValueError("rank exceeds matrix dimensions")
    beta = cfg.resolved_beta(n1, n2)
    dim_scale = math.sqrt(n1 * n2)
    rng = np.random.default_rng(cfg.seed)
    records: list[IterationRecord] = []

    try:
        _, s1, _ = truncated_svd(M, 1, rng)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"SVD failed on input matrix: {exc}") from exc
    # Sub-rounding thresholds would sweep up arithmetic dust.
    zeta_floor = 1e-12 * float(np.max(np.abs(M))) if M.size else 0.0
    S = _matrix_ht(M, beta * float(s1[0])) if s1.size and s1[0] > 0 else np.zeros_like(M)
    L = np.zeros_like(M)
    converged = False
    stages_run = 0
    for stage in range(1, r + 1):
        stages_run = stage
        k = min(stage + 1, min(n1, n2))
        if cfg.max_iters_per_stage is not None:
            tau = max(1, cfg.max_iters_per_stage)
        else:
            _, s0, _ = truncated_svd(M - S, 1, rng)
            scale = max(n1, n2) * beta * float(s0[0])
            tau = max(1, math.ceil(10.0 * math.log(scale / cfg.delta))) if scale > 0 else 1
        for t in range(tau):
            tic = time.perf_counter()
            A = M - S
            try:
                U, s, V = truncated_svd(A, k, rng)
            except np.linalg.LinAlgError as exc:
                raise RuntimeError(f"SVD failed at stage {stage}, iteration {t}: {exc}") from exc
            L = (U[:, :stage] * s[:stage]) @ V[:, :stage].T
            sigma_l = float(s[stage - 1])
            sigma_l1 = float(s[stage]) if k > stage else 0.0
            if cfg.threshold_mode == "theoretical":
                zeta = beta * (sigma_l1 + 2.0 ** (-t) * sigma_l)
            else:
                zeta = cfg.mu * sigma_l1 / dim_scale
            if zeta > 0:
                zeta = max(zeta, zeta_floor)
            S = _matrix_ht(M - L, zeta)
            leftover = M - L - S
            records.append(IterationRecord(
                stage=stage, t=t, zeta=float(zeta), sigma_l=sigma_l, sigma_l1=sigma_l1,
                eigenvalues=tuple(float(x) for x in s),
                residual_inf=float(np.max(np.abs(leftover))),
                residual_fro=float(np.linalg.norm(leftover)),
                s_nnz=int(np.count_nonzero(S)),
                seconds=time.perf_counter() - tic,
            ))
        _, s_end, _ = truncated_svd(M - S, min(stage + 1, min(n1, n2)), rng)
        sigma_next = float(s_end[stage]) if s_end.size > stage else 0.0
        if beta * sigma_next < cfg.delta / (2.0 * dim_scale):
            converged = True
            break
    return MatrixRpcaResult(L=L, S=S, trace=records, converged=converged,
                            stages_run=stages_run)


def rpca_slices(T: SymTensor3, cfg: MatrixRpcaConfig) -> TensorSplitResult:
    """Matrix RPCA applied to every mode-3 slice independently, stacked back."""
    n = T.n
    L = np.zeros((n, n, n))
    S = np.zeros((n, n, n))
    trace: list[IterationRecord] = []
    converged = True
    for i in range(n):
        try:
            res = matrix_rpca(tensor_slice(T, 3, i), cfg)
        except Exception as exc:
            raise RuntimeError(f"slice {i}: {exc}") from exc
        L[:, :, i] = res.L
        S[:, :, i] = res.S
        trace.extend(res.trace)
        converged &= res.converged
    return TensorSplitResult(L=L, S=S, trace=trace, converged=converged)


def rpca_flatten(T: SymTensor3, mode: int, cfg: MatrixRpcaConfig) -> TensorSplitResult:
    """Matrix RPCA on the mode-k flattening, with both parts unflattened."""
    res = matrix_rpca(flatten(T, mode), cfg)
    L = unflatten(res.L, mode).data
    S = unflatten(res.S, mode).data
    return TensorSplitResult(L=L, S=S, trace=res.trace, converged=res.converged)


def whiten(T: SymTensor3, M2: np.ndarray, k: int) -> tuple[SymTensor3, np.ndarray]:
    """Whitening map from a PSD second-moment matrix.

    W = U_k D_k^{-1/2} from the top-k eigendecomposition of M2; returns
    (T(W, W, W), W).  Raises if M2 has numerical rank below k.
    """
    M2 = np.asarray(M2, dtype=np.float64)
    n = T.n
    if M2.shape != (n, n):
        raise ValueError("second-moment matrix has wrong shape")
    if np.max(np.abs(M2 - M2.T)) > 1e-10 * max(1.0, np.max(np.abs(M2))):
        raise ValueError("second-moment matrix must be symmetric")
    vals, vecs = np.linalg.eigh(M2)
    order = np.argsort(-vals, kind="stable")[:k]  # stable: ties keep eigh's order
    top = vals[order]
    if top.size < k or top[-1] <= 1e-12:
        raise ValueError(f"rank of M2 is below k={k}")
    W = vecs[:, order] / np.sqrt(top)
    X = np.tensordot(T.data, W, axes=([0], [0]))      # (n, n, k)
    X = np.tensordot(X, W, axes=([0], [0]))           # (n, k, k)
    X = np.tensordot(X, W, axes=([0], [0]))           # (k, k, k)
    return SymTensor3._wrap(np.ascontiguousarray(X)), W


def unwhiten_model(model: FactorModel, W: np.ndarray) -> FactorModel:
    """Map eigenpairs recovered in whitened coordinates back to the original
    space via the pseudo-inverse transpose of W."""
    B = np.linalg.pinv(W).T
    lambdas = []
    vectors = []
    for lam, v in model.pairs:
        b = B @ v
        norm = float(np.linalg.norm(b))
        if norm <= 0:
            continue
        lambdas.append(lam * norm ** 3)
        vectors.append(b / norm)
    if not lambdas:
        return FactorModel.empty(B.shape[0])
    return FactorModel(B.shape[0], np.array(lambdas), np.stack(vectors, axis=1))


@dataclass(frozen=True)
class WhitenResult:
    model: FactorModel
    whitened: Decomposition
    W: np.ndarray


def whiten_decompose(T: SymTensor3, M2: np.ndarray, k: int, cfg: RtdConfig) -> WhitenResult:
    """Whiten, decompose the small k x k x k tensor, and back-transform the
    recovered components (the T-RPCA-W pipeline)."""
    Tw, W = whiten(T, M2, k)
    dec = ncralgo(Tw, cfg)
    return WhitenResult(model=unwhiten_model(dec.L_hat, W), whitened=dec, W=W)


def slice_moment_estimate(T: SymTensor3, cfg: MatrixRpcaConfig, rng) -> np.ndarray:
    """Second-moment estimate for whitening from one random slice: run matrix
    RPCA on it and project the recovered low-rank part to the PSD cone."""
    i = int(rng.integers(T.n))
    res = matrix_rpca(tensor_slice(T, 3, i), cfg)
    sym = 0.5 * (res.L + res.L.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T
