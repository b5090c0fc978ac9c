"""Tensor eigensolver: restarted SVD-seeded power iterations with deflation,
followed by fixed-step gradient ascent that converges to exact eigenpairs of
the input tensor (not merely of its unperturbed low-rank part)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .tensors import (
    FactorModel,
    SymTensor3,
    contract_1,
    contract_2,
    contract_3,
    rank1_accumulate,
)

__all__ = [
    "EigConfig",
    "EigenPair",
    "EigResult",
    "PowerResult",
    "svd_init",
    "power_iterate",
    "best_of_restarts",
    "grad_ascent_refine",
    "top_r_eigenpairs",
    "grad_f",
    "hessian_apply",
    "ascent_objective",
]

_DEGENERATE_NORM = 1e-14


@dataclass(frozen=True)
class EigConfig:
    """Knobs for the eigensolver.

    ``n_restarts=None`` resolves to max(20, 4n) capped at 2000; the
    worst-case theory asks for ~n^(1+c) restarts but far fewer suffice in
    practice and everything here is explicitly configurable.
    """

    n_restarts: int | None = None
    n_power_iters: int = 30
    ascent_tol: float = 1e-10
    ascent_max_iters: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n_restarts is not None and self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.n_power_iters < 1:
            raise ValueError("n_power_iters must be >= 1")
        if self.ascent_tol <= 0:
            raise ValueError("ascent_tol must be positive")
        if self.ascent_max_iters < 1:
            raise ValueError("ascent_max_iters must be >= 1")

    def resolved_restarts(self, n: int) -> int:
        if self.n_restarts is not None:
            return self.n_restarts
        return min(2000, max(20, 4 * n))


@dataclass(frozen=True)
class EigenPair:
    """One recovered (lambda, v) with convergence diagnostics.

    ``residual`` is ||T(I, v, v) - lambda * v||_2 measured after the final
    renormalization; ``converged`` means both the ascent step criterion and
    the residual criterion were met.
    """

    lam: float
    v: np.ndarray
    iterations_power: int
    iterations_ascent: int
    residual: float
    converged: bool = True
    degenerate: bool = False


class PowerResult(NamedTuple):
    v: np.ndarray
    lam: float
    degenerate: bool


@dataclass(frozen=True)
class RoundTrace:
    """Per-deflation-round diagnostics: final lambda of every restart."""

    round_index: int
    restart_lambdas: np.ndarray
    chosen: int


@dataclass(frozen=True)
class EigResult:
    pairs: list[EigenPair]
    model: FactorModel
    sigma_next: float
    trace: list[RoundTrace] = field(default_factory=list)


def _khatri_rao_square(V: np.ndarray) -> np.ndarray:
    n, m = V.shape
    return (V[:, None, :] * V[None, :, :]).reshape(n * n, m)


def _top_left_singular_vector(M: np.ndarray) -> np.ndarray:
    U, _, _ = np.linalg.svd(M)
    return U[:, 0]


def _init_from_contraction(T: SymTensor3, M: np.ndarray, rng) -> np.ndarray:
    if np.sqrt(np.sum(M * M)) < _DEGENERATE_NORM:
        v = rng.standard_normal(T.n)
        return v / np.linalg.norm(v)
    u = _top_left_singular_vector(M)
    if contract_3(T, u, u, u) < 0:
        u = -u
    return u


def svd_init(T: SymTensor3, rng) -> np.ndarray:
    """Seed vector: top left singular vector of T(I, I, theta), theta ~ N(0, I).

    The sign is fixed so that T(u, u, u) >= 0.  If the contracted matrix is
    numerically zero the seed falls back to a uniformly random unit vector.
    """
    theta = rng.standard_normal(T.n)
    return _init_from_contraction(T, contract_1(T, theta), rng)


def power_iterate(T: SymTensor3, v0, iters: int) -> PowerResult:
    """Run exactly ``iters`` tensor power updates v <- T(I,v,v)/||T(I,v,v)||.

    Stops early (flagged degenerate) if the update direction collapses
    below norm 1e-14.  Returns the final vector and lambda = T(v, v, v).
    """
    v = np.asarray(v0, dtype=np.float64).copy()
    degenerate = False
    for _ in range(iters):
        w = contract_2(T, v, v)
        norm = np.linalg.norm(w)
        if norm < _DEGENERATE_NORM:
            degenerate = True
            break
        v = w / norm
    return PowerResult(v, contract_3(T, v, v, v), degenerate)


def _power_phase(T: SymTensor3, cfg: EigConfig, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched restarts: seed vectors, then cfg.n_power_iters updates on all
    columns at once (one GEMM per step).  Restart j draws from its own child
    stream, so results do not depend on scheduling."""
    n = T.n
    n1 = cfg.resolved_restarts(n)
    children = rng.spawn(n1)
    thetas = np.empty((n, n1))
    for j, child in enumerate(children):
        thetas[:, j] = child.standard_normal(n)
    mat = T.data.reshape(n, n * n)
    slabs = (T.data.reshape(n * n, n) @ thetas).reshape(n, n, n1)
    V = np.empty((n, n1))
    for j, child in enumerate(children):
        V[:, j] = _init_from_contraction(T, slabs[:, :, j], child)
    degenerate = np.zeros(n1, dtype=bool)
    steps = np.zeros(n1, dtype=np.int64)
    for _ in range(cfg.n_power_iters):
        W = mat @ _khatri_rao_square(V)
        norms = np.linalg.norm(W, axis=0)
        alive = (~degenerate) & (norms >= _DEGENERATE_NORM)
        degenerate |= (~degenerate) & (norms < _DEGENERATE_NORM)
        if not np.any(alive):
            break
        V[:, alive] = W[:, alive] / norms[alive]
        steps[alive] += 1
    lams = np.einsum("im,im->m", V, mat @ _khatri_rao_square(V))
    return V, lams, degenerate, steps


def best_of_restarts(T: SymTensor3, cfg: EigConfig, rng) -> PowerResult:
    """Best of n_restarts seeded power runs; the candidate maximizing
    T(v, v, v) wins, ties broken by lowest restart index."""
    V, lams, degenerate, _ = _power_phase(T, cfg, rng)
    best = int(np.argmax(lams))
    return PowerResult(V[:, best].copy(), float(lams[best]), bool(degenerate[best]))


def grad_f(T: SymTensor3, v, lam: float) -> np.ndarray:
    """Gradient of f(v) = T(v,v,v) - (3/4) lam ||v||^4 at fixed lam:
    3 T(I,v,v) - 3 lam ||v||^2 v."""
    v = np.asarray(v, dtype=np.float64)
    return 3.0 * contract_2(T, v, v) - 3.0 * lam * float(v @ v) * v


def hessian_apply(T: SymTensor3, v, lam: float, w) -> np.ndarray:
    """Apply H = 6 T(I,I,v) - 6 lam v v^T - 3 lam ||v||^2 I to ``w``."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return 6.0 * (contract_1(T, v) @ w) - 6.0 * lam * float(v @ w) * v - 3.0 * lam * float(v @ v) * w


def ascent_objective(T: SymTensor3, v, lam: float) -> float:
    """f(v) = T(v,v,v) - (3/4) lam ||v||^4, the ascent objective at fixed lam."""
    v = np.asarray(v, dtype=np.float64)
    return contract_3(T, v, v, v) - 0.75 * lam * float(v @ v) ** 2


def _finish_pair(T: SymTensor3, v: np.ndarray, iterations_power: int,
                 iterations_ascent: int, converged: bool, degenerate: bool,
                 tol: float) -> EigenPair:
    norm = np.linalg.norm(v)
    if norm < _DEGENERATE_NORM:
        return EigenPair(0.0, v, iterations_power, iterations_ascent, 0.0,
                         converged=False, degenerate=True)
    v = v / norm
    lam = contract_3(T, v, v, v)
    if lam < 0:  # -s u^(x3) = s (-u)^(x3): keep lambda positive by flipping v
        v = -v
        lam = -lam
    residual = float(np.linalg.norm(contract_2(T, v, v) - lam * v))
    ok = converged and residual <= tol * max(1.0, lam)
    return EigenPair(float(lam), v, iterations_power, iterations_ascent,
                     residual, converged=ok, degenerate=degenerate)


def grad_ascent_refine(T: SymTensor3, v0, lambda0: float, cfg: EigConfig,
                       iterations_power: int = 0,
                       keep_history: bool = False) -> EigenPair | tuple[EigenPair, list[np.ndarray]]:
    """Refine a power-phase candidate to an eigenpair of T itself.

    Iterates v <- v + (T(I,v,v) - lambda0 ||v||^2 v) / (4 lambda0 (1 + lambda0/sqrt(n)))
    with lambda0 frozen, without renormalizing, until the step norm drops to
    ascent_tol (and the eigenpair residual check passes) or the iteration
    budget runs out.  The returned pair holds the renormalized vector and a
    lambda recomputed from it.
    """
    if lambda0 <= 0:
        raise ValueError("lambda0 must be positive")
    n = T.n
    v = np.asarray(v0, dtype=np.float64).copy()
    v_init = v.copy()
    step = 1.0 / (4.0 * lambda0 * (1.0 + lambda0 / np.sqrt(n)))
    history = [v.copy()] if keep_history else None
    best_v = v.copy()
    best_f = -np.inf
    iterations = 0
    for _ in range(cfg.ascent_max_iters):
        w = contract_2(T, v, v)
        sq = float(v @ v)
        f_val = float(v @ w) - 0.75 * lambda0 * sq * sq
        if f_val > best_f:
            best_f = f_val
            best_v = v.copy()
        g = w - lambda0 * sq * v
        v_next = v + step * g
        iterations += 1
        # With lambda0 far from any eigenvalue the fixed step escapes the
        # concavity ball and climbs a dominant ray; fall back to the starting
        # point, which is the honest power-phase output.
        if not np.all(np.isfinite(v_next)) or float(v_next @ v_next) > 9.0:
            pair = _finish_pair(T, v_init, iterations_power, iterations, False, False,
                                cfg.ascent_tol)
            return (pair, history) if keep_history else pair
        delta = step * float(np.linalg.norm(g))
        v = v_next
        if history is not None:
            history.append(v.copy())
        if delta <= cfg.ascent_tol:
            pair = _finish_pair(T, v, iterations_power, iterations, True, False, cfg.ascent_tol)
            if pair.converged or pair.degenerate:
                return (pair, history) if keep_history else pair
            # step small but residual above tolerance: keep iterating
    w = contract_2(T, v, v)
    sq = float(v @ v)
    if float(v @ w) - 0.75 * lambda0 * sq * sq < best_f:
        v = best_v
    pair = _finish_pair(T, v, iterations_power, iterations, False, False, cfg.ascent_tol)
    return (pair, history) if keep_history else pair


def _deflate_model(T: SymTensor3, pairs: list[EigenPair]) -> SymTensor3:
    out = T
    for p in pairs:
        if p.lam > 0:
            out = rank1_accumulate(out, -p.lam, p.v)
    return out


def top_r_eigenpairs(T: SymTensor3, l: int, r: int, cfg: EigConfig, rng,
                     refine: bool = True, refine_top: int | None = None,
                     collect_trace: bool = False) -> EigResult:
    """Top-r eigenpairs by r deflation rounds of restarted power iterations,
    candidates then refined against the original (undeflated) tensor.

    Returns all r pairs sorted by descending lambda, a FactorModel of the
    top l, and the (l+1)-th value as the next-eigenvalue estimate (0 when
    l = r).  ``refine_top`` limits refinement to the leading candidates;
    trailing ones keep their power-phase value, which is what a caller
    wanting sigma_{l+1} of the deflated residual needs (refining a candidate
    whose lambda is far below the top would let the fixed-step ascent wander
    onto a rescaled ray of a dominant eigenvector and inflate the estimate).
    Near-duplicate vectors (|<v_i, v_j>| > 0.99) trigger an extra deflation
    round to find a replacement.
    """
    n = T.n
    if not (1 <= l <= r <= n):
        raise ValueError(f"need 1 <= l <= r <= n, got l={l}, r={r}, n={n}")
    refine_budget = r if refine_top is None else min(refine_top, r)

    trace: list[RoundTrace] = []
    candidates: list[tuple[np.ndarray, float, bool, int]] = []
    Tj = T
    for j in range(r):
        V, lams, degenerate, steps = _power_phase(Tj, cfg, rng)
        best = int(np.argmax(lams))
        if collect_trace:
            trace.append(RoundTrace(j, lams.copy(), best))
        v, lam = V[:, best].copy(), float(lams[best])
        candidates.append((v, lam, bool(degenerate[best]), int(steps[best])))
        Tj = rank1_accumulate(Tj, -lam, v)

    scale = max((abs(c[1]) for c in candidates), default=0.0)
    lam_floor = max(1e-300, 1e-10 * scale)
    # Candidates far below the round's top value sit on residual noise; the
    # frozen-lambda ascent would walk them onto a dominant ray and report a
    # near-duplicate with inflated weight, so they keep their power estimate.
    refine_floor = max(lam_floor, 1e-6 * scale)

    def estimate_pair(v, lam, degen, power_steps) -> EigenPair:
        # Keep the power-phase lambda: it is the best rank-1 weight of the
        # deflated residual, which is exactly what the sigma_{l+1} user wants.
        if lam < 0:
            v, lam = -v, -lam
        residual = float(np.linalg.norm(contract_2(T, v, v) - lam * v))
        return EigenPair(lam, v, power_steps, 0, residual, converged=False,
                         degenerate=degen or lam <= lam_floor)

    def make_pair(v, lam, degen, power_steps, allow_refine) -> tuple[EigenPair, bool]:
        if refine:
            if allow_refine and lam > refine_floor and not degen:
                return grad_ascent_refine(T, v, lam, cfg, iterations_power=power_steps), True
            return estimate_pair(v, lam, degen, power_steps), False
        return _finish_pair(T, v, power_steps, 0, True, degen or lam <= lam_floor,
                            cfg.ascent_tol), False

    candidates.sort(key=lambda c: -c[1])
    entries = [make_pair(*c, allow_refine=(pos < refine_budget))
               for pos, c in enumerate(candidates)]

    for _ in range(r + 2):
        entries.sort(key=lambda e: -e[0].lam)
        dup = None
        for a in range(len(entries)):
            for b in range(a + 1, len(entries)):
                if not (entries[a][1] and entries[b][1]):
                    continue  # the duplicate guard only concerns refined pairs
                if abs(float(entries[a][0].v @ entries[b][0].v)) > 0.99:
                    dup = b
                    break
            if dup is not None:
                break
        if dup is None:
            break
        del entries[dup]
        Td = _deflate_model(T, [e[0] for e in entries])
        V, lams, degenerate, steps = _power_phase(Td, cfg, rng)
        best = int(np.argmax(lams))
        if collect_trace:
            trace.append(RoundTrace(len(trace), lams.copy(), best))
        entries.append(make_pair(V[:, best].copy(), float(lams[best]),
                                 bool(degenerate[best]), int(steps[best]),
                                 allow_refine=(dup < refine_budget)))

    entries.sort(key=lambda e: -e[0].lam)
    pairs = [e[0] for e in entries]
    top = [p for p in pairs[:l] if p.lam > 0]
    model = (FactorModel(n, [p.lam for p in top], np.stack([p.v for p in top], axis=1))
             if top else FactorModel.empty(n))
    sigma_next = float(pairs[l].lam) if l < r else 0.0
    return EigResult(pairs=pairs, model=model, sigma_next=sigma_next, trace=trace)
