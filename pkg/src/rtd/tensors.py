"""Dense and sparse symmetric third-order tensor types and their core operations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymTensor3",
    "SparseTensor3",
    "FactorModel",
    "idx",
    "contract_1",
    "contract_2",
    "contract_3",
    "rank1_accumulate",
    "flatten",
    "unflatten",
    "tensor_slice",
    "inf_norm",
    "fro_norm",
    "hard_threshold",
    "spectral_norm_estimate",
    "sym_embed",
    "symmetrize_dense",
    "symmetry_defect",
]

_PERMS = ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


def idx(i: int, j: int, k: int, n: int) -> int:
    """Canonical linear index of entry (i, j, k): i*n^2 + j*n + k (C order)."""
    return i * n * n + j * n + k


def symmetry_defect(arr: np.ndarray) -> float:
    """Max absolute deviation of ``arr`` from index-permutation symmetry."""
    return max(float(np.max(np.abs(arr - arr.transpose(p)))) for p in _PERMS)


def symmetrize_dense(arr: np.ndarray) -> np.ndarray:
    """Average of ``arr`` over all 6 index permutations."""
    out = arr.copy()
    for p in _PERMS:
        out += arr.transpose(p)
    out /= 6.0
    return out


class SymTensor3:
    """Dense symmetric tensor in R^{n x n x n}.

    Entries are stored in one C-ordered array, i.e. the flat position of
    (i, j, k) is ``idx(i, j, k, n)``.  Values are immutable after
    construction, so instances are safe to share across threads.
    """

    __slots__ = ("data",)

    def __init__(self, data, check: bool = True, tol: float = 1e-12):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[0] != arr.shape[2]:
            raise ValueError(f"expected a cubic third-order array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        if check:
            scale = max(1.0, float(np.max(np.abs(arr))))
            defect = symmetry_defect(arr)
            if defect > tol * scale:
                raise ValueError(
                    f"tensor is not symmetric: defect {defect:.3e} exceeds {tol:.1e} relative"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "SymTensor3":
        # Trusted path for arrays whose symmetry holds by construction.
        obj = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(obj, "data", arr)
        return obj

    @classmethod
    def zeros(cls, n: int) -> "SymTensor3":
        return cls._wrap(np.zeros((n, n, n)))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def values(self) -> np.ndarray:
        """Entries as a flat length-n^3 array in canonical ``idx`` order."""
        return self.data.reshape(-1)

    def __add__(self, other: "SymTensor3") -> "SymTensor3":
        return SymTensor3._wrap(self.data + other.data)

    def __sub__(self, other: "SymTensor3") -> "SymTensor3":
        return SymTensor3._wrap(self.data - other.data)

    def __repr__(self) -> str:
        return f"SymTensor3(n={self.n})"


class SparseTensor3:
    """Coordinate-form sparse tensor with lexicographically sorted entries.

    All symmetric copies of an entry are stored explicitly; ``symmetric``
    merely asserts that the entry set is closed under index permutation
    with equal values.
    """

    __slots__ = ("n", "indices", "values", "symmetric")

    def __init__(self, n, indices, values, symmetric: bool = False, check: bool = True):
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if indices.shape[0] != values.shape[0]:
            raise ValueError("indices and values length mismatch")
        if check and indices.shape[0]:
            if indices.min() < 0 or indices.max() >= n:
                raise ValueError("index out of range")
            lin = indices[:, 0] * n * n + indices[:, 1] * n + indices[:, 2]
            if np.any(np.diff(lin) <= 0):
                raise ValueError("entries must be strictly increasing in lexicographic order")
            if np.any(values == 0.0) or not np.all(np.isfinite(values)):
                raise ValueError("stored values must be nonzero and finite")
            if symmetric:
                table = dict(zip(lin.tolist(), values.tolist()))
                for (i, j, k), v in zip(indices.tolist(), values.tolist()):
                    for p, q, r in ((i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)):
                        if table.get(p * n * n + q * n + r) != v:
                            raise ValueError("symmetric flag set but entry set is not closed")
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "symmetric", bool(symmetric))

    @classmethod
    def empty(cls, n: int, symmetric: bool = False) -> "SparseTensor3":
        return cls(n, np.empty((0, 3), dtype=np.int64), np.empty(0), symmetric, check=False)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    def linear(self) -> np.ndarray:
        """Linear codes idx(i, j, k) of the stored entries, sorted ascending."""
        n = self.n
        return self.indices[:, 0] * n * n + self.indices[:, 1] * n + self.indices[:, 2]

    def densify(self) -> np.ndarray:
        out = np.zeros((self.n, self.n, self.n))
        if self.nnz:
            out.reshape(-1)[self.linear()] = self.values
        return out

    def support_contained_in(self, other: "SparseTensor3") -> bool:
        if self.nnz == 0:
            return True
        return bool(np.all(np.isin(self.linear(), other.linear())))

    def __repr__(self) -> str:
        return f"SparseTensor3(n={self.n}, nnz={self.nnz}, symmetric={self.symmetric})"


class FactorModel:
    """Low-rank symmetric CP model: sum_i lambdas[i] * u_i (x) u_i (x) u_i.

    ``vectors`` holds the unit vectors u_i as columns; weights are kept
    sorted non-increasing (pairs are re-ordered on construction).
    """

    __slots__ = ("n", "lambdas", "vectors")

    def __init__(self, n: int, lambdas, vectors, check: bool = True):
        lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
        vectors = np.asarray(vectors, dtype=np.float64).reshape(n, -1)
        if vectors.shape[1] != lambdas.shape[0]:
            raise ValueError("one vector per weight required")
        order = np.argsort(-lambdas, kind="stable")
        lambdas = lambdas[order].copy()
        vectors = vectors[:, order].copy()
        if check and lambdas.size:
            if np.any(lambdas <= 0):
                raise ValueError("weights must be positive")
            norms = np.linalg.norm(vectors, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-10):
                raise ValueError("vectors must have unit 2-norm")
        lambdas.setflags(write=False)
        vectors.setflags(write=False)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def empty(cls, n: int) -> "FactorModel":
        return cls(n, np.empty(0), np.empty((n, 0)), check=False)

    @property
    def rank(self) -> int:
        return self.lambdas.shape[0]

    @property
    def pairs(self) -> list[tuple[float, np.ndarray]]:
        return [(float(l), self.vectors[:, i].copy()) for i, l in enumerate(self.lambdas)]

    def materialize(self) -> SymTensor3:
        if self.rank == 0:
            return SymTensor3.zeros(self.n)
        n = self.n
        kr = (self.vectors[:, None, :] * self.vectors[None, :, :]).reshape(n * n, self.rank)
        arr = ((self.vectors * self.lambdas) @ kr.T).reshape(n, n, n)
        return SymTensor3._wrap(arr)

    def __repr__(self) -> str:
        return f"FactorModel(n={self.n}, rank={self.rank})"


def _check_vec(v, n: int, name: str = "v") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def contract_1(T: SymTensor3, v) -> np.ndarray:
    """Contract the third mode with ``v``: M[i, j] = sum_k T[i, j, k] v[k]."""
    n = T.n
    v = _check_vec(v, n)
    return (T.data.reshape(n * n, n) @ v).reshape(n, n)


def contract_2(T: SymTensor3, v, w) -> np.ndarray:
    """Contract the last two modes: out[i] = sum_{j,k} T[i, j, k] v[j] w[k]."""
    n = T.n
    v = _check_vec(v, n)
    w = _check_vec(w, n, "w")
    return (T.data.reshape(n * n, n) @ w).reshape(n, n) @ v


def contract_3(T: SymTensor3, u, v, w) -> float:
    """Full contraction sum_{i,j,k} T[i, j, k] u[i] v[j] w[k]."""
    u = _check_vec(u, T.n, "u")
    return float(u @ contract_2(T, v, w))


def rank1_accumulate(T: SymTensor3, scale: float, v) -> SymTensor3:
    """Return T + scale * v (x) v (x) v.  Deflation uses scale = -lambda."""
    v = _check_vec(v, T.n)
    cube = v[:, None, None] * (v[:, None] * v[None, :])[None, :, :]
    return SymTensor3._wrap(T.data + scale * cube)


def flatten(T: SymTensor3, mode: int) -> np.ndarray:
    """Mode-k flattening: n x n^2 matrix whose columns are the mode-k fibers.

    Column order is major in the first free index: for mode 1 the fiber
    T(:, j, l) lands in column j*n + l, and analogously for modes 2 and 3.
    """
    n = T.n
    if mode == 1:
        return T.data.reshape(n, n * n).copy()
    if mode == 2:
        return np.ascontiguousarray(T.data.transpose(1, 0, 2)).reshape(n, n * n)
    if mode == 3:
        return np.ascontiguousarray(T.data.transpose(2, 0, 1)).reshape(n, n * n)
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def unflatten(M: np.ndarray, mode: int) -> SymTensor3:
    """Inverse of :func:`flatten` for cubic tensors."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if M.shape != (n, n * n):
        raise ValueError(f"expected shape (n, n^2), got {M.shape}")
    cube = M.reshape(n, n, n)
    if mode == 1:
        return SymTensor3._wrap(cube)
    if mode == 2:
        return SymTensor3._wrap(cube.transpose(1, 0, 2))
    if mode == 3:
        return SymTensor3._wrap(cube.transpose(1, 2, 0))
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def tensor_slice(T: SymTensor3, mode: int, index: int) -> np.ndarray:
    """Matrix slice obtained by fixing one index, e.g. mode 3 gives T(:, :, index)."""
    if not 0 <= index < T.n:
        raise ValueError(f"slice index {index} out of range [0, {T.n})")
    if mode == 1:
        return T.data[index, :, :].copy()
    if mode == 2:
        return T.data[:, index, :].copy()
    if mode == 3:
        return T.data[:, :, index].copy()
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


def inf_norm(T) -> float:
    """Maximum absolute entry; sparse tensors are scanned over stored entries only."""
    if isinstance(T, SparseTensor3):
        return float(np.max(np.abs(T.values))) if T.nnz else 0.0
    arr = T.data if isinstance(T, SymTensor3) else np.asarray(T)
    return float(np.max(np.abs(arr))) if arr.size else 0.0


def fro_norm(T) -> float:
    """Frobenius norm sqrt(sum of squared entries)."""
    if isinstance(T, SparseTensor3):
        return float(np.linalg.norm(T.values))
    arr = T.data if isinstance(T, SymTensor3) else np.asarray(T)
    return float(np.sqrt(np.sum(arr * arr)))


def hard_threshold(T: SymTensor3, zeta: float) -> SparseTensor3:
    """Keep exactly the entries with |value| >= zeta as a sparse tensor."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    mask = np.abs(T.data) >= zeta
    indices = np.argwhere(mask)  # C-order scan: already lexicographically sorted
    return SparseTensor3(T.n, indices, T.data[mask], symmetric=True, check=False)


def _khatri_rao_square(V: np.ndarray) -> np.ndarray:
    # Column-wise v (x) v stacking: (n, m) -> (n^2, m).
    n, m = V.shape
    return (V[:, None, :] * V[None, :, :]).reshape(n * n, m)


def spectral_norm_estimate(T: SymTensor3, restarts: int = 16, iters: int = 30, rng=None) -> float:
    """Lower-bound estimate of max_{|v|=1} |T(v, v, v)| by restarted power iterations.

    The exact tensor spectral norm is NP-hard; this estimator is what the
    decomposition loop uses for threshold scales, where a consistent lower
    bound suffices.  Deterministic for a given ``rng`` seed.
    """
    if restarts < 1 or iters < 1:
        raise ValueError("restarts and iters must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    n = T.n
    mat = T.data.reshape(n, n * n)
    V = rng.standard_normal((n, restarts))
    V /= np.linalg.norm(V, axis=0, keepdims=True)
    for _ in range(iters):
        W = mat @ _khatri_rao_square(V)
        norms = np.linalg.norm(W, axis=0)
        alive = norms > 1e-14
        if not np.any(alive):
            break
        V[:, alive] = W[:, alive] / norms[alive]
    lams = np.einsum("im,im->m", V, mat @ _khatri_rao_square(V))
    return float(np.max(np.abs(lams)))


def sym_embed(A) -> SymTensor3:
    """Symmetric embedding of an n1 x n2 x n3 tensor into dimension n1+n2+n3.

    Each entry A[i, j, k] is copied to the 6 permutations of the
    block-offset positions (i, n1+j, n1+n2+k); all other entries are zero.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 3:
        raise ValueError("expected a third-order array")
    if not np.all(np.isfinite(A)):
        raise ValueError("entries must be finite")
    n1, n2, n3 = A.shape
    N = n1 + n2 + n3
    out = np.zeros((N, N, N))
    s1, s2, s3 = slice(0, n1), slice(n1, n1 + n2), slice(n1 + n2, N)
    out[s1, s2, s3] = A
    out[s1, s3, s2] = A.transpose(0, 2, 1)
    out[s2, s1, s3] = A.transpose(1, 0, 2)
    out[s2, s3, s1] = A.transpose(1, 2, 0)
    out[s3, s1, s2] = A.transpose(2, 0, 1)
    out[s3, s2, s1] = A.transpose(2, 1, 0)
    return SymTensor3._wrap(out)
