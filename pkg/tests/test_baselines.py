import numpy as np
import pytest

from rtd.baselines import (
    MatrixRpcaConfig,
    matrix_rpca,
    rpca_flatten,
    rpca_slices,
    slice_moment_estimate,
    truncated_svd,
    unwhiten_model,
    whiten,
    whiten_decompose,
)
from rtd.decompose import RtdConfig
from rtd.eig import EigConfig, top_r_eigenpairs
from rtd.tensors import FactorModel, SymTensor3, flatten, fro_norm


def signed_orthonormal(n, r, rng):
    U = rng.choice([-1.0, 1.0], size=(n, r)) / np.sqrt(n)
    Q, R = np.linalg.qr(U)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def matrix_instance(n=50, r=2, per_line=5, seed=0):
    """Incoherent low-rank matrix plus sparse corruption with at most
    ``per_line`` corrupted entries per row and per column."""
    rng = np.random.default_rng(seed)
    U = signed_orthonormal(n, r, rng)
    V = signed_orthonormal(n, r, rng)
    sigmas = np.linspace(1.0, 0.8, r)
    L = (U * sigmas) @ V.T
    S = np.zeros((n, n))
    for _ in range(per_line):
        perm = rng.permutation(n)  # one entry per row and column
        vals = rng.uniform(r / (2 * n), r / n, size=n)
        S[np.arange(n), perm] = vals
    return L, S


class TestTruncatedSvd:
    def test_rank1(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal(12)
        u /= np.linalg.norm(u)
        v = rng.standard_normal(9)
        v /= np.linalg.norm(v)
        M = 2.5 * np.outer(u, v)
        U, s, V = truncated_svd(M, 1, np.random.default_rng(0))
        assert abs(s[0] - 2.5) < 1e-10
        assert abs(abs(float(U[:, 0] @ u)) - 1.0) < 1e-10

    def test_identity(self):
        U, s, V = truncated_svd(np.eye(5), 2, np.random.default_rng(0))
        assert np.max(np.abs(s - 1.0)) < 1e-10

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(2)
        M = rng.standard_normal((20, 20))
        _, s, _ = truncated_svd(M, 5, np.random.default_rng(3))
        ref = np.linalg.svd(M, compute_uv=False)[:5]
        assert np.max(np.abs(s - ref)) < 1e-9

    def test_reconstruction(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((15, 4))
        B = rng.standard_normal((4, 11))
        M = A @ B
        U, s, V = truncated_svd(M, 4, np.random.default_rng(5))
        assert np.max(np.abs((U * s) @ V.T - M)) < 1e-9

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            truncated_svd(np.eye(4), 5, np.random.default_rng(0))

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        M = rng.standard_normal((10, 10))
        _, s1, _ = truncated_svd(M, 3, np.random.default_rng(7))
        _, s2, _ = truncated_svd(M, 3, np.random.default_rng(7))
        assert np.array_equal(s1, s2)


class TestMatrixRpca:
    def test_uncorrupted_rank1(self):
        rng = np.random.default_rng(8)
        u = rng.standard_normal(30)
        u /= np.linalg.norm(u)
        M = 1.5 * np.outer(u, u)
        res = matrix_rpca(M, MatrixRpcaConfig(rank=1, mu=2.5, seed=0))
        assert np.count_nonzero(res.S) == 0
        assert np.linalg.norm(res.L - M) / np.linalg.norm(M) <= 1e-8

    def test_zero_matrix(self):
        res = matrix_rpca(np.zeros((8, 8)), MatrixRpcaConfig(rank=1, seed=0))
        assert np.count_nonzero(res.L) == 0
        assert np.count_nonzero(res.S) == 0

    def test_corrupted_recovery(self):
        L, S = matrix_instance(n=50, r=2, per_line=5, seed=9)
        res = matrix_rpca(L + S, MatrixRpcaConfig(rank=2, mu=1.2, seed=1))
        rel = np.linalg.norm(res.L - L) / np.linalg.norm(L)
        assert rel <= 1e-4
        assert res.converged

    def test_support_containment(self):
        L, S = matrix_instance(n=50, r=2, per_line=5, seed=10)
        res = matrix_rpca(L + S, MatrixRpcaConfig(rank=2, mu=1.2, seed=2))
        est = set(map(tuple, np.argwhere(res.S != 0).tolist()))
        truth = set(map(tuple, np.argwhere(S != 0).tolist()))
        assert est <= truth

    def test_trace_shape(self):
        L, S = matrix_instance(n=30, r=2, per_line=3, seed=11)
        res = matrix_rpca(L + S, MatrixRpcaConfig(rank=2, max_iters_per_stage=5, seed=3))
        assert len(res.trace) >= 5
        rec = res.trace[0]
        assert rec.stage == 1 and rec.t == 0 and rec.zeta > 0


class TestTensorBaselines:
    def _rank1_tensor(self, n=20, seed=12):
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        return FactorModel(n, [2.0], u[:, None]).materialize()

    def test_slices_uncorrupted(self):
        T = self._rank1_tensor()
        res = rpca_slices(T, MatrixRpcaConfig(rank=1, seed=0))
        assert np.linalg.norm(res.L - T.data) / fro_norm(T) <= 1e-6

    def test_slices_localized_corruption(self):
        T = self._rank1_tensor()
        slice_norms = [np.linalg.svd(T.data[:, :, k], compute_uv=False)[0] for k in range(20)]
        k_star = int(np.argmax(slice_norms))  # corrupt the strongest slice
        arr = T.data.copy()
        arr[3, 4, k_star] += slice_norms[k_star] / 3
        Tc = SymTensor3(arr, check=False)
        res = rpca_slices(Tc, MatrixRpcaConfig(rank=1, mu=1.5, seed=1))
        for k in range(20):
            if k != k_star:
                assert np.count_nonzero(res.S[:, :, k]) == 0
        assert res.S[3, 4, k_star] != 0

    def test_flatten_uncorrupted_rank_r(self):
        rng = np.random.default_rng(13)
        Q, _ = np.linalg.qr(rng.standard_normal((18, 3)))
        T = FactorModel(18, [2.0, 1.5, 1.0], Q).materialize()
        res = rpca_flatten(T, 1, MatrixRpcaConfig(rank=3, mu=1.5, seed=2))
        assert np.linalg.norm(res.L - T.data) / fro_norm(T) <= 1e-6
        s = np.linalg.svd(flatten(SymTensor3(res.L, check=False), 1), compute_uv=False)
        assert np.sum(s > 1e-8) == 3

    def test_flatten_zero(self):
        res = rpca_flatten(SymTensor3.zeros(6), 1, MatrixRpcaConfig(rank=1, seed=0))
        assert np.count_nonzero(res.L) == 0
        assert np.count_nonzero(res.S) == 0


class TestWhiten:
    def test_identity_moment(self):
        T = self_tensor = FactorModel(
            6, [1.0], (np.ones(6) / np.sqrt(6))[:, None]).materialize()
        Tw, W = whiten(T, np.eye(6), 6)
        assert np.max(np.abs(W - np.eye(6))) < 1e-12
        assert np.max(np.abs(Tw.data - T.data)) < 1e-13

    def test_orthogonal_components_whiten_to_basis(self):
        rng = np.random.default_rng(14)
        Q, _ = np.linalg.qr(rng.standard_normal((12, 3)))
        sigmas = [2.0, 1.5, 1.0]
        model = FactorModel(12, sigmas, Q)
        T = model.materialize()
        M2 = (Q * sigmas) @ Q.T
        Tw, W = whiten(T, M2, 3)
        res = top_r_eigenpairs(Tw, 3, 3, EigConfig(n_restarts=30, seed=0),
                               np.random.default_rng(1))
        for pair in res.pairs:
            assert pair.residual <= 1e-8
        back = unwhiten_model(res.model, W)
        # components and weights match the original model after matching
        for lam, vec in back.pairs:
            j = int(np.argmin(np.abs(np.array(sigmas) - lam)))
            u = Q[:, j]
            v = vec if vec @ u > 0 else -vec
            assert abs(lam - sigmas[j]) <= 1e-8
            assert np.linalg.norm(v - u) <= 1e-7

    def test_nonorthogonal_components(self):
        rng = np.random.default_rng(15)
        n = 14
        u1 = rng.standard_normal(n)
        u1 /= np.linalg.norm(u1)
        w = rng.standard_normal(n)
        w -= (w @ u1) * u1
        w /= np.linalg.norm(w)
        u2 = 0.3 * u1 + np.sqrt(1 - 0.09) * w
        sigmas = [1.5, 1.0]
        A = np.stack([u1, u2], axis=1)
        T = FactorModel(n, sigmas, A).materialize()
        M2 = (A * sigmas) @ A.T
        Tw, W = whiten(T, M2, 2)
        res = top_r_eigenpairs(Tw, 2, 2, EigConfig(n_restarts=30, seed=0),
                               np.random.default_rng(2))
        back = unwhiten_model(res.model, W)
        used = set()
        for lam, vec in back.pairs:
            j = int(np.argmin([abs(lam - s) if jj not in used else np.inf
                               for jj, s in enumerate(sigmas)]))
            used.add(j)
            u = A[:, j]
            v = vec if vec @ u > 0 else -vec
            assert abs(lam - sigmas[j]) <= 1e-6
            assert np.linalg.norm(v - u) <= 1e-6

    def test_unwhiten_is_inverse_on_recovered_subspace(self):
        rng = np.random.default_rng(16)
        Q, _ = np.linalg.qr(rng.standard_normal((10, 3)))
        sigmas = np.array([2.0, 1.0, 0.5])
        M2 = (Q * sigmas) @ Q.T
        T = FactorModel(10, sigmas, Q).materialize()
        _, W = whiten(T, M2, 3)
        B = np.linalg.pinv(W).T
        x = Q @ rng.standard_normal(3)
        assert np.linalg.norm(B @ (W.T @ x) - x) <= 1e-10

    def test_rank_deficient_m2_rejected(self):
        T = SymTensor3.zeros(5)
        M2 = np.zeros((5, 5))
        M2[0, 0] = 1.0
        with pytest.raises(ValueError):
            whiten(T, M2, 2)

    def test_whiten_decompose_pipeline(self):
        rng = np.random.default_rng(17)
        Q, _ = np.linalg.qr(rng.standard_normal((12, 2)))
        sigmas = [2.0, 1.0]
        model = FactorModel(12, sigmas, Q)
        T = model.materialize()
        M2 = (Q * sigmas) @ Q.T
        cfg = RtdConfig(target_rank=2, threshold_mode="practical", mu=1.0,
                        eig=EigConfig(n_restarts=12, seed=0))
        res = whiten_decompose(T, M2, 2, cfg)
        est = res.model.materialize()
        assert fro_norm(est - T) / fro_norm(T) <= 1e-6

    def test_slice_moment_estimate_is_psd(self):
        rng = np.random.default_rng(18)
        Q, _ = np.linalg.qr(rng.standard_normal((15, 2)))
        T = FactorModel(15, [2.0, 1.0], Q).materialize()
        M2 = slice_moment_estimate(T, MatrixRpcaConfig(rank=2, seed=0),
                                   np.random.default_rng(3))
        vals = np.linalg.eigvalsh(0.5 * (M2 + M2.T))
        assert vals.min() >= -1e-12
