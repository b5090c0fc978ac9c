import numpy as np
import pytest

from rtd.synth import (
    Instance,
    SynthSpec,
    gen_instance,
    gen_low_rank,
    gen_sparse_block,
    gen_sparse_entrywise,
    measured_eta,
    measured_incoherence,
    orbit_symmetrize,
)
from rtd.tensors import (
    FactorModel,
    SymTensor3,
    inf_norm,
    spectral_norm_estimate,
    symmetry_defect,
)


class TestGenLowRank:
    def test_rank1(self):
        spec = SynthSpec(n=20, r=1, seed=0)
        model, T = gen_low_rank(spec, np.random.default_rng(0))
        u = model.vectors[:, 0]
        assert abs(np.linalg.norm(u) - 1.0) < 1e-12
        expected = np.einsum("i,j,k->ijk", u, u, u)
        assert np.max(np.abs(T.data - expected)) < 1e-12

    def test_full_rank_mu_at_least_one(self):
        for seed in range(5):
            spec = SynthSpec(n=8, r=8, seed=seed)
            model, _ = gen_low_rank(spec, np.random.default_rng(seed))
            assert measured_incoherence(model) >= 1.0

    def test_gaussian_incoherence_monte_carlo(self):
        hits = 0
        for seed in range(100):
            spec = SynthSpec(n=100, r=5, seed=seed)
            model, _ = gen_low_rank(spec, np.random.default_rng(seed))
            if measured_incoherence(model) <= 4.0:
                hits += 1
        assert hits >= 95

    def test_orthonormality_exact(self):
        spec = SynthSpec(n=30, r=4, seed=3)
        model, _ = gen_low_rank(spec, np.random.default_rng(3))
        G = model.vectors.T @ model.vectors
        assert np.max(np.abs(G - np.eye(4))) < 1e-12

    def test_mu_target_infeasible(self):
        spec = SynthSpec(n=10, r=2, mu_target=0.5, seed=0)
        with pytest.raises(ValueError, match="infeasible"):
            gen_low_rank(spec, np.random.default_rng(0))

    def test_mu_target_unreachable_names_achieved(self):
        spec = SynthSpec(n=30, r=3, mu_target=1.01, seed=0)
        with pytest.raises(ValueError, match="best achieved"):
            gen_low_rank(spec, np.random.default_rng(0))

    def test_mu_target_gate(self):
        spec = SynthSpec(n=50, r=3, mu_target=3.5, seed=1)
        model, _ = gen_low_rank(spec, np.random.default_rng(1))
        assert measured_incoherence(model) <= 3.5

    def test_zero_rows_raise_coherence(self):
        base = SynthSpec(n=60, r=3, seed=5)
        zeroed = SynthSpec(n=60, r=3, seed=5, zero_row_frac=0.4)
        m0, _ = gen_low_rank(base, np.random.default_rng(5))
        m1, _ = gen_low_rank(zeroed, np.random.default_rng(5))
        assert measured_incoherence(m1) > measured_incoherence(m0)

    def test_low_coherence_mode(self):
        spec = SynthSpec(n=50, r=3, seed=7, factor_mode="low_coherence")
        model, _ = gen_low_rank(spec, np.random.default_rng(7))
        assert measured_incoherence(model) <= 1.6

    def test_custom_lambdas(self):
        spec = SynthSpec(n=12, r=2, seed=8, lambdas=(2.0, 0.5))
        model, _ = gen_low_rank(spec, np.random.default_rng(8))
        assert np.array_equal(model.lambdas, [2.0, 0.5])


class TestMeasuredIncoherence:
    def test_basis_vectors(self):
        model = FactorModel(4, [1.0, 1.0], np.eye(4)[:, :2])
        assert abs(measured_incoherence(model) - 2.0) < 1e-14  # sqrt(4)

    def test_flat_vector(self):
        n = 16
        u = np.ones(n) / np.sqrt(n)
        model = FactorModel(n, [1.0], u[:, None])
        assert abs(measured_incoherence(model) - 1.0) < 1e-12

    def test_consistency_with_generator(self):
        spec = SynthSpec(n=40, r=3, seed=9)
        model, _ = gen_low_rank(spec, np.random.default_rng(9))
        mu = measured_incoherence(model)
        assert abs(mu - np.sqrt(40) * np.max(np.abs(model.vectors))) < 1e-14


class TestEntrywise:
    def test_zero_density(self):
        S = gen_sparse_entrywise(SynthSpec(n=10, r=2, sparsity_model="entrywise", d=0),
                                 np.random.default_rng(0))
        assert S.nnz == 0

    def test_full_density(self):
        S = gen_sparse_entrywise(SynthSpec(n=6, r=2, sparsity_model="entrywise", d=6),
                                 np.random.default_rng(1))
        assert S.nnz == 216

    def test_binomial_count(self):
        n, d = 100, 10
        spec = SynthSpec(n=n, r=5, sparsity_model="entrywise", d=d)
        S = gen_sparse_entrywise(spec, np.random.default_rng(2))
        p = d / n
        expected = n ** 3 * p
        sigma = np.sqrt(n ** 3 * p * (1 - p))
        assert abs(S.nnz - expected) <= 3 * sigma

    def test_values_in_range(self):
        spec = SynthSpec(n=30, r=4, sparsity_model="entrywise", d=3)
        S = gen_sparse_entrywise(spec, np.random.default_rng(3))
        lo, hi = spec.value_range()
        assert np.all(S.values >= lo) and np.all(S.values <= hi)

    def test_not_symmetric_by_default(self):
        spec = SynthSpec(n=20, r=3, sparsity_model="entrywise", d=4)
        S = gen_sparse_entrywise(spec, np.random.default_rng(4))
        assert not S.symmetric
        assert symmetry_defect(S.densify()) > 0

    def test_symmetrize_flag(self):
        spec = SynthSpec(n=12, r=3, sparsity_model="entrywise", d=3, symmetrize=True)
        S = gen_sparse_entrywise(spec, np.random.default_rng(5))
        assert S.symmetric
        assert symmetry_defect(S.densify()) == 0.0

    def test_rademacher_signs(self):
        spec = SynthSpec(n=20, r=3, sparsity_model="entrywise", d=5, rademacher=True)
        S = gen_sparse_entrywise(spec, np.random.default_rng(6))
        assert np.any(S.values < 0) and np.any(S.values > 0)


class TestBlock:
    def test_single_block_cube_count(self):
        spec = SynthSpec(n=30, r=3, sparsity_model="block", d=6, B=1)
        S, psis = gen_sparse_block(spec, np.random.default_rng(7))
        s = int(psis[0].sum())
        assert S.nnz == s ** 3

    def test_support_is_union_of_cubes(self):
        spec = SynthSpec(n=40, r=3, sparsity_model="block", d=8, B=3)
        S, psis = gen_sparse_block(spec, np.random.default_rng(8))
        supports = [np.flatnonzero(p) for p in psis]
        stored = set(map(tuple, S.indices.tolist()))
        rng = np.random.default_rng(9)
        for _ in range(1000):
            i, j, k = (int(x) for x in rng.integers(0, 40, size=3))
            in_cube = any(i in set(s) and j in set(s) and k in set(s) for s in supports)
            assert ((i, j, k) in stored) == in_cube

    def test_disjoint_blocks(self):
        # freeze a seed whose two blocks do not overlap
        spec = SynthSpec(n=60, r=2, sparsity_model="block", d=4, B=2)
        S, psis = gen_sparse_block(spec, np.random.default_rng(12))
        s1, s2 = (int(p.sum()) for p in psis)
        assert int(psis[0] @ psis[1]) == 0
        assert S.nnz == s1 ** 3 + s2 ** 3
        assert measured_eta(psis) == 0.0

    def test_eta_regime(self):
        spec = SynthSpec(n=100, r=5, sparsity_model="block", d=10, B=5)
        _, psis = gen_sparse_block(spec, np.random.default_rng(10))
        eta = measured_eta(psis)
        assert eta <= 5 * max(10 / 100, 1 / np.sqrt(100))

    def test_values_in_range(self):
        spec = SynthSpec(n=25, r=4, sparsity_model="block", d=5, B=2)
        S, _ = gen_sparse_block(spec, np.random.default_rng(11))
        lo, hi = spec.value_range()
        assert np.all(S.values >= lo) and np.all(S.values <= hi)

    def test_block_spectral_norm_bound(self):
        # single-block tensors obey |M|_2 <= realized_d^1.5 * |M|_inf
        for seed in range(8):
            spec = SynthSpec(n=20, r=2, sparsity_model="block",
                             d=3 + 2 * (seed % 2), B=1, seed=seed)
            S, psis = gen_sparse_block(spec, np.random.default_rng(seed))
            d_real = int(psis[0].sum())
            if d_real == 0:
                continue
            M = SymTensor3(S.densify(), check=False)
            est = spectral_norm_estimate(M, restarts=16, iters=40,
                                         rng=np.random.default_rng(100 + seed))
            assert est <= 1.0001 * d_real ** 1.5 * inf_norm(S)

    def test_requires_positive_block_count(self):
        spec = SynthSpec(n=10, r=2, sparsity_model="block", d=2, B=0)
        with pytest.raises(ValueError):
            gen_sparse_block(spec, np.random.default_rng(0))


class TestMeasuredEta:
    def test_identical_blocks(self):
        psi = np.array([1, 1, 0, 0])
        assert measured_eta([psi, psi.copy()]) == 1.0

    def test_disjoint_blocks(self):
        assert measured_eta([np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1])]) == 0.0

    def test_hand_instance(self):
        psi1 = np.array([1, 1, 0, 0])
        psi2 = np.array([0, 1, 1, 0])
        assert measured_eta([psi1, psi2]) == 0.5

    def test_fewer_than_two(self):
        assert measured_eta([]) == 0.0
        assert measured_eta([np.array([1, 0])]) == 0.0


class TestOrbitSymmetrize:
    def test_closure_and_shared_values(self):
        from rtd.tensors import SparseTensor3

        S = SparseTensor3(4, [[0, 1, 2]], [5.0])
        sym = orbit_symmetrize(S)
        assert sym.symmetric
        assert sym.nnz == 6
        assert np.all(sym.values == 5.0)

    def test_lex_smallest_representative_wins(self):
        from rtd.tensors import SparseTensor3

        S = SparseTensor3(3, [[0, 1, 2], [2, 1, 0]], [5.0, 7.0])
        sym = orbit_symmetrize(S)
        assert sym.nnz == 6
        assert np.all(sym.values == 5.0)  # (0,1,2) precedes (2,1,0)

    def test_diagonal_entry(self):
        from rtd.tensors import SparseTensor3

        S = SparseTensor3(3, [[1, 1, 1]], [2.0])
        sym = orbit_symmetrize(S)
        assert sym.nnz == 1


class TestInstance:
    def test_instance_tensor_symmetric(self):
        spec = SynthSpec(n=20, r=2, sparsity_model="block", d=4, B=2, seed=13,
                         symmetrize=True)
        inst = gen_instance(spec)
        T = inst.tensor
        assert symmetry_defect(T.data) < 1e-12

    def test_asymmetric_instance_refuses_tensor(self):
        spec = SynthSpec(n=15, r=2, sparsity_model="entrywise", d=3, seed=14)
        inst = gen_instance(spec)
        if inst.sparse.nnz:
            with pytest.raises(ValueError):
                inst.tensor

    def test_meta_reports_measurements(self):
        spec = SynthSpec(n=20, r=2, sparsity_model="block", d=4, B=2, seed=15,
                         symmetrize=True)
        inst = gen_instance(spec)
        meta = inst.meta()
        assert meta["measured_mu"] == measured_incoherence(inst.model)
        assert meta["nnz"] == inst.sparse.nnz
        assert "measured_eta" in meta

    def test_deterministic(self):
        spec = SynthSpec(n=18, r=2, sparsity_model="block", d=4, B=2, seed=16,
                         symmetrize=True)
        a = gen_instance(spec)
        b = gen_instance(spec)
        assert np.array_equal(a.low_rank.data, b.low_rank.data)
        assert np.array_equal(a.sparse.values, b.sparse.values)
