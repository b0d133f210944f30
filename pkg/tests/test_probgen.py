"""probgen: deterministic generation and structural verification."""

import numpy as np
import pytest

from al3.block_al import BlockSystem, PrecondParams
from al3.errors import RejectedInputError
from al3.probgen import (
    GenSpec,
    generate,
    random_solution,
    rng_stream,
    sizes_for,
    verify_structure,
)
from al3.sparse_core import SparseMatrix
from al3.spectral import compute_spectrum


class TestGenSpec:
    def test_level_must_be_positive(self):
        with pytest.raises(RejectedInputError):
            GenSpec(level=0, seed=1)

    def test_jump_range_validated(self):
        with pytest.raises(RejectedInputError):
            GenSpec(level=1, seed=1, jump_lo=0.0)
        with pytest.raises(RejectedInputError):
            GenSpec(level=1, seed=1, jump_lo=1.0, jump_hi=0.5)

    def test_sizes_grow_geometrically(self):
        totals = [sum(sizes_for(GenSpec(level=lvl, seed=0))) for lvl in (1, 2, 3, 4)]
        for a, b in zip(totals, totals[1:]):
            assert 4.0 <= b / a <= 8.0

    def test_level_span_for_mesh_study(self):
        totals = [sum(sizes_for(GenSpec(level=lvl, seed=0))) for lvl in (1, 2, 3)]
        assert totals[2] / totals[0] >= 50.0

    def test_level1_size_scale(self):
        assert 500 <= sum(sizes_for(GenSpec(level=1, seed=0))) <= 2000


class TestRngStreams:
    def test_streams_are_deterministic(self):
        a = rng_stream(5, 0).standard_normal(8)
        b = rng_stream(5, 0).standard_normal(8)
        assert np.array_equal(a, b)

    def test_streams_are_independent(self):
        a = rng_stream(5, 0).standard_normal(8)
        b = rng_stream(5, 1).standard_normal(8)
        assert not np.array_equal(a, b)

    def test_solution_reps_differ(self):
        u0 = random_solution(3, 16, 0)
        u1 = random_solution(3, 16, 1)
        assert not np.array_equal(u0, u1)
        assert np.array_equal(u0, random_solution(3, 16, 0))


class TestGenerate:
    def test_bitwise_determinism(self):
        spec = GenSpec(level=1, seed=11, base_cells=2)
        s1, s2 = generate(spec), generate(spec)
        for attr in ("a11", "a12", "a22", "b", "mp"):
            assert getattr(s1, attr).equal_to(getattr(s2, attr))

    def test_seed_changes_system(self):
        s1 = generate(GenSpec(level=1, seed=1, base_cells=2))
        s2 = generate(GenSpec(level=1, seed=2, base_cells=2))
        assert not s1.a22.equal_to(s2.a22)

    def test_declared_sizes_match(self):
        spec = GenSpec(level=1, seed=4, base_cells=3)
        n, m, p = sizes_for(spec)
        sys_ = generate(spec)
        assert (sys_.n, sys_.m, sys_.p) == (n, m, p)

    def test_zero_coupling_gives_empty_a12(self):
        sys_ = generate(GenSpec(level=1, seed=2, base_cells=2, coupling_scale=0.0))
        assert sys_.a12.nnz == 0

    def test_zero_coupling_unit_eigenvalue_multiplicity(self):
        # with A12 = 0 the preconditioned spectrum holds 1 with multiplicity >= n
        sys_ = generate(GenSpec(level=1, seed=2, base_cells=2, coupling_scale=0.0))
        rep = compute_spectrum(sys_, PrecondParams(gamma=5.0))
        count = int(np.sum(np.abs(rep.eigenvalues - 1.0) <= 1e-8))
        assert count >= sys_.n

    def test_level1_structure_passes(self, gen_level1):
        report = verify_structure(gen_level1)
        assert report.passed
        assert report.dominance_margin > 0
        assert report.b_rank == gen_level1.p

    def test_custom_jump_range(self):
        sys_ = generate(GenSpec(level=1, seed=6, base_cells=2, jump_lo=1.0, jump_hi=1.0))
        assert verify_structure(sys_).passed

    def test_explicit_coupling_scale_halved_until_dominant(self):
        # absurdly large requested coupling is halved back into dominance
        sys_ = generate(GenSpec(level=1, seed=6, base_cells=2, coupling_scale=100.0))
        assert verify_structure(sys_).passed


class TestVerifyStructure:
    def test_identity_blocks_pass_with_unit_margin(self):
        n, m, p = 4, 4, 2
        b = SparseMatrix.from_dense(np.hstack([np.eye(p), np.zeros((p, m - p))]))
        sys_ = BlockSystem(SparseMatrix.identity(n), SparseMatrix.zeros(n, m),
                           SparseMatrix.identity(m), b, SparseMatrix.identity(p))
        report = verify_structure(sys_)
        assert report.passed
        assert abs(report.dominance_margin - 1.0) <= 1e-12

    def test_constructed_dominance_failure_reported(self):
        # A22 = 0.5 * A12^T A11^{-1} A12 + tiny: dominance must fail
        n, m, p = 2, 2, 1
        a11 = SparseMatrix.identity(n)
        a12 = SparseMatrix.identity(m)
        schur = np.eye(m)  # A12^T A11^{-1} A12
        a22 = SparseMatrix.from_dense(0.5 * schur + 1e-3 * np.eye(m))
        b = SparseMatrix.from_dense([[1.0, 0.0]])
        sys_ = BlockSystem(a11, a12, a22, b, SparseMatrix.identity(p))
        report = verify_structure(sys_)
        assert not report.passed
        assert report.dominance_margin < 0

    def test_rank_deficient_b_detected(self):
        n, m, p = 2, 3, 2
        b = SparseMatrix.from_dense([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        sys_ = BlockSystem(SparseMatrix.identity(n), SparseMatrix.zeros(n, m),
                           SparseMatrix.identity(m), b, SparseMatrix.identity(p))
        report = verify_structure(sys_)
        assert not report.b_full_rank
        assert not report.passed

    def test_probabilistic_mode_on_generated_system(self, gen_level1):
        report = verify_structure(gen_level1, desk_scale=False)
        assert report.passed
        assert report.b_rank is None
        assert report.dominance_margin is None
