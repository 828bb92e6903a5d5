"""Kernel evaluation, Gram systems, projections, and sufficiency invariance."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import varbounds as vb
from varbounds.errors import NaturalSpaceError
from varbounds.kernel import (
    DerivBasis,
    DiffBasis,
    ExpfamKernelEvaluator,
    MonteCarloKernelEvaluator,
    PointBasis,
    derivative_kernel_function,
    deriv_inner_products,
    gram,
    gram_system,
    kernel_expfam,
    kernel_mc,
    make_gram_system,
    projected_sq_norm,
    suffstat_kernel_check,
)

params = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)


class TestKernelExpfam:
    def test_gaussian_closed_form(self):
        g = vb.gaussian_mean()
        # exponent reduces to (x1-x0)(x2-x0)
        assert kernel_expfam(g, [0.0], [1.0], [1.0]) == pytest.approx(math.e, rel=1e-12)
        assert kernel_expfam(g, [0.0], [1.0], [-1.0]) == pytest.approx(1 / math.e, rel=1e-12)

    def test_reference_diagonal_is_one(self):
        for model in (vb.gaussian_mean(), vb.poisson(), vb.bernoulli()):
            assert kernel_expfam(model, [0.4], [0.4], [0.4]) == pytest.approx(1.0, rel=1e-14)

    def test_pair_sum_condition_violation(self):
        er = vb.exponential_rate()
        # x1 + x2 - x0 = 1 >= 0 leaves the natural space
        with pytest.raises(NaturalSpaceError):
            kernel_expfam(er, [-3.0], [-1.0], [-1.0])

    def test_100_random_triples_match_translation_formula(self):
        g = vb.gaussian_mean()
        rng = np.random.default_rng(0)
        for _ in range(100):
            x0, x1, x2 = rng.uniform(-2, 2, size=3)
            expect = math.exp((x1 - x0) * (x2 - x0))
            got = kernel_expfam(g, [x0], [x1], [x2])
            assert got == pytest.approx(expect, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(params, params, params)
    def test_symmetry_exact(self, x0, x1, x2):
        g = vb.gaussian_mean()
        assert kernel_expfam(g, [x0], [x1], [x2]) == kernel_expfam(g, [x0], [x2], [x1])

    def test_symmetry_exact_100_random_pairs(self):
        rng = np.random.default_rng(5)
        for model in (vb.gaussian_mean(), vb.poisson()):
            for _ in range(100):
                x0, x1, x2 = rng.uniform(-1.5, 1.5, size=3)
                assert kernel_expfam(model, [x0], [x1], [x2]) == \
                    kernel_expfam(model, [x0], [x2], [x1])

    def test_pairwise_matches_scalar_evaluation(self):
        p = vb.poisson()
        ev = ExpfamKernelEvaluator(p, [0.2])
        pts = np.array([[0.2], [0.5], [-0.3]])
        K = ev.pairwise(pts)
        for i in range(3):
            for j in range(3):
                assert K[i, j] == pytest.approx(ev.evaluate(pts[i], pts[j]), rel=1e-14)


class TestKernelMC:
    def test_reference_pair_is_exactly_one(self):
        est = kernel_mc(vb.as_generic(vb.gaussian_mean()), [0.0], [0.0], [0.0],
                        n=1000, seed=1)
        assert est.value == 1.0 and est.stderr == 0.0

    def test_matches_closed_form_within_4se(self):
        # for x2 = -x1 the ratio product is deterministic, so the standard
        # error is pure rounding noise; allow a float-level epsilon
        g = vb.gaussian_mean()
        gm = vb.as_generic(g)
        for x1, x2, seed in [([1.0], [1.0], 2), ([0.5], [-0.5], 3)]:
            est = kernel_mc(gm, [0.0], x1, x2, n=100_000, seed=seed)
            oracle = kernel_expfam(g, [0.0], x1, x2)
            assert abs(est.value - oracle) <= 4 * est.stderr + 1e-12

    def test_shared_sample_set_gives_psd_gram(self):
        ev = MonteCarloKernelEvaluator(vb.as_generic(vb.gaussian_mean()), [0.0],
                                       mc_samples=20_000, seed=4)
        pts = np.array([[0.0], [0.4], [0.8], [-0.4]])
        K = ev.pairwise(pts)
        eig = np.linalg.eigvalsh(K)
        assert eig[0] >= -1e-9 * eig[-1]

    def test_accepts_expfam_models_directly(self):
        est = kernel_mc(vb.poisson(), [0.0], [0.3], [0.3], n=50_000, seed=5)
        oracle = kernel_expfam(vb.poisson(), [0.0], [0.3], [0.3])
        assert abs(est.value - oracle) <= 4 * est.stderr

    def test_heavy_tail_warning(self):
        # kernel value finite but the squared-ratio product has infinite
        # variance when 2(x1 + x2) - 3 x0 leaves the natural space
        er = vb.exponential_rate()
        for seed in range(3):
            bad = kernel_mc(er, [-1.0], [-0.6], [-0.6], n=20_000, seed=seed)
            assert bad.heavy_tail_warning
            fine = kernel_mc(er, [-1.0], [-0.85], [-0.85], n=20_000, seed=seed)
            assert not fine.heavy_tail_warning


class TestDerivativeKernelFunction:
    def test_zero_index_is_plain_evaluation(self):
        g = vb.gaussian_mean()
        ev = ExpfamKernelEvaluator(g, [0.0])
        assert derivative_kernel_function(ev, (0,), [0.7]) == ev.evaluate([0.7], [0.0])

    def test_first_slot_derivative_of_translation_kernel(self):
        # R(t,s) = exp(ts) at x0=0: d/ds at 0 is t
        g = vb.gaussian_mean()
        ev = ExpfamKernelEvaluator(g, [0.0])
        for t in (-1.5, 0.3, 2.0):
            assert derivative_kernel_function(ev, (1,), [t]) == pytest.approx(t, abs=1e-6)

    def test_second_derivative(self):
        g = vb.gaussian_mean()
        ev = ExpfamKernelEvaluator(g, [0.0])
        assert derivative_kernel_function(ev, (2,), [1.0]) == pytest.approx(1.0, abs=1e-4)

    def test_requires_closed_form_evaluator(self):
        ev = MonteCarloKernelEvaluator(vb.as_generic(vb.gaussian_mean()), [0.0],
                                       mc_samples=100, seed=0)
        with pytest.raises(ValueError):
            derivative_kernel_function(ev, (1,), [0.5])


class TestGram:
    def test_reference_point_basis(self):
        ev = ExpfamKernelEvaluator(vb.gaussian_mean(), [0.0])
        G = gram(ev, [PointBasis(np.array([0.0]))])
        assert G == pytest.approx(np.array([[1.0]]), abs=1e-14)

    def test_point_and_first_derivative_are_orthonormal(self):
        ev = ExpfamKernelEvaluator(vb.gaussian_mean(), [0.0])
        G = gram(ev, [PointBasis(np.array([0.0])), DerivBasis((1,))])
        assert G == pytest.approx(np.eye(2), abs=1e-6)

    def test_difference_basis(self):
        ev = ExpfamKernelEvaluator(vb.gaussian_mean(), [0.0])
        G = gram(ev, [DiffBasis(np.array([1.0]))])
        assert G[0, 0] == pytest.approx(math.e - 1.0, abs=1e-9)

    def test_reproducing_consistency_is_exact(self):
        g = vb.gaussian_mean()
        ev = ExpfamKernelEvaluator(g, [0.2])
        x1, x2 = np.array([0.9]), np.array([-0.4])
        G = gram(ev, [PointBasis(x1), PointBasis(x2)])
        assert G[0, 1] == kernel_expfam(g, [0.2], x1, x2)

    def test_exact_and_fd_derivative_inner_products_agree(self):
        import dataclasses
        g = vb.gaussian_mean()
        fd = dataclasses.replace(g, closed_moments=None)
        idxs = [(1,), (2,)]
        exact = deriv_inner_products(g, np.array([0.5]), idxs)
        approx = deriv_inner_products(fd, np.array([0.5]), idxs)
        assert approx == pytest.approx(exact, abs=5e-4)

    def test_mixed_point_derivative_entries(self):
        # exp(ts) at x0=0: <R(.,a), r^(2)> is a^2
        ev = ExpfamKernelEvaluator(vb.gaussian_mean(), [0.0])
        G = gram(ev, [PointBasis(np.array([1.5])), DerivBasis((2,))])
        assert G[0, 1] == pytest.approx(1.5 ** 2, abs=1e-9)

    def test_mixed_difference_derivative_entries(self):
        # exp(ts) at x0=0: <R(.,a) - R(.,0), r^(1)> is a - 0 = a
        ev = ExpfamKernelEvaluator(vb.gaussian_mean(), [0.0])
        a = 0.8
        G = gram(ev, [DiffBasis(np.array([a])), DerivBasis((1,))])
        assert G[0, 1] == pytest.approx(a, abs=1e-9)
        # diagonal entries: ||diff||^2 = e^{a^2} - 1 and ||r^(1)||^2 = 1
        assert G[0, 0] == pytest.approx(math.expm1(a * a), rel=1e-12)
        assert G[1, 1] == pytest.approx(1.0, abs=1e-9)


class TestGramSystemDiagnostics:
    def test_psd_for_random_point_sets(self):
        rng = np.random.default_rng(6)
        for model in (vb.gaussian_mean(), vb.poisson()):
            for _ in range(5):
                x0 = rng.uniform(-0.5, 0.5, size=1)
                ev = ExpfamKernelEvaluator(model, x0)
                pts = [PointBasis(x0 + rng.uniform(-1, 1, size=1))
                       for _ in range(rng.integers(1, 7))]
                G = gram(ev, pts)
                s = np.linalg.svd(G, compute_uv=False)
                assert np.linalg.eigvalsh(G)[0] >= -1e-9 * s[0]

    def test_symmetry_validation(self):
        with pytest.raises(ValueError):
            make_gram_system(np.array([[1.0, 0.5], [0.0, 1.0]]), np.array([1.0, 1.0]))

    def test_diagnostics_fields(self):
        sys = make_gram_system(np.diag([2.0, 1e-14]), np.array([1.0, 0.0]), 1e-10)
        assert sys.diagnostics["rank"] == 1
        assert sys.diagnostics["condition_number"] > 1e10
        assert sys.diagnostics["min_eigenvalue"] == pytest.approx(1e-14, abs=1e-15)


class TestProjectedSqNorm:
    def test_one_dimensional(self):
        sys = make_gram_system(np.array([[1.0]]), np.array([0.7]))
        assert projected_sq_norm(sys) == pytest.approx(0.49, abs=1e-15)

    def test_identity_gram(self):
        sys = make_gram_system(np.eye(2), np.array([0.0, 1.0]))
        assert projected_sq_norm(sys) == pytest.approx(1.0, abs=1e-15)

    def test_rank_one_pseudoinverse(self):
        sys = make_gram_system(np.ones((2, 2)), np.array([1.0, 1.0]), 1e-10)
        assert projected_sq_norm(sys) == pytest.approx(1.0, abs=1e-10)

    def test_negative_noise_clamped_to_zero(self):
        sys = make_gram_system(np.array([[1.0]]), np.array([1.0]))
        object.__setattr__(sys, "rhs", np.array([1e-9]))
        sys.matrix[0, 0] = -1e-30  # adversarial noise-scale matrix
        assert projected_sq_norm(sys) >= 0.0

    def test_monotone_in_added_basis_functions(self):
        # appending a basis function can only grow the projection
        rng = np.random.default_rng(9)
        g = vb.gaussian_mean()
        gamma = vb.identity_mean()
        for _ in range(10):
            x0 = rng.uniform(-1, 1, size=1)
            ev = ExpfamKernelEvaluator(g, x0)
            pts = [x0 + rng.uniform(-1.5, 1.5, size=1) for _ in range(4)]
            basis = [PointBasis(x0)] + [PointBasis(p) for p in pts]
            values = []
            for L in range(1, len(basis) + 1):
                values.append(projected_sq_norm(gram_system(ev, basis[:L], gamma)))
            for a, b in zip(values, values[1:]):
                assert b >= a - 1e-9


class TestSuffStatCheck:
    @staticmethod
    def _setup():
        iid = vb.gaussian_iid(3)
        induced = vb.gaussian_sum(3)
        stat = vb.SufficientStatistic(
            map=lambda Y: Y.sum(axis=-1, keepdims=True), induced_model=induced)
        rng = np.random.default_rng(42)
        pairs = [(np.array([a]), np.array([b]))
                 for a, b in rng.uniform(-0.7, 0.7, size=(20, 2))]
        return iid, stat, pairs

    def test_closed_form_agreement(self):
        iid, stat, pairs = self._setup()
        report = suffstat_kernel_check(iid, stat, [0.2], pairs, tolerance=1e-9)
        assert report.mode == "closed_form"
        assert not report.flagged
        assert max(p.abs_difference for p in report.pairs) <= 1e-9

    def test_trivial_statistic_difference_is_zero(self):
        g = vb.gaussian_mean()
        stat = vb.SufficientStatistic(map=lambda Y: Y, induced_model=g)
        report = suffstat_kernel_check(g, stat, [0.0], [([0.5], [0.3])],
                                       mode="mc", n=5_000, seed=5)
        assert report.pairs[0].abs_difference == 0.0

    def test_mc_agreement_within_4_combined_se(self):
        iid, stat, pairs = self._setup()
        report = suffstat_kernel_check(iid, stat, [0.2], pairs[:5], mode="mc",
                                       n=100_000, seed=1)
        assert not report.flagged
        assert all(p.combined_se is not None for p in report.pairs)

    def test_factorization_gap_is_sharp(self):
        iid, stat, pairs = self._setup()
        report = suffstat_kernel_check(iid, stat, [0.2], pairs[:1], mode="mc",
                                       n=5_000, seed=1)
        assert report.factorization_gap <= 1e-12
