"""Tests for covariance functions, Gram matrices and hyperparameter gradients."""
from __future__ import annotations

import math

import numpy as np
import pytest

from gpfeed.errors import InvalidInputError
from gpfeed.kernels import (
    HyperParams,
    KernelSpec,
    Variant,
    contract_grad_hyper,
    diag,
    evaluate,
    grad_hyper,
    gram,
    isotropic,
    kernel_from_name,
    pack,
    param_names,
    profile,
    spec_from_dict,
    spec_to_dict,
    unpack,
)
from tests.conftest import ALL_VARIANTS, random_kernel, wide_kernel


class TestEvaluate:
    """Single-pair kernel values."""

    def test_se_zero_distance_is_prior_variance(self) -> None:
        k = isotropic("se", 3, sigma_f=1.7, lengthscale=0.4)
        y = np.array([0.3, -1.0, 2.0])
        assert evaluate(k, y, y) == pytest.approx(1.7 ** 2)

    def test_se_unit_offset(self) -> None:
        k = isotropic("se", 3, sigma_f=1.0, lengthscale=1.0)
        a = np.zeros(3)
        b = np.array([0.0, 1.0, 0.0])
        assert evaluate(k, a, b) == pytest.approx(math.exp(-0.5), rel=1e-14)

    def test_periodic_full_period_shift(self) -> None:
        k = KernelSpec.leaf("periodic", 0.8, [0.5, 0.7], periods=[2.0, 3.0])
        a = np.array([0.2, 1.1])
        b = np.array([0.2 + 2.0, 1.1])
        assert evaluate(k, a, b) == pytest.approx(0.8 ** 2, rel=1e-12)

    def test_matern32_zero_distance(self) -> None:
        k = isotropic("matern32", 2, sigma_f=2.0, lengthscale=0.1)
        assert evaluate(k, [1.0, 1.0], [1.0, 1.0]) == pytest.approx(4.0)

    def test_matern32_standard_form(self) -> None:
        k = isotropic("matern32", 1, sigma_f=1.0, lengthscale=2.0)
        s = math.sqrt(3.0) * 0.5
        assert evaluate(k, [0.0], [1.0]) == pytest.approx((1 + s) * math.exp(-s), rel=1e-14)

    def test_sum_adds_leaves(self) -> None:
        se = isotropic("se", 2, 1.0, 1.0)
        per = isotropic("periodic", 2, 0.5, 1.0, period=2.0)
        a, b = np.array([0.0, 0.3]), np.array([0.4, -0.2])
        total = evaluate(KernelSpec.sum_of(se, per), a, b)
        assert total == pytest.approx(evaluate(se, a, b) + evaluate(per, a, b))

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_stationary(self, variant: str) -> None:
        rng = np.random.default_rng(100 + ALL_VARIANTS.index(variant))
        for _ in range(20):
            k = random_kernel(rng, variant, 4)
            a, b, c = rng.normal(size=(3, 4))
            shifted = evaluate(k, a + 3.0 * c, b + 3.0 * c)
            assert shifted == pytest.approx(evaluate(k, a, b), rel=1e-10, abs=1e-14)

    @pytest.mark.parametrize("variant", ["se", "matern32"])
    def test_decays_along_each_axis(self, variant: str) -> None:
        rng = np.random.default_rng(200 + ALL_VARIANTS.index(variant))
        for _ in range(10):
            k = random_kernel(rng, variant, 3)
            origin = rng.normal(size=3)
            for axis in range(3):
                steps = np.zeros((31, 3))
                steps[:, axis] = np.linspace(0.0, 6.0, 31)
                values = gram(k, origin, origin + steps)[0]
                assert np.all(np.diff(values) <= 0.0)
                assert values[0] > values[-1]

    def test_dimension_mismatch_raises(self) -> None:
        k = isotropic("se", 3)
        with pytest.raises(InvalidInputError):
            evaluate(k, [0.0, 0.0], [0.0, 0.0])


class TestGram:
    """Gram matrix structure."""

    def test_single_window(self) -> None:
        k = isotropic("se", 2, sigma_f=1.5)
        np.testing.assert_allclose(gram(k, [[0.1, 0.2]]), [[2.25]])

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_cross_gram_is_transpose(self, rng: np.random.Generator, variant: str) -> None:
        k = random_kernel(rng, variant, 4)
        A = rng.normal(size=(7, 4))
        B = rng.normal(size=(5, 4))
        np.testing.assert_allclose(gram(k, A, B), gram(k, B, A).T, rtol=1e-14, atol=0)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    @pytest.mark.parametrize("seed", range(5))
    def test_psd(self, variant: str, seed: int) -> None:
        rng = np.random.default_rng(seed)
        k = wide_kernel(rng, variant, 6)
        A = rng.normal(size=(50, 6))
        K = gram(k, A)
        np.testing.assert_array_equal(K, K.T)
        eig = np.linalg.eigvalsh(K)
        assert eig.min() >= -1e-10 * 50 * k.prior_variance

    def test_diag_matches_gram(self, rng: np.random.Generator) -> None:
        k = random_kernel(rng, "sum", 3)
        A = rng.normal(size=(6, 3))
        np.testing.assert_allclose(diag(k, A), np.diag(gram(k, A)))

    def test_non_finite_windows_rejected(self) -> None:
        with pytest.raises(InvalidInputError, match="non-finite"):
            gram(isotropic("se", 2), [[0.0, np.nan]])


class TestProfile:
    """Covariance versus offset along one axis."""

    def test_peak_at_zero_and_symmetric(self) -> None:
        k = isotropic("matern32", 3, sigma_f=1.0, lengthscale=0.5)
        offsets = np.linspace(-2, 2, 41)
        c = profile(k, offsets, axis=1)
        assert c[20] == pytest.approx(1.0)
        np.testing.assert_allclose(c, c[::-1], rtol=1e-14)
        assert np.all(c <= 1.0)

    def test_periodic_repeats(self) -> None:
        k = isotropic("periodic", 1, 1.0, 0.7, period=1.5)
        c = profile(k, [0.3, 1.8])
        assert c[0] == pytest.approx(c[1], rel=1e-12)

    def test_axis_out_of_range(self) -> None:
        with pytest.raises(InvalidInputError):
            profile(isotropic("se", 2), [0.0], axis=2)


class TestGradHyper:
    """Analytic dK/dθ against finite differences."""

    def test_sigma_f_derivative_on_diagonal(self) -> None:
        k = isotropic("se", 2, sigma_f=1.3, lengthscale=0.6)
        grads = grad_hyper(k, [[0.0, 1.0]])
        assert grads[0][0, 0] == pytest.approx(2 * 1.3)

    def test_lengthscale_gradient_zero_for_identical_windows(self) -> None:
        k = isotropic("matern32", 2, lengthscale=0.6)
        A = np.ones((3, 2))
        for g in grad_hyper(k, A)[1:]:
            np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_matches_central_differences(self, rng: np.random.Generator, variant: str) -> None:
        k = random_kernel(rng, variant, 3)
        A = rng.normal(size=(10, 3))
        theta = pack(k, 0.1)
        grads = grad_hyper(k, A)
        assert len(grads) == theta.size - 1
        for n, analytic in enumerate(grads, start=1):
            h = 1e-6 * theta[n]
            up, down = theta.copy(), theta.copy()
            up[n] += h
            down[n] -= h
            numeric = (gram(unpack(k, up)[0], A) - gram(unpack(k, down)[0], A)) / (2 * h)
            scale = max(np.max(np.abs(numeric)), 1e-8)
            assert np.max(np.abs(analytic - numeric)) / scale < 1e-5, param_names(k)[n]

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_contraction_matches_explicit_sum(
        self, rng: np.random.Generator, variant: str,
    ) -> None:
        k = random_kernel(rng, variant, 4)
        A = rng.normal(size=(15, 4)) + 5.0
        W = rng.normal(size=(15, 15))
        expected = [float(np.sum(W * dK)) for dK in grad_hyper(k, A)]
        np.testing.assert_allclose(contract_grad_hyper(k, A, W), expected,
                                   rtol=1e-10, atol=1e-10 * k.prior_variance)

    def test_contraction_weight_shape(self) -> None:
        with pytest.raises(InvalidInputError, match="weights"):
            contract_grad_hyper(isotropic("se", 2), np.zeros((3, 2)), np.eye(2))


class TestParameterVectors:
    """param_names / pack / unpack share one ordering."""

    def test_names_for_sum(self) -> None:
        k = KernelSpec.sum_of(isotropic("se", 2), isotropic("periodic", 2))
        assert param_names(k) == [
            "sigma_n",
            "t0.sigma_f", "t0.lengthscale[0]", "t0.lengthscale[1]",
            "t1.sigma_f", "t1.lengthscale[0]", "t1.lengthscale[1]",
            "t1.period[0]", "t1.period[1]",
        ]

    def test_unpack_inverts_pack(self, rng: np.random.Generator) -> None:
        k = random_kernel(rng, "sum", 3)
        spec, sigma_n = unpack(k, pack(k, 0.25))
        assert spec == k
        assert sigma_n == 0.25

    def test_wrong_length_rejected(self) -> None:
        with pytest.raises(InvalidInputError, match="expected 3"):
            unpack(isotropic("se", 1), [1.0, 2.0])


class TestSpecValidation:
    """Constructor and JSON-schema checks."""

    def test_negative_lengthscale(self) -> None:
        with pytest.raises(InvalidInputError):
            HyperParams(sigma_f=1.0, lengthscales=(1.0, -1.0))

    def test_periodic_needs_periods(self) -> None:
        with pytest.raises(InvalidInputError, match="periods"):
            KernelSpec.leaf("periodic", 1.0, [1.0])

    def test_sum_needs_two_terms(self) -> None:
        with pytest.raises(InvalidInputError):
            KernelSpec(Variant.SUM, 2, None, (isotropic("se", 2),))

    def test_kernel_from_name(self) -> None:
        k = kernel_from_name("se+periodic", 4, lengthscale=0.3, period=2.0)
        assert [leaf.variant for leaf in k.leaves()] == [Variant.SE, Variant.PERIODIC]
        assert k.dim == 4

    def test_unknown_name(self) -> None:
        with pytest.raises(InvalidInputError, match="unknown kernel"):
            kernel_from_name("rbf", 2)

    def test_dict_round_trip_of_sum(self) -> None:
        k = KernelSpec.sum_of(isotropic("matern32", 2, 1.2, 0.4), isotropic("periodic", 2))
        assert spec_from_dict(spec_to_dict(k)) == k

    def test_unknown_dict_key(self) -> None:
        with pytest.raises(InvalidInputError, match="unknown kernel keys"):
            spec_from_dict({"variant": "se", "sigma_f": 1.0, "lengthscales": [1.0], "nu": 1.5})
