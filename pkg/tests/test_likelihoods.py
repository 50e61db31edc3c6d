import math

import numpy as np
import pytest

from forensic_bf import reparam
from forensic_bf.likelihoods import (
    LrContext,
    log_gaussian_iid,
    log_lik_cs,
    log_lik_ss,
    log_marginal_single_source,
    lr_cs,
    lr_gradient,
    lr_ss,
)
from forensic_bf.quadrature import latent_marginal_adaptive
from forensic_bf.types import (
    CommonSourceParams,
    DimensionMismatchError,
    JointParams,
    Model,
    ObservationSet,
    SpecificSourceParams,
)

STANDARD_NORMAL_AT_0 = -0.5 * math.log(2.0 * math.pi)  # -0.91893853...


def cs_params(mu=0.0, vb=1.0, vw=1.0):
    return CommonSourceParams(mu=[mu], sigma_b=[[vb]], sigma_w=[[vw]])


def joint_params(mu=0.0, vb=1.0, vw=1.0, mu_b=0.0, vwb=1.0):
    return JointParams(
        theta_a=cs_params(mu, vb, vw),
        theta_b=SpecificSourceParams(mu_b=[mu_b], sigma_wb=[[vwb]]),
    )


class TestSingleSourceMarginal:
    def test_degenerate_between_variance_reduces_to_iid(self):
        # vanishing between-source variance: marginal is plain N(mu, sigma_w)
        theta = cs_params(vb=1e-12)
        value = log_marginal_single_source(ObservationSet("x", [0.0]), theta)
        assert value == pytest.approx(STANDARD_NORMAL_AT_0, abs=1e-9)

    def test_single_observation_variances_add(self):
        value = log_marginal_single_source(ObservationSet("x", [0.0]), cs_params())
        assert value == pytest.approx(-0.5 * math.log(4.0 * math.pi), abs=1e-12)

    def test_against_latent_effect_quadrature(self):
        theta = cs_params(mu=0.3, vb=0.7, vw=1.2)
        x = [-0.5, 1.1, 0.2]
        closed = log_marginal_single_source(ObservationSet("x", x), theta)
        oracle = latent_marginal_adaptive(x, 0.3, 0.7, 1.2)
        assert abs(math.expm1(closed - oracle)) < 1e-8

    def test_randomized_quadrature_agreement(self, rng):
        for _ in range(40):
            mu = rng.uniform(-3, 3)
            vb = rng.uniform(0.1, 5.0)
            vw = rng.uniform(0.1, 5.0)
            n = rng.integers(1, 6)
            x = rng.normal(mu, math.sqrt(vb + vw), size=n)
            closed = log_marginal_single_source(ObservationSet("x", x), cs_params(mu, vb, vw))
            oracle = latent_marginal_adaptive(x, mu, vb, vw)
            assert abs(math.expm1(closed - oracle)) < 1e-6

    def test_permutation_invariance(self, rng):
        theta = cs_params(mu=0.2, vb=0.5, vw=1.5)
        items = rng.standard_normal(7)
        base = log_marginal_single_source(ObservationSet("x", items), theta)
        for _ in range(5):
            perm = rng.permutation(items)
            value = log_marginal_single_source(ObservationSet("x", perm), theta)
            assert value == pytest.approx(base, abs=1e-12)

    def test_large_stacked_dimension_is_cheap(self):
        # n*p = 3000 > 500: must run through the compound-symmetry identity
        theta = CommonSourceParams(mu=np.zeros(3), sigma_b=np.eye(3), sigma_w=np.eye(3))
        x = ObservationSet("x", np.zeros((1000, 3)))
        value = log_marginal_single_source(x, theta)
        assert math.isfinite(value)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            log_marginal_single_source(ObservationSet("x", [[0.0, 0.0]]), cs_params())


class TestCommonSourceLikelihoods:
    def test_m1_equals_m2_for_degenerate_between(self, rng):
        theta = cs_params(mu=0.1, vb=1e-12, vw=1.4)
        x_b = ObservationSet("b", rng.standard_normal(3))
        x_c = ObservationSet("c", rng.standard_normal(2))
        m1 = log_lik_cs(x_b, x_c, theta, Model.M1)
        m2 = log_lik_cs(x_b, x_c, theta, Model.M2)
        assert m1 == pytest.approx(m2, abs=1e-9)

    def test_m1_closed_form_bivariate(self):
        x_b = ObservationSet("b", [0.0])
        x_c = ObservationSet("c", [0.0])
        value = log_lik_cs(x_b, x_c, cs_params(), Model.M1)
        assert value == pytest.approx(-math.log(2 * math.pi * math.sqrt(3.0)), abs=1e-12)

    def test_m2_is_sum_of_marginals(self):
        x_b = ObservationSet("b", [0.0])
        x_c = ObservationSet("c", [0.0])
        value = log_lik_cs(x_b, x_c, cs_params(), Model.M2)
        assert value == pytest.approx(2 * -0.5 * math.log(4.0 * math.pi), abs=1e-12)


class TestCommonSourceLr:
    def test_degenerate_between_gives_unit_lr(self):
        x_b = ObservationSet("b", [0.4])
        x_c = ObservationSet("c", [-0.3])
        assert lr_cs(x_b, x_c, cs_params(vb=1e-12)) == pytest.approx(0.0, abs=1e-9)

    def test_concordant_singletons_closed_form(self):
        x_b = ObservationSet("b", [0.0])
        x_c = ObservationSet("c", [0.0])
        lam = math.exp(lr_cs(x_b, x_c, cs_params()))
        assert lam == pytest.approx(2.0 / math.sqrt(3.0), rel=1e-8)

    def test_discordant_traces_favor_m2(self):
        x_b = ObservationSet("b", [3.0])
        x_c = ObservationSet("c", [-3.0])
        log_lam = lr_cs(x_b, x_c, cs_params())
        assert log_lam < 0.0
        oracle = (
            latent_marginal_adaptive([3.0, -3.0], 0.0, 1.0, 1.0)
            - latent_marginal_adaptive([3.0], 0.0, 1.0, 1.0)
            - latent_marginal_adaptive([-3.0], 0.0, 1.0, 1.0)
        )
        assert log_lam == pytest.approx(oracle, abs=1e-8)

    def test_symmetry_in_the_two_sets(self, rng):
        theta = cs_params(mu=0.3, vb=0.6, vw=1.1)
        for _ in range(10):
            x_b = ObservationSet("b", rng.standard_normal(rng.integers(1, 5)))
            x_c = ObservationSet("c", rng.standard_normal(rng.integers(1, 5)))
            assert lr_cs(x_b, x_c, theta) == pytest.approx(
                lr_cs(x_c, x_b, theta), abs=1e-12
            )

    def test_positive_finite_for_random_spd_params(self, rng):
        for _ in range(25):
            theta = cs_params(
                mu=rng.uniform(-3, 3), vb=rng.uniform(0.05, 4), vw=rng.uniform(0.05, 4)
            )
            x_b = ObservationSet("b", rng.standard_normal(rng.integers(1, 4)))
            x_c = ObservationSet("c", rng.standard_normal(rng.integers(1, 4)))
            assert math.isfinite(lr_cs(x_b, x_c, theta))

    def test_degenerate_limit_is_monotone(self):
        x_b = ObservationSet("b", [0.5])
        x_c = ObservationSet("c", [0.5])
        values = [abs(lr_cs(x_b, x_c, cs_params(vb=eps))) for eps in (1e-2, 1e-4, 1e-6)]
        assert values[0] > values[1] > values[2]


class TestSpecificSourceLikelihoods:
    def test_m1_standard_normal(self):
        value = log_lik_ss(ObservationSet("c", [0.0]), joint_params(), Model.M1)
        assert value == pytest.approx(STANDARD_NORMAL_AT_0, abs=1e-12)

    def test_m2_single_observation_marginal(self):
        value = log_lik_ss(ObservationSet("c", [0.0]), joint_params(), Model.M2)
        assert value == pytest.approx(-0.5 * math.log(4.0 * math.pi), abs=1e-12)

    def test_m1_diagonal_factorizes(self, rng):
        theta = JointParams(
            theta_a=CommonSourceParams(
                mu=np.zeros(2), sigma_b=np.eye(2), sigma_w=np.eye(2)
            ),
            theta_b=SpecificSourceParams(
                mu_b=np.array([0.1, -0.2]), sigma_wb=np.diag([1.5, 0.7])
            ),
        )
        items = rng.standard_normal((3, 2))
        value = log_lik_ss(ObservationSet("c", items), theta, Model.M1)
        expected = sum(
            -0.5 * (math.log(2 * math.pi * v) + (x - m) ** 2 / v)
            for row in items
            for x, m, v in zip(row, [0.1, -0.2], [1.5, 0.7])
        )
        assert value == pytest.approx(expected, abs=1e-10)


class TestSpecificSourceLr:
    def test_matched_marginals_give_unit_lr(self, rng):
        # mu_b = mu and sigma_wb = sigma_b + sigma_w: both models give the
        # same single-observation marginal
        theta = joint_params(mu=0.4, vb=0.7, vw=1.3, mu_b=0.4, vwb=2.0)
        for _ in range(5):
            x_c = ObservationSet("c", [rng.normal()])
            assert lr_ss(x_c, theta) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_ratio(self):
        lam = math.exp(lr_ss(ObservationSet("c", [0.0]), joint_params()))
        assert lam == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_far_from_subject_favors_m2(self):
        theta = joint_params(mu=3.0, mu_b=0.0)
        x_c = ObservationSet("c", [3.2])
        log_lam = lr_ss(x_c, theta)
        assert log_lam < 0.0
        oracle_m2 = latent_marginal_adaptive([3.2], 3.0, 1.0, 1.0)
        direct_m1 = -0.5 * (math.log(2 * math.pi) + 3.2**2)
        assert log_lam == pytest.approx(direct_m1 - oracle_m2, abs=1e-8)


class TestGaussianIid:
    def test_matches_scipy(self, rng):
        from scipy.stats import multivariate_normal

        mean = np.array([0.3, -0.1])
        cov = np.array([[1.2, 0.4], [0.4, 0.9]])
        items = rng.standard_normal((4, 2))
        value = log_gaussian_iid(ObservationSet("x", items), mean, cov)
        expected = multivariate_normal(mean, cov).logpdf(items).sum()
        assert value == pytest.approx(expected, abs=1e-10)


class _ConstantInFirstCoordinate:
    """log LR that ignores its first coordinate entirely."""

    def __init__(self, inner, dim):
        self.inner = inner
        self.dim = dim

    def log_lr(self, vec):
        return self.inner.log_lr(vec[1:])


class TestLrGradient:
    def test_constant_coordinate_has_zero_gradient(self):
        context = LrContext("common-source", x_c=ObservationSet("c", [0.1]), x_b=ObservationSet("b", [0.2]))
        padded = _ConstantInFirstCoordinate(context, context.dim + 1)
        theta = np.concatenate([[1.7], reparam.pack_common(cs_params())])
        grad = lr_gradient(theta, padded)
        assert abs(grad[0]) < 1e-6

    def test_total_variance_cancellation_direction(self):
        # for a single unknown observation the specific-source LR depends on
        # (vb, vw) only through their sum; the gradient must vanish along the
        # direction that leaves that sum unchanged
        theta = joint_params(mu=0.2, vb=0.8, vw=1.1, mu_b=-0.1, vwb=1.5)
        context = LrContext("specific-source", x_c=ObservationSet("c", [0.4]))
        vec = reparam.pack_joint(theta)
        grad = lr_gradient(vec, context)
        direction = np.zeros_like(vec)
        direction[1] = 1.0  # log-chol coordinate of vb
        direction[2] = -0.8 / 1.1  # compensating move in vw
        directional = float(grad @ direction)
        scale = float(np.linalg.norm(grad) * np.linalg.norm(direction))
        assert abs(directional) <= 1e-6 * max(scale, 1.0)

    @staticmethod
    def _symbolic_lr(b_val, c_val):
        """Common-source LR for singleton sets in unconstrained coordinates."""
        import sympy as sp

        mu, ub, uw = sp.symbols("mu ub uw", real=True)
        vb, vw = sp.exp(2 * ub), sp.exp(2 * uw)
        xbar = (b_val + c_val) / 2.0
        scatter = (b_val - xbar) ** 2 + (c_val - xbar) ** 2
        log_m1 = -(
            2 * sp.log(2 * sp.pi)
            + sp.log(vw)
            + sp.log(vw + 2 * vb)
            + scatter / vw
            + 2 * (xbar - mu) ** 2 / (vw + 2 * vb)
        ) / 2

        def log_single(x):
            return -(sp.log(2 * sp.pi) + sp.log(vw + vb) + (x - mu) ** 2 / (vw + vb)) / 2

        lam = sp.exp(log_m1 - log_single(b_val) - log_single(c_val))
        return lam, (mu, ub, uw)

    def test_against_symbolic_derivative(self):
        import sympy as sp

        b_val, c_val = 0.6, -0.2
        lam, symbols = self._symbolic_lr(b_val, c_val)
        mu, ub, uw = symbols
        point = {mu: 0.3, ub: math.log(0.9) / 2, uw: math.log(1.2) / 2}
        expected = np.array(
            [float(sp.diff(lam, v).evalf(subs=point)) for v in symbols]
        )
        context = LrContext(
            "common-source",
            x_c=ObservationSet("c", [c_val]),
            x_b=ObservationSet("b", [b_val]),
        )
        vec = np.array([point[mu], float(point[ub]), float(point[uw])])
        grad = lr_gradient(vec, context)
        np.testing.assert_allclose(grad, expected, rtol=1e-4)

    def test_step_halving_is_second_order(self):
        import sympy as sp

        x = 0.7
        lam, symbols = self._symbolic_lr(x, x)
        mu, ub, uw = symbols
        point = {mu: 0.0, ub: 0.0, uw: 0.0}
        exact = float(sp.diff(lam, ub).evalf(subs=point))
        context = LrContext(
            "common-source",
            x_c=ObservationSet("c", [x]),
            x_b=ObservationSet("b", [x]),
        )
        vec = np.zeros(3)
        err_h = abs(lr_gradient(vec, context, step=2e-3)[1] - exact)
        err_h2 = abs(lr_gradient(vec, context, step=1e-3)[1] - exact)
        assert 2.5 < err_h / err_h2 < 6.0
