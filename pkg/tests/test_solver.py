import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_covariance
from reml_latent.core import (
    CovarianceParams,
    CovariateBasis,
    assemble_K,
    log_likelihood,
    overlap_transform,
)
from reml_latent.errors import (
    ConstraintViolationError,
    DegenerateCovariateError,
    DegenerateSpectrumError,
    ExistenceConditionError,
)
from reml_latent.solver import (
    fit_full,
    fit_known_only,
    fit_latent_restricted,
    fit_ppca,
    reduced_spectrum,
    screen_single_covariate,
    unexplained_variance,
)


def e(n, i):
    v = np.zeros((n, 1))
    v[i, 0] = 1.0
    return v


def basis_e1(n):
    return CovariateBasis.from_covariates(e(n, 0))


def random_fit_instance(rng, n_range=(4, 15)):
    """Random covariance and basis with an admissible full fit, plus that fit."""
    while True:
        n = int(rng.integers(*n_range))
        d = int(rng.integers(0, min(4, n - 2)))
        p = int(rng.integers(0, n - d - 1))
        C = random_covariance(rng, n)
        basis = CovariateBasis.from_covariates(rng.normal(size=(n, d))) if d else \
            CovariateBasis.empty(n)
        try:
            return C, basis, fit_full(C, basis, p)
        except (ExistenceConditionError, DegenerateSpectrumError):
            continue


# -- known covariates only --------------------------------------------------


def test_known_only_hand_example():
    # C11 = 4, C22 = diag(1, 1): sigma2 = 2/2 = 1, B = (4 - 1) / 1 = 3
    res = fit_known_only(np.diag([4.0, 1.0, 1.0]), basis_e1(3))
    assert res.sigma2 == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(res.B, [[3.0]], atol=1e-14)


@pytest.mark.parametrize("c,s", [(5.0, 2.0), (1.5, 0.25), (10.0, 9.0)])
def test_known_only_two_samples(c, s):
    res = fit_known_only(np.diag([c, s]), basis_e1(2))
    assert res.sigma2 == pytest.approx(s, abs=1e-14)
    np.testing.assert_allclose(res.B, [[c - s]], atol=1e-13)


def test_known_only_isotropic_fails():
    with pytest.raises(ExistenceConditionError) as info:
        fit_known_only(np.eye(4), basis_e1(4))
    assert info.value.condition == "known-only"
    assert info.value.lambda_min == pytest.approx(1.0)
    assert info.value.sigma2 == pytest.approx(1.0)


def test_known_only_reproduces_blocks(rng):
    n, d = 7, 2
    C = random_covariance(rng, n)
    _, vecs = np.linalg.eigh(C)
    basis = CovariateBasis.from_covariates(vecs[:, -d:] @ rng.normal(size=(d, d)))
    res = fit_known_only(C, basis)
    params = CovarianceParams(res.B, np.zeros((0, 0)), np.zeros((d, 0)), res.sigma2)
    K = assemble_K(basis, np.zeros((n, 0)), params)
    blocks = basis.U1.T @ K @ basis.U1, basis.U1.T @ K @ basis.U2, basis.U2.T @ K @ basis.U2
    np.testing.assert_allclose(blocks[0], basis.U1.T @ C @ basis.U1, atol=1e-10)
    np.testing.assert_allclose(blocks[1], 0, atol=1e-10)
    np.testing.assert_allclose(blocks[2], res.sigma2 * np.eye(n - d), atol=1e-10)


def test_known_only_saturated(rng):
    C = random_covariance(rng, 4)
    Z = rng.normal(size=(4, 4))
    res = fit_known_only(C, CovariateBasis.from_covariates(Z))
    assert res.saturated and res.sigma2 == 0.0
    np.testing.assert_allclose(Z @ res.B @ Z.T, C, atol=1e-10)


# -- single covariate -------------------------------------------------------


def test_single_covariate_hand_example():
    # n=3, <u,Cu>=4, tr C=6: beta2 = 3/2*4 - 6/2 = 3, sigma2 = (6-4)/2 = 1
    res = screen_single_covariate(np.diag([4.0, 1.0, 1.0]), [1.0, 0.0, 0.0])
    assert res.beta2 == pytest.approx(3.0, abs=1e-14)
    assert res.sigma2 == pytest.approx(1.0, abs=1e-14)
    assert res.admissible


def test_single_covariate_isotropic_boundary():
    res = screen_single_covariate(np.eye(3), [1.0, 0.0, 0.0])
    assert res.beta2 == pytest.approx(0.0, abs=1e-14)
    assert res.sigma2 == pytest.approx(1.0)
    assert not res.admissible


def test_single_covariate_scaled():
    res = screen_single_covariate(np.diag([4.0, 1.0, 1.0]), [2.0, 0.0, 0.0])
    assert res.beta2 == pytest.approx(0.75, abs=1e-14)
    assert res.sigma2 == pytest.approx(1.0, abs=1e-14)


def test_single_covariate_matches_known_only(rng):
    C = random_covariance(rng, 6)
    z = np.linalg.eigh(C)[1][:, -1] * 2.5
    single = screen_single_covariate(C, z)
    full = fit_known_only(C, CovariateBasis.from_covariates(z[:, None]))
    assert single.beta2 == pytest.approx(full.B[0, 0], rel=1e-12)
    assert single.sigma2 == pytest.approx(full.sigma2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
def test_single_covariate_scale_covariance(c, seed):
    rng = np.random.default_rng(seed)
    C = random_covariance(rng, 5)
    z = rng.normal(size=5)
    a, b = screen_single_covariate(C, z), screen_single_covariate(C, c * z)
    assert b.beta2 * c * c == pytest.approx(a.beta2, rel=1e-12, abs=1e-14)
    assert a.admissible == b.admissible


def test_single_covariate_zero_vector():
    with pytest.raises(DegenerateCovariateError):
        screen_single_covariate(np.eye(3), np.zeros(3))


# -- probabilistic PCA ------------------------------------------------------


def test_ppca_p1():
    res = fit_ppca(np.diag([5.0, 3.0, 1.0, 1.0]), 1)
    np.testing.assert_allclose(res.X, e(4, 0), atol=1e-14)
    assert res.sigma2 == pytest.approx(5 / 3, abs=1e-14)
    np.testing.assert_allclose(res.A, [[10 / 3]], atol=1e-14)


def test_ppca_p2():
    res = fit_ppca(np.diag([5.0, 3.0, 1.0, 1.0]), 2)
    np.testing.assert_allclose(np.abs(res.X), np.eye(4)[:, :2], atol=1e-14)
    assert res.sigma2 == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(res.A, np.diag([4.0, 2.0]), atol=1e-14)


def test_ppca_isotropic_fails():
    with pytest.raises(DegenerateSpectrumError):
        fit_ppca(np.eye(5), 1)


def test_ppca_full_rank_allowed(rng):
    C = random_covariance(rng, 4)
    res = fit_ppca(C, 4)
    assert res.sigma2 == 0.0
    np.testing.assert_allclose(res.X @ res.A @ res.X.T, C, atol=1e-10)


def test_ppca_profile_loglik_matches_objective(rng):
    for _ in range(10):
        n = int(rng.integers(3, 12))
        C = random_covariance(rng, n)
        p = int(rng.integers(0, n - 1))
        res = fit_ppca(C, p)
        K = res.X @ res.A @ res.X.T + res.sigma2 * np.eye(n)
        assert res.profile_loglik() == pytest.approx(log_likelihood(K, C), rel=1e-10)


# -- restricted latent fit --------------------------------------------------


def test_restricted_equals_ppca_without_covariates(rng):
    C = random_covariance(rng, 6)
    a = fit_latent_restricted(C, CovariateBasis.empty(6), 2)
    b = fit_ppca(C, 2)
    np.testing.assert_allclose(a.X, b.X, atol=1e-12)
    np.testing.assert_allclose(a.A, b.A, atol=1e-12)
    assert a.sigma2 == pytest.approx(b.sigma2, rel=1e-12)


def test_restricted_hand_example(diag5):
    # C22 = diag(3, 2, 1, 1): sigma2 = 4/3, A = 3 - 4/3
    res = fit_latent_restricted(diag5, basis_e1(5), 1)
    np.testing.assert_allclose(res.X, e(5, 1), atol=1e-14)
    assert res.sigma2 == pytest.approx(4 / 3, abs=1e-14)
    np.testing.assert_allclose(res.A, [[5 / 3]], atol=1e-14)


def test_restricted_tied_reduced_spectrum():
    with pytest.raises(DegenerateSpectrumError):
        fit_latent_restricted(np.diag([4.0, 1.0, 1.0]), basis_e1(3), 1)


def test_restricted_needs_residual_dimension(diag5):
    with pytest.raises(DegenerateSpectrumError):
        fit_latent_restricted(diag5, basis_e1(5), 4)


def test_reduced_spectrum_invariants(rng):
    C = random_covariance(rng, 9)
    basis = CovariateBasis.from_covariates(rng.normal(size=(9, 3)))
    spec = reduced_spectrum(C, basis)
    W, lam = spec.eigenvectors, spec.eigenvalues
    c22 = basis.U2.T @ C @ basis.U2
    np.testing.assert_allclose(W.T @ W, np.eye(6), atol=1e-10)
    assert np.all(np.diff(lam) <= 0)
    assert np.max(np.abs(c22 @ W - W * lam)) <= 1e-8 * lam[0]
    np.testing.assert_allclose(basis.U2 @ W, spec.lifted, atol=1e-12)


# -- full fit ---------------------------------------------------------------


def test_full_hand_example(diag5):
    # B = (5 - 4/3) / 1 = 11/3; D = C12 W = 0; tr: 11/3 + 5/3 + 5 * 4/3 = 12
    fit = fit_full(diag5, basis_e1(5), 1)
    np.testing.assert_allclose(fit.params.B, [[11 / 3]], atol=1e-12)
    np.testing.assert_allclose(fit.params.D, [[0.0]], atol=1e-12)
    np.testing.assert_allclose(fit.params.A, [[5 / 3]], atol=1e-12)
    assert fit.sigma2 == pytest.approx(4 / 3, abs=1e-12)
    assert sum(fit.variance_decomposition) == pytest.approx(1.0, abs=1e-12)
    known, latent, residual = np.array(fit.variance_decomposition) * 12
    assert (known, latent, residual) == pytest.approx((11 / 3, 5 / 3, 20 / 3), abs=1e-12)


def test_full_without_covariates_is_ppca(rng):
    for _ in range(10):
        n = int(rng.integers(3, 12))
        C = random_covariance(rng, n)
        p = int(rng.integers(0, n - 1))
        fit = fit_full(C, CovariateBasis.empty(n), p)
        ref = fit_ppca(C, p)
        P1 = ref.X @ ref.X.T
        P2 = np.eye(n) - P1
        K_ref = P1 @ C @ P1 + ref.sigma2 * P2
        assert np.linalg.norm(fit.K - K_ref) <= 1e-8 * np.linalg.norm(K_ref)
        assert fit.loglik == pytest.approx(ref.profile_loglik(), rel=1e-10)


def test_full_without_latent_is_known_only(rng):
    C = random_covariance(rng, 6)
    _, vecs = np.linalg.eigh(C)
    basis = CovariateBasis.from_covariates(vecs[:, -2:])
    fit = fit_full(C, basis, 0)
    ref = fit_known_only(C, basis)
    np.testing.assert_allclose(fit.params.B, ref.B, atol=1e-12)
    assert fit.sigma2 == pytest.approx(ref.sigma2, rel=1e-12)
    assert fit.p == 0


def test_full_existence_condition(rng):
    # weakest covariate direction explains less than the residual variance
    C = np.diag([0.5, 4.0, 3.0, 1.0, 1.0])
    with pytest.raises(ExistenceConditionError) as info:
        fit_full(C, basis_e1(5), 1)
    assert info.value.condition == "full"
    assert info.value.lambda_min == pytest.approx(0.5)


def test_full_joint_condition():
    # lambda_min(C11) = 2 > sigma2 = 1 but C compressed onto span(e1, e2)
    # has eigenvalues 0.5 and 3.5
    C = np.diag([2.0, 2.0, 1.0, 1.0])
    C[0, 1] = C[1, 0] = 1.5
    with pytest.raises(ExistenceConditionError) as info:
        fit_full(C, basis_e1(4), 1)
    assert info.value.condition == "joint"
    assert info.value.lambda_min == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_full_orthogonality(seed):
    rng = np.random.default_rng(seed)
    _, basis, fit = random_fit_instance(rng)
    X, Z = fit.latent, basis.Z
    zscale = max(1.0, np.abs(Z).max(initial=0.0))
    assert np.abs(X.T @ Z).max(initial=0.0) < 1e-10 * zscale
    assert np.abs(X.T @ X - np.eye(fit.p)).max(initial=0.0) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_full_trace_identity(seed):
    rng = np.random.default_rng(seed)
    C, basis, fit = random_fit_instance(rng)
    Z, X, P = basis.Z, fit.latent, fit.params
    total = np.trace(Z @ P.B @ Z.T) + np.trace(X @ P.A @ X.T) + fit.n * fit.sigma2
    assert abs(np.trace(C) - total) < 1e-8 * np.trace(C)
    assert abs(np.trace(fit.K) - np.trace(C)) < 1e-8 * np.trace(C)


def test_full_k_reconstructs(rng):
    C, basis, fit = random_fit_instance(rng)
    np.testing.assert_allclose(fit.K, assemble_K(basis, fit.latent, fit.params), atol=0)


@pytest.mark.parametrize("d", [1, 3])
def test_shift_property(rng, d):
    n = 12
    C = random_covariance(rng, n, m=40)
    vals, vecs = np.linalg.eigh(C)
    top = vecs[:, ::-1][:, :d]
    basis = CovariateBasis.from_covariates(top)
    for p in range(1, 5):
        a = fit_full(C, basis, p)
        b = fit_ppca(C, d + p)
        assert a.loglik == pytest.approx(b.profile_loglik(), rel=1e-8)
        cos = np.abs(np.sum(a.latent * b.X[:, d:], axis=0))
        np.testing.assert_allclose(cos, 1.0, atol=1e-8)


def test_residual_variance_optimality(rng):
    for _ in range(5):
        C, basis, fit = random_fit_instance(rng)
        r = basis.n - basis.d
        best = fit.sigma2
        for _ in range(200):
            W, _ = np.linalg.qr(rng.normal(size=(r, fit.p)))
            X = basis.U2 @ W
            assert unexplained_variance(C, basis, X) >= best - 1e-12


def test_reparameterization_equivalence(rng):
    while True:
        C, basis, fit = random_fit_instance(rng)
        if basis.d and fit.p:
            break
    M = rng.normal(size=(basis.d, fit.p))
    X2, params2 = overlap_transform(basis, fit.latent, fit.params, M)
    K2 = assemble_K(basis, X2, params2)
    assert np.abs(K2 - fit.K).max() <= 1e-10 * np.abs(fit.K).max()


# -- unexplained variance ---------------------------------------------------


def test_unexplained_variance_at_optimum(diag5):
    fit = fit_full(diag5, basis_e1(5), 1)
    assert unexplained_variance(diag5, basis_e1(5), fit.latent) == pytest.approx(4 / 3)


def test_unexplained_variance_other_axis(diag5):
    # X = e3: (tr C22 - 2) / 3 = (7 - 2) / 3
    assert unexplained_variance(diag5, basis_e1(5), e(5, 2)) == pytest.approx(5 / 3)


def test_unexplained_variance_axis_extremes(diag5):
    values = [unexplained_variance(diag5, basis_e1(5), e(5, i)) for i in range(1, 5)]
    assert max(values) == pytest.approx(unexplained_variance(diag5, basis_e1(5), e(5, 4)))
    assert min(values) == pytest.approx(4 / 3)


def test_unexplained_variance_constraints(diag5):
    with pytest.raises(ConstraintViolationError):
        unexplained_variance(diag5, basis_e1(5), 2 * e(5, 1))
    with pytest.raises(ConstraintViolationError):
        unexplained_variance(diag5, basis_e1(5), e(5, 0))
    with pytest.raises(ConstraintViolationError):
        unexplained_variance(diag5, basis_e1(5), np.eye(5)[:, 1:])
