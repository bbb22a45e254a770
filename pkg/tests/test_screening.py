import numpy as np
import pytest

from conftest import random_covariance
from reml_latent.errors import RankError
from reml_latent.screening import compute_pcs, screen_candidates


def fixture_candidates():
    e1, e2 = np.eye(3)[:, 0], np.eye(3)[:, 1]
    return np.column_stack([e1, 2 * e1, e2]), ("e1", "2e1", "e2")


def test_screen_hand_fixture():
    # beta2(e1) = 3, beta2(2 e1) = 3/4, e2: <u,Cu> = 1 < tr C / n = 2 so inadmissible
    # (its formula value is 3/2 * 1 - 3 = -1.5)
    C = np.diag([4.0, 1.0, 1.0])
    cands, ids = fixture_candidates()
    res = screen_candidates(C, cands, theta=0.0, candidate_ids=ids)
    assert res.retained == ("e1",)
    recs = {r.candidate_id: r for r in res.records}
    assert recs["e1"].beta2 == pytest.approx(3.0)
    assert recs["2e1"].beta2 == pytest.approx(0.75)
    assert recs["2e1"].reason == "linearly dependent"
    assert not recs["e2"].admissible
    assert recs["e2"].beta2 == pytest.approx(-1.5)
    assert res.basis.d == 1


def test_screen_threshold_rejects_all():
    C = np.diag([4.0, 1.0, 1.0])
    cands, ids = fixture_candidates()
    res = screen_candidates(C, cands, theta=3.0 / 6.0 + 1e-9, candidate_ids=ids)
    assert res.retained == ()
    assert res.basis.d == 0


def test_screen_top_eigenvectors(rng):
    C = random_covariance(rng, 8)
    vals, vecs = np.linalg.eigh(C)
    cands = vecs[:, [-2, -1]]  # second then first
    res = screen_candidates(C, cands, theta=0.0, candidate_ids=("second", "first"))
    assert res.retained == ("first", "second")
    betas = [r.beta2 for r in res.records]
    n, tr = 8, np.trace(C)
    expected = [n / (n - 1) * vals[-2] - tr / (n - 1), n / (n - 1) * vals[-1] - tr / (n - 1)]
    np.testing.assert_allclose(betas, expected, rtol=1e-12)


def test_screen_zero_column_is_recorded():
    C = np.diag([4.0, 1.0, 1.0])
    cands = np.column_stack([np.zeros(3), np.eye(3)[:, 0]])
    res = screen_candidates(C, cands)
    assert res.records[0].reason == "zero covariate"
    assert res.retained == ("candidate_2",)


def test_screen_empty_candidates():
    res = screen_candidates(np.eye(3), np.zeros((3, 0)))
    assert res.records == () and res.retained == ()


def test_screen_retained_invariants(rng):
    C = random_covariance(rng, 10)
    cands = rng.normal(size=(10, 6))
    theta = 0.01
    res = screen_candidates(C, cands, theta=theta)
    recs = {r.candidate_id: r for r in res.records}
    betas = [recs[c].beta2 for c in res.retained]
    assert betas == sorted(betas, reverse=True)
    assert all(recs[c].admissible and recs[c].beta2 >= theta * np.trace(C) for c in res.retained)
    s = np.linalg.svd(res.Z, compute_uv=False)
    assert s[-1] > 1e-10 * s[0]


def test_screen_idempotent(rng):
    C = random_covariance(rng, 10)
    res = screen_candidates(C, rng.normal(size=(10, 6)), theta=0.0)
    again = screen_candidates(C, res.Z, theta=0.0, candidate_ids=res.retained)
    assert set(again.retained) == set(res.retained)


def test_screen_order_independent(rng):
    C = random_covariance(rng, 10)
    cands = rng.normal(size=(10, 6))
    ids = tuple(f"c{j}" for j in range(6))
    perm = rng.permutation(6)
    a = screen_candidates(C, cands, candidate_ids=ids)
    b = screen_candidates(C, cands[:, perm], candidate_ids=tuple(ids[j] for j in perm))
    assert a.retained == b.retained


def test_screen_ties_keep_input_order():
    C = np.diag([4.0, 4.0, 1.0, 1.0])
    cands = np.eye(4)[:, [1, 0]]
    res = screen_candidates(C, cands, candidate_ids=("b", "a"))
    assert res.retained == ("b", "a")


# -- principal components ---------------------------------------------------


def test_pcs_rank_one():
    u = np.array([1.0, -2.0, 1.0])  # already mean-zero across... rows are samples
    raw = np.outer(u, [1.0, -1.0, 2.0, -2.0])
    pcs = compute_pcs(raw, 1)
    expected = u / np.linalg.norm(u)
    expected *= np.sign(expected[np.argmax(np.abs(expected))])
    np.testing.assert_allclose(pcs[:, 0], expected, atol=1e-12)


def test_pcs_orthogonal_columns():
    # rows centered, columns orthogonal with norms 3 and 1
    a = np.array([1.0, -1.0, 1.0, -1.0])
    b = np.array([1.0, 1.0, -1.0, -1.0])
    raw = np.column_stack([b, 3 * a, -b, -3 * a])  # each row sums to zero
    pcs = compute_pcs(raw, 2)
    np.testing.assert_allclose(np.abs(pcs[:, 0]), np.abs(a) / 2, atol=1e-12)
    np.testing.assert_allclose(np.abs(pcs[:, 1]), np.abs(b) / 2, atol=1e-12)
    np.testing.assert_allclose(np.abs(pcs[:, 0] @ a), 2.0, atol=1e-12)
    np.testing.assert_allclose(np.abs(pcs[:, 1] @ b), 2.0, atol=1e-12)


def test_pcs_rank_bound():
    raw = np.outer([1.0, -1.0, 0.0], [1.0, -1.0])
    with pytest.raises(RankError) as info:
        compute_pcs(raw, 2)
    assert info.value.achievable == 1


def test_pcs_orthonormal_and_permutation_invariant(rng):
    raw = rng.normal(size=(12, 30))
    raw -= raw.mean(axis=1, keepdims=True)
    pcs = compute_pcs(raw, 4)
    np.testing.assert_allclose(pcs.T @ pcs, np.eye(4), atol=1e-10)
    again = compute_pcs(raw[:, rng.permutation(30)], 4)
    np.testing.assert_allclose(np.abs(again.T @ pcs), np.eye(4), atol=1e-10)
    np.testing.assert_allclose(again, pcs, atol=1e-10)
