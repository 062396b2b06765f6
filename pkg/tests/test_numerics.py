import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sourceseek.numerics import (
    CovarianceSingularError,
    mahalanobis_norm,
    spd_inverse,
    weighted_l1_norm,
    weighted_l2_norm,
    weighted_linf_norm,
)


def random_spd(rng, n, cond=1e3):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.exp(rng.uniform(0, math.log(cond), n))
    m = (q * eig) @ q.T
    return 0.5 * (m + m.T)


def test_l2_examples():
    assert weighted_l2_norm(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0
    assert weighted_l2_norm(np.array([1.0, 0.0]), np.array([4.0, 1.0])) == 2.0


def test_linf_examples():
    assert weighted_linf_norm(np.array([1.0, -2.0]), np.array([3.0, 1.0])) == 3.0
    assert weighted_linf_norm(np.zeros(2), np.array([3.0, 1.0])) == 0.0


def test_l1_examples():
    assert weighted_l1_norm(np.array([1.0, 1.0]), np.ones(2)) == 2.0
    assert weighted_l1_norm(np.array([-1.0, 2.0]), np.array([2.0, 3.0])) == 8.0


def test_norms_reject_bad_input():
    with pytest.raises(ValueError):
        weighted_l2_norm(np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        weighted_l2_norm(np.ones(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        weighted_linf_norm(np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        weighted_l1_norm(np.ones(3), np.ones(2))


def test_l2_against_exact_rational_sum():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        x = rng.standard_normal(n) * 10 ** rng.uniform(-3, 3)
        d = rng.uniform(0.01, 100, n)
        exact = sum(Fraction(float(di)) * Fraction(float(xi)) ** 2 for xi, di in zip(x, d))
        ref = math.sqrt(float(exact))
        assert weighted_l2_norm(x, d) == pytest.approx(ref, rel=1e-12)


def test_linf_l1_against_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        x, d = rng.standard_normal(n), rng.uniform(0.1, 5, n)
        best = 0.0
        total = Fraction(0)
        for i in range(n):
            best = max(best, d[i] * abs(x[i]))
            total += Fraction(float(d[i])) * abs(Fraction(float(x[i])))
        assert weighted_linf_norm(x, d) == best
        assert weighted_l1_norm(x, d) == pytest.approx(float(total), rel=1e-12)


def test_mahalanobis_examples():
    x = np.array([3.0, 4.0])
    assert mahalanobis_norm(x, np.eye(2)) == pytest.approx(5.0)
    m = np.array([[9.0, 0.0], [0.0, 2.0]])
    assert mahalanobis_norm(np.array([1.0, 0.0]), m) == pytest.approx(3.0)


def test_mahalanobis_against_cholesky_factor():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(1, 20))
        lower = np.tril(rng.standard_normal((n, n)))
        m = lower @ lower.T
        x = rng.standard_normal(n)
        assert mahalanobis_norm(x, m) == pytest.approx(np.linalg.norm(lower.T @ x), rel=1e-10)


def test_mahalanobis_rejects_asymmetric():
    with pytest.raises(ValueError):
        mahalanobis_norm(np.ones(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_mahalanobis_clamps_round_off():
    m = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert mahalanobis_norm(np.array([1.0, 1.0]), m) == 0.0


def test_spd_inverse_examples():
    np.testing.assert_array_equal(spd_inverse(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(spd_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_spd_inverse_residual_and_involution():
    rng = np.random.default_rng(4)
    for n in (1, 5, 20, 50):
        m = random_spd(rng, n)
        inv = spd_inverse(m)
        np.testing.assert_array_equal(inv, inv.T)
        np.testing.assert_allclose(m @ inv, np.eye(n), atol=1e-8)
        np.testing.assert_allclose(spd_inverse(inv), m, rtol=1e-8, atol=1e-8 * np.abs(m).max())


def test_spd_inverse_singular_carries_step():
    with pytest.raises(CovarianceSingularError) as err:
        spd_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]), step=7)
    assert err.value.step == 7
    assert "step 7" in str(err.value)
    with pytest.raises(CovarianceSingularError):
        spd_inverse(np.diag([1.0, -1.0]))
    with pytest.raises(CovarianceSingularError):
        spd_inverse(np.diag([1.0, 1e-14]))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, n, elements=st.floats(1e-3, 1e3)))))
def test_norm_ordering_property(pair):
    x, d = pair
    n = x.size
    # diag(M)^2 weighting bounds both the max and the sum
    l2sq = weighted_l2_norm(x, d * d)
    assert weighted_linf_norm(x, d) <= l2sq * (1 + 1e-12) + 1e-12
    assert weighted_l1_norm(x, d) <= math.sqrt(n) * l2sq * (1 + 1e-12) + 1e-12


def test_holder_duality():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        d = rng.uniform(0.01, 10, n)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        assert abs(x @ y) <= weighted_l1_norm(x, d) * weighted_linf_norm(y, 1 / d) * (1 + 1e-12)
