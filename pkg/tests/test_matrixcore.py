import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krylov_reservoir.matrixcore import (
    LinalgError,
    NotHermitianError,
    NotUnitaryError,
    eig_hermitian,
    eigphases_unitary,
    exp_hermitian_to_unitary,
    is_hermitian,
    is_unitary,
    kron,
    log_unitary,
)

from .conftest import random_hermitian, random_unitary

X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def taylor_expm(a, terms=50):
    """Scaling-and-squaring Taylor series, independent of any eigensolver."""
    norm = np.abs(a).sum(axis=1).max()
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    b = a / 2**s
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


class TestKron:
    def test_identity(self):
        assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_z_identity(self):
        assert np.array_equal(kron(Z, np.eye(2)), np.diag([1, 1, -1, -1]))

    def test_definition_oracle(self, rng):
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        ref = np.zeros((9, 9), dtype=complex)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    for l in range(3):
                        ref[3 * i + k, 3 * j + l] = a[i, j] * b[k, l]
        # vectorized and scalar complex products can differ in the last bit
        assert np.abs(kron(a, b) - ref).max() <= 1e-15

    def test_associative(self, rng):
        a, b, c = (rng.integers(-3, 4, size=(2, 2)).astype(complex) for _ in range(3))
        assert np.array_equal(kron(kron(a, b), c), kron(a, kron(b, c)))


class TestEigHermitian:
    def test_diagonal(self):
        assert np.allclose(eig_hermitian(np.diag([3.0, 1.0, 2.0])).values, [1, 2, 3])

    def test_pauli_x(self):
        assert np.allclose(eig_hermitian(X).values, [-1, 1])

    def test_residual(self, rng):
        h = random_hermitian(rng, 64)
        dec = eig_hermitian(h)
        assert np.abs(h @ dec.vectors - dec.vectors * dec.values).max() <= 1e-9
        assert np.abs(dec.vectors.conj().T @ dec.vectors - np.eye(64)).max() <= 1e-10
        assert np.all(np.diff(dec.values) >= 0)
        assert np.abs(dec.reconstruct() - h).max() <= 1e-9 * np.abs(h).max()

    def test_rejects_non_hermitian(self):
        with pytest.raises(NotHermitianError, match="1.000e"):
            eig_hermitian(np.array([[0, 1.0], [0, 0]]))

    def test_conjugation_invariance(self, rng):
        h = random_hermitian(rng, 20)
        u = random_unitary(rng, 20)
        assert np.allclose(eig_hermitian(u @ h @ u.conj().T).values, eig_hermitian(h).values, atol=1e-10)


class TestEigphases:
    def test_identity(self):
        assert np.allclose(eigphases_unitary(np.eye(5)).values, 0)

    def test_diagonal(self):
        u = np.diag(np.exp(1j * np.array([np.pi / 3, -np.pi / 4])))
        assert np.allclose(eigphases_unitary(u).values, [-np.pi / 4, np.pi / 3])

    def test_minus_one_maps_to_plus_pi(self):
        assert eigphases_unitary(-np.eye(2)).values.tolist() == [np.pi, np.pi]

    def test_residual(self, rng):
        u = random_unitary(rng, 100)
        dec = eigphases_unitary(u)
        assert np.abs(u @ dec.vectors - dec.vectors * np.exp(1j * dec.values)).max() <= 1e-8
        assert np.abs(dec.vectors.conj().T @ dec.vectors - np.eye(100)).max() <= 1e-10
        assert np.all((dec.values > -np.pi) & (dec.values <= np.pi))

    def test_rejects_non_unitary(self):
        with pytest.raises(NotUnitaryError):
            eigphases_unitary(2 * np.eye(3))

    def test_predicates(self, rng):
        assert is_unitary(random_unitary(rng, 8))
        assert not is_unitary(random_hermitian(rng, 8))
        assert is_hermitian(random_hermitian(rng, 8))


class TestLogUnitary:
    def test_identity(self):
        assert np.array_equal(log_unitary(np.eye(4), 2.5), np.zeros((4, 4)))

    def test_forward_exponential_oracle(self):
        h = np.diag([0.3, -0.2])
        t = 1.7
        u = np.diag(np.exp(1j * np.diag(h) * t))
        assert np.abs(log_unitary(u, t) - h).max() <= 1e-10

    def test_branch_edge(self):
        heff = log_unitary(np.diag([np.exp(1j * np.pi), 1.0]), time=2.0, hbar=0.5)
        assert eig_hermitian(heff).values[-1] == pytest.approx(0.25 * np.pi, abs=1e-15)

    def test_rejects_bad_time(self):
        with pytest.raises(LinalgError):
            log_unitary(np.eye(2), time=0.0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 24), t=st.floats(0.1, 10), hbar=st.floats(0.1, 3))
    def test_round_trip(self, seed, dim, t, hbar):
        u = random_unitary(np.random.default_rng(seed), dim)
        heff = log_unitary(u, t, hbar)
        assert np.abs(heff - heff.conj().T).max() <= 1e-9
        assert np.abs(exp_hermitian_to_unitary(heff, t, hbar, +1) - u).max() <= 1e-9


class TestExp:
    def test_zero(self):
        assert np.allclose(exp_hermitian_to_unitary(np.zeros((3, 3)), 1.0), np.eye(3))

    def test_pauli_rotation(self):
        assert np.allclose(exp_hermitian_to_unitary(Z, np.pi), -np.eye(2), atol=1e-15)

    def test_taylor_oracle(self, rng):
        h = random_hermitian(rng, 32)
        for sign in (1, -1):
            ref = taylor_expm(sign * 1j * 0.7 * h / 1.3)
            assert np.abs(exp_hermitian_to_unitary(h, 0.7, 1.3, sign) - ref).max() <= 1e-9

    def test_rejects_bad_sign(self):
        with pytest.raises(ValueError):
            exp_hermitian_to_unitary(Z, 1.0, sign=2)
