"""Sylvester matrices, sign vectors, and the matrix-free recurrent weight."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ornnkit.hadamard import (
    InvalidOrderError,
    RecurrentParam,
    SignVector,
    apply_w,
    apply_w_transpose,
    binarize,
    fwht,
    kronecker,
    make_recurrent,
    materialize,
    switch_columns,
    sylvester,
)


def random_signs(rng, d):
    return SignVector.from_signs(rng.choice([-1, 1], size=d).astype(np.int8))


class TestSylvester:
    def test_k1(self):
        assert np.array_equal(sylvester(1), [[1, 1], [1, -1]])

    def test_k2(self):
        expected = [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]]
        assert np.array_equal(sylvester(2), expected)

    @pytest.mark.parametrize("k", range(1, 11))
    def test_gram_identity_exact(self, k):
        h = sylvester(k)
        assert np.array_equal(h @ h.T, (1 << k) * np.eye(1 << k, dtype=np.int64))

    @pytest.mark.parametrize("k", range(1, 11))
    def test_symmetric(self, k):
        h = sylvester(k)
        assert np.array_equal(h, h.T)

    def test_recursive_doubling(self):
        for k in range(2, 8):
            h, prev = sylvester(k), sylvester(k - 1)
            n = 1 << (k - 1)
            assert np.array_equal(h[:n, :n], prev)
            assert np.array_equal(h[:n, n:], prev)
            assert np.array_equal(h[n:, :n], prev)
            assert np.array_equal(h[n:, n:], -prev)

    @pytest.mark.parametrize("k", [0, -3, 31])
    def test_invalid_order(self, k):
        with pytest.raises(InvalidOrderError):
            sylvester(k)


class TestKronecker:
    def test_identity_blocks(self):
        h = sylvester(1)
        got = kronecker(np.eye(2), h)
        expected = np.zeros((4, 4))
        expected[:2, :2] = h
        expected[2:, 2:] = h
        assert np.array_equal(got, expected)

    def test_scalar(self):
        b = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(kronecker(np.array([[2.0]]), b), 2 * b)

    def test_preserves_row_orthogonality(self):
        rng = np.random.default_rng(5)
        a = np.linalg.qr(rng.normal(size=(4, 4)))[0]
        b = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        gram = kronecker(a, b) @ kronecker(a, b).T
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-12


class TestFwht:
    @pytest.mark.parametrize("k", range(1, 9))
    def test_matches_dense(self, k):
        rng = np.random.default_rng(k)
        x = rng.normal(size=1 << k)
        assert np.allclose(fwht(x), sylvester(k) @ x, rtol=0, atol=1e-10)

    def test_batched(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 5, 16))
        expected = x @ sylvester(4).astype(float)  # symmetric, so H x == x H
        assert np.allclose(fwht(x), expected)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            fwht(np.zeros(6))


class TestSignVector:
    def test_binarize_zero_is_positive(self):
        assert np.array_equal(binarize(np.array([0.0, -0.0, 1e-300, -1e-300])),
                              [1, 1, 1, -1])

    def test_from_latent(self):
        sv = SignVector.from_latent(np.array([0.3, -0.2, 0.0]))
        assert np.array_equal(sv.signs, [1, -1, 1])

    def test_inconsistent_pair_rejected(self):
        with pytest.raises(ValueError):
            SignVector(np.array([1, 1], dtype=np.int8), np.array([0.5, -0.5]))

    def test_bad_entries_rejected(self):
        with pytest.raises(ValueError):
            SignVector.from_signs(np.array([1, 0, -1], dtype=np.int8))

    @given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=100))
    def test_pack_roundtrip(self, entries):
        sv = SignVector.from_signs(np.array(entries, dtype=np.int8))
        back = SignVector.unpack(sv.pack(), len(entries))
        assert np.array_equal(back.signs, sv.signs)

    def test_pack_bit_layout(self):
        # +1 -> bit 1, -1 -> bit 0, little-endian within each byte.
        sv = SignVector.from_signs(np.array([1, -1, -1, 1, -1, -1, -1, -1, 1],
                                            dtype=np.int8))
        assert sv.pack() == bytes([0b00001001, 0b00000001])


class TestRecurrentParam:
    def test_binary_all_ones_is_scaled_sylvester(self):
        sv = SignVector.from_signs(np.ones(4, dtype=np.int8))
        w = materialize(make_recurrent("binary", 2, 1, sv))
        assert np.allclose(w, 0.5 * sylvester(2))

    def test_binary_row_switch(self):
        u = np.array([1, -1, 1, -1], dtype=np.int8)
        param = make_recurrent("binary", 2, 1, SignVector.from_signs(u))
        w = materialize(param)
        base = 0.5 * sylvester(2).astype(float)
        assert np.allclose(w[0], base[0]) and np.allclose(w[2], base[2])
        assert np.allclose(w[1], -base[1]) and np.allclose(w[3], -base[3])
        assert np.allclose(w @ w.T, np.eye(4), rtol=0, atol=1e-15)

    def test_block_ternary_structure(self):
        sv = SignVector.from_signs(np.ones(4, dtype=np.int8))
        w = materialize(make_recurrent("block-ternary", 1, 2, sv))
        h = sylvester(1) / np.sqrt(2)
        assert np.allclose(w[:2, :2], h) and np.allclose(w[2:, 2:], h)
        assert np.count_nonzero(w) == 8  # fraction 1/2

    def test_nonzero_count(self):
        rng = np.random.default_rng(3)
        for k, q in [(2, 1), (2, 3), (3, 4), (1, 8)]:
            d_h = q * (1 << k)
            kind = "binary" if q == 1 else "block-ternary"
            w = materialize(make_recurrent(kind, k, q, random_signs(rng, d_h)))
            assert np.count_nonzero(w) == d_h * (1 << k)

    def test_scale(self):
        sv = SignVector.from_signs(np.ones(8, dtype=np.int8))
        assert make_recurrent("binary", 3, 1, sv).scale == pytest.approx(1 / np.sqrt(8))
        assert make_recurrent("block-ternary", 2, 2, sv).scale == pytest.approx(0.5)

    def test_binary_requires_q1(self):
        sv = SignVector.from_signs(np.ones(8, dtype=np.int8))
        with pytest.raises(ValueError):
            RecurrentParam("binary", 2, 2, sv)

    def test_length_mismatch(self):
        sv = SignVector.from_signs(np.ones(4, dtype=np.int8))
        with pytest.raises(ValueError):
            make_recurrent("binary", 3, 1, sv)

    def test_injectivity_on_rows(self):
        rng = np.random.default_rng(11)
        u1 = random_signs(rng, 16)
        flipped = u1.signs.copy()
        flipped[5] *= -1
        u2 = SignVector.from_signs(flipped)
        w1 = materialize(make_recurrent("binary", 4, 1, u1))
        w2 = materialize(make_recurrent("binary", 4, 1, u2))
        assert np.any(w1[5] != w2[5])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_orthogonality_random(self, k, q, seed):
        d_h = q * (1 << k)
        rng = np.random.default_rng(seed)
        kind = "binary" if q == 1 else "block-ternary"
        w = materialize(make_recurrent(kind, k, q, random_signs(rng, d_h)))
        assert np.max(np.abs(w @ w.T - np.eye(d_h))) < 1e-12

    def test_dense_cap(self):
        sv = SignVector.from_signs(np.ones(8192, dtype=np.int8))
        with pytest.raises(ValueError):
            materialize(make_recurrent("binary", 13, 1, sv))


class TestApplyW:
    def test_first_column(self):
        sv = SignVector.from_signs(np.ones(2, dtype=np.int8))
        param = make_recurrent("binary", 1, 1, sv)
        assert np.allclose(apply_w(param, np.array([1.0, 0.0])),
                           np.array([1, 1]) / np.sqrt(2))

    def test_transpose_first_row(self):
        sv = SignVector.from_signs(np.array([1, -1], dtype=np.int8))
        param = make_recurrent("binary", 1, 1, sv)
        got = apply_w_transpose(param, np.array([1.0, 0.0]))
        # First column of W^T is the first row of W, i.e. +1 * (1, 1)/sqrt(2).
        assert np.allclose(got, materialize(param).T @ np.array([1.0, 0.0]))
        assert np.allclose(got, np.array([1, 1]) / np.sqrt(2))

    @pytest.mark.parametrize("k,q", [(1, 1), (3, 1), (5, 1), (6, 1), (2, 3), (5, 2)])
    def test_matches_dense(self, k, q):
        rng = np.random.default_rng(k * 10 + q)
        d_h = q * (1 << k)
        kind = "binary" if q == 1 else "block-ternary"
        param = make_recurrent(kind, k, q, random_signs(rng, d_h))
        w = materialize(param)
        v = rng.normal(size=d_h)
        assert np.allclose(apply_w(param, v), w @ v, rtol=1e-12, atol=1e-12)
        assert np.allclose(apply_w_transpose(param, v), w.T @ v,
                           rtol=1e-12, atol=1e-12)

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(1)
        param = make_recurrent("binary", 6, 1, random_signs(rng, 64))
        v = rng.normal(size=64)
        assert np.allclose(apply_w_transpose(param, apply_w(param, v)), v,
                           rtol=1e-12, atol=1e-12)

    def test_norm_preserved(self):
        rng = np.random.default_rng(2)
        param = make_recurrent("block-ternary", 4, 4, random_signs(rng, 64))
        v = rng.normal(size=64)
        assert np.linalg.norm(apply_w(param, v)) == pytest.approx(
            np.linalg.norm(v), rel=1e-12)

    def test_linear(self):
        rng = np.random.default_rng(4)
        param = make_recurrent("binary", 5, 1, random_signs(rng, 32))
        x, y = rng.normal(size=32), rng.normal(size=32)
        lhs = apply_w(param, 2.5 * x - 0.7 * y)
        rhs = 2.5 * apply_w(param, x) - 0.7 * apply_w(param, y)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        sv = SignVector.from_signs(np.ones(4, dtype=np.int8))
        with pytest.raises(ValueError):
            apply_w(make_recurrent("binary", 2, 1, sv), np.zeros(5))


class TestSwitchColumns:
    def test_all_positive_is_identity(self):
        rng = np.random.default_rng(6)
        param = make_recurrent("binary", 3, 1, random_signs(rng, 8))
        switched = switch_columns(
            param, SignVector.from_signs(np.ones(8, dtype=np.int8)))
        assert np.array_equal(materialize(param), materialize(switched))

    def test_column_vs_row_switching(self):
        rng = np.random.default_rng(7)
        u = random_signs(rng, 8)
        ones = SignVector.from_signs(np.ones(8, dtype=np.int8))
        row = materialize(make_recurrent("binary", 3, 1, u))
        col = materialize(switch_columns(make_recurrent("binary", 3, 1, ones), u))
        assert not np.allclose(row, col)
        for w in (row, col):
            assert np.max(np.abs(w @ w.T - np.eye(8))) < 1e-12

    def test_matrix_free_agrees(self):
        rng = np.random.default_rng(8)
        param = switch_columns(make_recurrent("binary", 5, 1, random_signs(rng, 32)),
                               random_signs(rng, 32))
        w = materialize(param)
        v = rng.normal(size=32)
        assert np.allclose(apply_w(param, v), w @ v, rtol=1e-12, atol=1e-12)
        assert np.allclose(apply_w_transpose(param, v), w.T @ v,
                           rtol=1e-12, atol=1e-12)
