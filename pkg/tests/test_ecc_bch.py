import hashlib
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from b2p.ecc_bch import (
    PRIMITIVE_POLYS,
    bch_decode,
    bch_encode,
    bits_to_int,
    commit,
    field,
    finalize_key,
    int_to_bits,
    make_code,
    pack_bits,
    recover,
    syndromes,
    unpack_bits,
    valid_k,
)
from b2p.errors import ParameterError


def gf2_mod(a: int, g: int) -> int:
    dg = g.bit_length()
    while a.bit_length() >= dg:
        a ^= g << (a.bit_length() - dg)
    return a


def all_messages(k):
    return [np.array(bits, dtype=np.uint8) for bits in itertools.product((0, 1), repeat=k)]


def flip(word, positions):
    out = word.copy()
    out[list(positions)] ^= 1
    return out


def test_primitive_polynomials():
    assert PRIMITIVE_POLYS[4] == 0b10011
    assert PRIMITIVE_POLYS[7] == 0b10001001
    assert PRIMITIVE_POLYS[8] == 0b100011101


def test_field_tables_consistent():
    gf = field(4)
    assert sorted(gf.exp[:15].tolist()) == list(range(1, 16))
    for a in range(1, 16):
        for b in range(1, 16):
            assert gf.div(gf.mul(a, b), b) == a


@pytest.mark.parametrize("n,k,t,gen", [
    (15, 7, 2, 0b111010001),
    (15, 5, 3, 0b10100110111),
    (15, 11, 1, 0b10011),
])
def test_textbook_generators(n, k, t, gen):
    c = make_code(n, k)
    assert (c.t, c.generator) == (t, gen)


@pytest.mark.parametrize("n,k,t", [(255, 128, 16), (15, 5, 3), (127, 64, 10), (255, 115, 21), (63, 30, 6)])
def test_designed_t(n, k, t):
    assert make_code(n, k).t == t


@pytest.mark.parametrize("n,k", [(15, 5), (15, 7), (127, 64), (255, 115), (255, 128), (255, 131), (63, 30)])
def test_code_invariants(n, k):
    c = make_code(n, k)
    assert c.n == 2**c.m - 1
    assert n - k <= c.m * c.t
    assert c.t < 2 ** (c.m - 1)
    assert c.generator.bit_length() - 1 == n - k
    assert gf2_mod((1 << n) | 1, c.generator) == 0


def test_valid_k_lists_narrow_sense_pairs():
    assert valid_k(15) == [1, 5, 7, 11]
    assert make_code(15, 1).t == 7
    assert 115 in valid_k(255) and 128 not in valid_k(255)


@pytest.mark.parametrize("n,k", [(100, 50), (255, 250), (15, 15), (15, 0)])
def test_invalid_pairs(n, k):
    with pytest.raises(ParameterError):
        make_code(n, k)


def test_invalid_pair_lists_nearest():
    with pytest.raises(ParameterError, match=r"nearest valid K: \[239, 247\]|nearest valid K: \[231, 239, 247\]"):
        make_code(255, 250)


def test_15_5_weight_distribution():
    c = make_code(15, 5)
    weights = sorted(int(bch_encode(c, m).sum()) for m in all_messages(5))
    assert all(w == 0 or w >= 7 for w in weights)
    assert weights.count(0) == 1 and weights.count(7) == 15 and weights.count(8) == 15 and weights.count(15) == 1


@pytest.mark.parametrize("n,k", [(15, 5), (15, 7), (127, 64), (255, 115)])
def test_encoder_systematic_and_divisible(n, k, rng):
    c = make_code(n, k)
    for _ in range(20):
        m = rng.integers(0, 2, k, dtype=np.uint8)
        cw = bch_encode(c, m)
        np.testing.assert_array_equal(cw[n - k:], m)
        assert gf2_mod(bits_to_int(cw), c.generator) == 0
        assert not syndromes(c, cw).any()
    assert not bch_encode(c, np.zeros(k, np.uint8)).any()


@given(st.data())
def test_encoder_linear(data):
    c = make_code(127, 64)
    a = np.array(data.draw(st.lists(st.integers(0, 1), min_size=64, max_size=64)), np.uint8)
    b = np.array(data.draw(st.lists(st.integers(0, 1), min_size=64, max_size=64)), np.uint8)
    np.testing.assert_array_equal(bch_encode(c, a) ^ bch_encode(c, b), bch_encode(c, a ^ b))


def test_encoder_rejects_wrong_length():
    with pytest.raises(ParameterError):
        bch_encode(make_code(15, 5), np.zeros(6, np.uint8))


def test_15_5_four_flips_never_decode_beyond_distance_3():
    c = make_code(15, 5)
    book = {tuple(m): bch_encode(c, m) for m in all_messages(5)}
    zero = np.zeros(15, np.uint8)
    for pos in itertools.combinations(range(15), 4):
        out = bch_decode(c, flip(zero, pos))
        if out is not None:
            assert int(np.sum(book[tuple(out)] != flip(zero, pos))) <= 3
    # Some weight-4 pattern must be uncorrectable since d = 7.
    outs = [bch_decode(c, flip(zero, p)) for p in itertools.combinations(range(15), 4)]
    assert any(o is None or o.any() for o in outs)


@given(st.sampled_from([(63, 30), (127, 64), (255, 115), (255, 131)]), st.integers(0, 2**32 - 1), st.data())
def test_decode_within_t(nk, seed, data):
    c = make_code(*nk)
    r = np.random.default_rng(seed)
    m = r.integers(0, 2, c.k, dtype=np.uint8)
    w = data.draw(st.integers(0, c.t))
    rx = flip(bch_encode(c, m), r.choice(c.n, w, replace=False))
    np.testing.assert_array_equal(bch_decode(c, rx), m)


def test_bit_helpers_roundtrip(rng):
    bits = rng.integers(0, 2, 255, dtype=np.uint8)
    np.testing.assert_array_equal(int_to_bits(bits_to_int(bits), 255), bits)
    packed = pack_bits(bits)
    assert len(packed) == 32 and packed == np.packbits(bits).tobytes()
    np.testing.assert_array_equal(unpack_bits(packed, 255), bits)


def test_commit_examples(rng):
    c = make_code(255, 115)
    r = np.random.default_rng(5).integers(0, 2, c.k, dtype=np.uint8)
    blk, r_out = commit(c, bch_encode(c, r), np.random.default_rng(5))
    np.testing.assert_array_equal(r_out, r)
    assert not blk.block.any()

    q_a = rng.integers(0, 2, 255, dtype=np.uint8)
    blk, r = commit(c, q_a, rng)
    np.testing.assert_array_equal(blk.block ^ bch_encode(c, r), q_a)
    q_a2, r2 = recover(c, blk, q_a)
    np.testing.assert_array_equal(q_a2, q_a)
    np.testing.assert_array_equal(r2, r)
    with pytest.raises(ParameterError):
        commit(c, q_a[:-1], rng)
    with pytest.raises(ParameterError):
        recover(c, blk, q_a[:-1])


def test_finalize_key_oracle(rng):
    q = rng.integers(0, 2, 255, dtype=np.uint8)
    if q.sum() % 2 == 0:
        q[0] ^= 1
    k = finalize_key(q, 256)
    assert k.pre_hash.size == 256 and k.pre_hash[-1] == 1
    digest = hashlib.sha256(np.packbits(np.append(q, 1)).tobytes()).digest()
    np.testing.assert_array_equal(k.key_bits, np.unpackbits(np.frombuffer(digest, np.uint8)))
    short = finalize_key(q, 128)
    assert short.key_bits.size == 128
    np.testing.assert_array_equal(short.key_bits, k.key_bits[:128])
    assert finalize_key(q) == k
    with pytest.raises(ParameterError):
        finalize_key(q, 64)


def test_finalize_key_avalanche(rng):
    diffs = []
    for _ in range(1000):
        q = rng.integers(0, 2, 255, dtype=np.uint8)
        q2 = q.copy()
        q2[rng.integers(255)] ^= 1
        diffs.append(int(np.sum(finalize_key(q).key_bits != finalize_key(q2).key_bits)))
    assert min(diffs) >= 90
    assert np.mean(diffs) >= 100
