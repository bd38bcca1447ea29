import itertools
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cloak.crypto import (
    AuthenticationError,
    BlockCipher,
    CipherBlock,
    block_width,
    decrypt_block,
    encrypt_block,
    generate_key,
    invert_permutation,
    random_permutation,
)

ES = 32


@pytest.fixture
def cipher():
    return BlockCipher(generate_key(), ES)


@given(st.binary(min_size=ES, max_size=ES))
def test_round_trip(m):
    c = BlockCipher(bytes(16), ES)
    assert decrypt_block(c, encrypt_block(c, m)) == m


def test_zero_block_round_trip(cipher):
    assert cipher.decrypt(cipher.encrypt(bytes(ES))) == bytes(ES)


def test_wrong_length_rejected(cipher):
    with pytest.raises(ValueError):
        cipher.encrypt(bytes(ES - 1))


def test_bit_flip_detected(cipher):
    b = cipher.encrypt(bytes(ES))
    flipped = bytes([b.ciphertext[0] ^ 1]) + b.ciphertext[1:]
    with pytest.raises(AuthenticationError):
        cipher.decrypt(CipherBlock(b.nonce, flipped, b.tag))


def test_wrong_key_detected(cipher):
    other = BlockCipher(generate_key(), ES)
    with pytest.raises(AuthenticationError):
        other.decrypt(cipher.encrypt(bytes(ES)))


def test_probabilistic_encryption(cipher):
    m = b"\x07" * ES
    seen = {cipher.encrypt(m).to_bytes() for _ in range(100_000)}
    assert len(seen) == 100_000


@given(st.binary(min_size=ES, max_size=ES))
def test_width_depends_only_on_element_size(m):
    c = BlockCipher(bytes(16), ES)
    b = c.encrypt(m)
    assert b.width == len(b.to_bytes()) == block_width(ES)
    assert CipherBlock.from_bytes(b.to_bytes()) == b


def test_seeded_nonces_are_reproducible():
    a = BlockCipher(bytes(16), ES, rng=random.Random(1))
    b = BlockCipher(bytes(16), ES, rng=random.Random(1))
    assert a.encrypt(bytes(ES)) == b.encrypt(bytes(ES))


def test_key_length_checked():
    with pytest.raises(ValueError):
        BlockCipher(b"short", ES)


def test_permutation_trivial_and_inverse():
    rng = random.Random(0)
    assert random_permutation(1, rng) == [0]
    p = random_permutation(50, rng)
    inv = invert_permutation(p)
    assert [p[i] for i in inv] == list(range(50))
    with pytest.raises(ValueError):
        random_permutation(0, rng)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_permutation_uniformity(n):
    rng = random.Random(42 + n)
    draws = 20_000 * n
    counts = Counter(tuple(random_permutation(n, rng)) for _ in range(draws))
    perms = list(itertools.permutations(range(n)))
    assert set(counts) == set(perms)
    assert stats.chisquare([counts[p] for p in perms]).pvalue > 0.01


def test_permutation_n3_counts():
    rng = random.Random(3)
    counts = Counter(tuple(random_permutation(3, rng)) for _ in range(60_000))
    assert all(9_500 <= c <= 10_500 for c in counts.values())
