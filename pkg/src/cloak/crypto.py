"""AES-128-GCM block encryption with random nonces, and random permutations."""

from __future__ import annotations

import os
import random
from typing import NamedTuple, Optional, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

NONCE_BYTES = 12
TAG_BYTES = 16
KEY_BYTES = 16


class AuthenticationError(Exception):
    """A block failed authentication: the server returned tampered data."""


def block_width(element_size: int) -> int:
    return NONCE_BYTES + element_size + TAG_BYTES


class CipherBlock(NamedTuple):
    # a NamedTuple rather than a frozen dataclass: batches build thousands
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CipherBlock":
        if len(raw) < NONCE_BYTES + TAG_BYTES:
            raise ValueError("block too short")
        return cls(raw[:NONCE_BYTES], raw[NONCE_BYTES:-TAG_BYTES], raw[-TAG_BYTES:])

    @property
    def width(self) -> int:
        return len(self.nonce) + len(self.ciphertext) + len(self.tag)


def secure_rng() -> random.Random:
    # SystemRandom ignores seed(), so deployment mode cannot be made reproducible.
    return random.SystemRandom()


def generate_key(rng: Optional[random.Random] = None) -> bytes:
    return (rng or secure_rng()).randbytes(KEY_BYTES)


class BlockCipher:
    """Encrypts fixed-size plaintexts under one store-wide key."""

    def __init__(self, key: bytes, element_size: int, rng: Optional[random.Random] = None):
        if len(key) not in (16, 24, 32):
            raise ValueError("AES key must be 16, 24 or 32 bytes")
        self.element_size = element_size
        self.width = block_width(element_size)
        self._aead = AESGCM(key)
        self._nonce = os.urandom if rng is None else rng.randbytes

    def encrypt(self, plaintext: bytes) -> CipherBlock:
        if len(plaintext) != self.element_size:
            raise ValueError(
                f"plaintext is {len(plaintext)} bytes, expected {self.element_size}"
            )
        nonce = self._nonce(NONCE_BYTES)
        sealed = self._aead.encrypt(nonce, plaintext, None)
        return CipherBlock(nonce, sealed[:-TAG_BYTES], sealed[-TAG_BYTES:])

    def decrypt(self, block: CipherBlock) -> bytes:
        if len(block.ciphertext) != self.element_size or len(block.nonce) != NONCE_BYTES:
            raise AuthenticationError("malformed block")
        try:
            return self._aead.decrypt(block.nonce, block.ciphertext + block.tag, None)
        except InvalidTag as exc:
            raise AuthenticationError("block failed authentication") from exc


def encrypt_block(cipher: BlockCipher, plaintext: bytes) -> CipherBlock:
    return cipher.encrypt(plaintext)


def decrypt_block(cipher: BlockCipher, block: CipherBlock) -> bytes:
    return cipher.decrypt(block)


def random_permutation(n: int, rng: random.Random) -> list[int]:
    """Uniform permutation of ``range(n)`` (Fisher-Yates via ``Random.shuffle``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    perm = list(range(n))
    rng.shuffle(perm)
    return perm


def invert_permutation(perm: Sequence[int]) -> list[int]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return inv
