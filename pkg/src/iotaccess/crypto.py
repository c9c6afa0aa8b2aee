"""Cryptographic primitives shared by every actor.

Hashing is SHA-256, MACs are HMAC-SHA-256, public-key encryption is an
X25519 sealed box and symmetric encryption is ChaCha20-Poly1305.  Ledger
identities use Ed25519 key pairs that are deliberately decoupled from the
X25519 pairs used for encryption.

Functions that need randomness accept an optional ``rng`` callable
(``n -> bytes``) so that simulations can be replayed bit-for-bit.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import os
import struct
from dataclasses import dataclass
from typing import Callable, Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

RandomSource = Callable[[int], bytes]

DIGEST_SIZE = 32
KEY_SIZE = 32
ADDRESS_SIZE = 20
NONCE_SIZE = 12
TAG_SIZE = 16
THING_ID_SIZE = 16
TOKEN_NONCE_SIZE = 16
TOKEN_SIZE = THING_ID_SIZE + 8 + TOKEN_NONCE_SIZE

_SEAL_LABEL = b"iotaccess/sealed-box/v1"


class CryptoError(Exception):
    """Base class for crypto failures."""


class EmptyKey(CryptoError):
    pass


class InvalidKey(CryptoError):
    pass


class InvalidPublicKey(CryptoError):
    pass


class MalformedToken(CryptoError):
    pass


class DecryptionFailure(CryptoError):
    """Authenticated decryption rejected the input."""


class BadSignature(CryptoError):
    pass


def _random(rng: Optional[RandomSource], n: int) -> bytes:
    return (rng or os.urandom)(n)


# ---------------------------------------------------------------------------
# Hashes and MACs
# ---------------------------------------------------------------------------

def hash(message: bytes) -> bytes:  # noqa: A001 - mirrors the protocol's H(m)
    return hashlib.sha256(message).digest()


def hmac(key: bytes, message: bytes) -> bytes:
    if not key:
        raise EmptyKey("HMAC key must be non-empty")
    return _hmac.new(key, message, hashlib.sha256).digest()


def address(public_key: bytes) -> bytes:
    """Ledger address: the last 20 bytes of the hash of a public key."""
    return hash(public_key)[-ADDRESS_SIZE:]


# ---------------------------------------------------------------------------
# Tokens and session keys
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    """Freshness value issued by a Thing for one session."""

    thing_id: bytes
    counter: int
    nonce: bytes

    def __post_init__(self):
        if len(self.thing_id) != THING_ID_SIZE:
            raise MalformedToken(f"thing_id must be {THING_ID_SIZE} bytes")
        if len(self.nonce) != TOKEN_NONCE_SIZE:
            raise MalformedToken(f"nonce must be {TOKEN_NONCE_SIZE} bytes")
        if not 0 <= self.counter < 2**64:
            raise MalformedToken("counter out of 64-bit range")

    def to_bytes(self) -> bytes:
        return self.thing_id + struct.pack(">Q", self.counter) + self.nonce

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Token":
        if len(raw) != TOKEN_SIZE:
            raise MalformedToken(f"token must be {TOKEN_SIZE} bytes, got {len(raw)}")
        (counter,) = struct.unpack(">Q", raw[THING_ID_SIZE:THING_ID_SIZE + 8])
        return cls(raw[:THING_ID_SIZE], counter, raw[THING_ID_SIZE + 8:])


def canonical_bytes(token: Token | bytes) -> bytes:
    """thing_id || counter (8-byte big-endian) || nonce."""
    if isinstance(token, Token):
        return token.to_bytes()
    return Token.from_bytes(bytes(token)).to_bytes()


def derive_session_key(shared_key: bytes, token: Token | bytes) -> bytes:
    if len(shared_key) != KEY_SIZE:
        raise InvalidKey(f"shared key must be {KEY_SIZE} bytes")
    return hmac(shared_key, canonical_bytes(token))


# ---------------------------------------------------------------------------
# Key pairs
# ---------------------------------------------------------------------------

def _raw_public(key) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class LedgerKeyPair:
    """Ed25519 identity used only for signing ledger transactions."""

    public: bytes
    private: bytes

    @classmethod
    def from_private(cls, private: bytes) -> "LedgerKeyPair":
        if len(private) != KEY_SIZE:
            raise InvalidKey("ledger private key must be 32 bytes")
        sk = Ed25519PrivateKey.from_private_bytes(private)
        return cls(_raw_public(sk), bytes(private))

    @classmethod
    def generate(cls, rng: Optional[RandomSource] = None) -> "LedgerKeyPair":
        return cls.from_private(_random(rng, KEY_SIZE))

    @property
    def address(self) -> bytes:
        return address(self.public)

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.private).sign(message)


def verify_signature(public: bytes, message: bytes, signature: bytes) -> None:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError) as exc:
        raise BadSignature("signature does not verify") from exc


@dataclass(frozen=True)
class EncKeyPair:
    """X25519 key-agreement pair used for sealing session keys to a user."""

    public: bytes
    private: bytes

    @classmethod
    def from_private(cls, private: bytes) -> "EncKeyPair":
        if len(private) != KEY_SIZE:
            raise InvalidKey("encryption private key must be 32 bytes")
        return cls(_raw_public(X25519PrivateKey.from_private_bytes(private)), bytes(private))

    @classmethod
    def generate(cls, rng: Optional[RandomSource] = None) -> "EncKeyPair":
        return cls.from_private(_random(rng, KEY_SIZE))


def key_agreement(own_private: bytes, peer_public: bytes) -> bytes:
    if len(peer_public) != KEY_SIZE:
        raise InvalidPublicKey("peer public key must be 32 bytes")
    try:
        return X25519PrivateKey.from_private_bytes(own_private).exchange(
            X25519PublicKey.from_public_bytes(peer_public)
        )
    except ValueError as exc:
        # all-zero shared secret: low-order peer point
        raise InvalidPublicKey(str(exc)) from exc


# ---------------------------------------------------------------------------
# Encryption
# ---------------------------------------------------------------------------

def seal_sym(sk: bytes, plaintext: bytes, rng: Optional[RandomSource] = None) -> bytes:
    """Encrypt under a session key; returns nonce || ciphertext || tag."""
    nonce = _random(rng, NONCE_SIZE)
    return nonce + ChaCha20Poly1305(sk).encrypt(nonce, plaintext, None)


def open_sym(sk: bytes, sealed: bytes) -> bytes:
    if len(sealed) < NONCE_SIZE + TAG_SIZE:
        raise DecryptionFailure("sealed payload too short")
    try:
        return ChaCha20Poly1305(sk).decrypt(sealed[:NONCE_SIZE], sealed[NONCE_SIZE:], None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionFailure("symmetric decryption failed") from exc


@dataclass(frozen=True)
class SealedBox:
    ephemeral_public: bytes
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return self.ephemeral_public + self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBox":
        if len(raw) < KEY_SIZE + NONCE_SIZE + TAG_SIZE:
            raise DecryptionFailure("sealed box too short")
        return cls(raw[:KEY_SIZE], raw[KEY_SIZE:KEY_SIZE + NONCE_SIZE], raw[KEY_SIZE + NONCE_SIZE:])


def _box_key(shared: bytes, ephemeral_public: bytes, recipient_public: bytes) -> bytes:
    return hash(_SEAL_LABEL + shared + ephemeral_public + recipient_public)


def seal_asym(
    recipient_public: bytes, plaintext: bytes, rng: Optional[RandomSource] = None
) -> SealedBox:
    ephemeral = EncKeyPair.generate(rng)
    shared = key_agreement(ephemeral.private, recipient_public)
    key = _box_key(shared, ephemeral.public, recipient_public)
    nonce = _random(rng, NONCE_SIZE)
    ct = ChaCha20Poly1305(key).encrypt(nonce, plaintext, ephemeral.public)
    return SealedBox(ephemeral.public, nonce, ct)


def open_asym(recipient: EncKeyPair, box: SealedBox | bytes) -> bytes:
    if not isinstance(box, SealedBox):
        box = SealedBox.from_bytes(bytes(box))
    try:
        shared = key_agreement(recipient.private, box.ephemeral_public)
    except InvalidPublicKey as exc:
        raise DecryptionFailure("bad ephemeral key") from exc
    key = _box_key(shared, box.ephemeral_public, recipient.public)
    try:
        return ChaCha20Poly1305(key).decrypt(box.nonce, box.ciphertext, box.ephemeral_public)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionFailure("sealed box does not open") from exc
