import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotaccess import crypto
from iotaccess.crypto import Token

import oracles

# Digests frozen from the pure-Python oracle in tests/oracles.py; the first
# entries are also the published FIPS 180-4 / RFC 4231 values.
SHA256_VECTORS = [
    (b"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    (b"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
     "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"),
    (b"a" * 55, "9f4390f8d30c2dd92ec9f095b65e2b9ae9b0a925a5258e241c9f1e910f734318"),
    (b"a" * 56, "b35439a4ac6f0948b6d6f9e3c6af0f5f590ce20f1bde7090ef7970686ec6738a"),
    (b"a" * 64, "ffe054fe7ae0cb6dc65c3af9b61d5209f439851db43d0ba5997337df154668eb"),
    (b"a" * 1000, "41edece42d63e8d9bf515a9ba6932e1c20cbc9f5a5d134645adb5db1b9737ea3"),
    (bytes(range(256)), "40aff2e9d2d8922e47afd4648e6967497158785fbd1da870e7110266bf944880"),
    (b"coffee,sugar=1", "f38813f6ee4f19753ce1332c1aeb4033db51beb4e94cdfda88964ee15b58524e"),
    (b"\x00" * 32, "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925"),
    (b"The quick brown fox jumps over the lazy dog",
     "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592"),
]

HMAC_VECTORS = [
    (b"\x0b" * 20, b"Hi There",
     "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
    (b"Jefe", b"what do ya want for nothing?",
     "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
    (b"\xaa" * 20, b"\xdd" * 50,
     "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe"),
    (bytes(range(1, 26)), b"\xcd" * 50,
     "82558a389a443c0ea4cc819899f2083a85f0faa3e578f8077a2e3ff46729665b"),
    (b"\xaa" * 131, b"Test Using Larger Than Block-Size Key - Hash Key First",
     "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54"),
    (b"k" * 32, b"", "a4ad8e340e32bf1d916005cb1dc92795148897965e36ae56c0adc357474b5372"),
    (b"\x01", b"token", "c12716b7ec1d873e2ceef3af719d60efb9a042b596f7d7cd554c3ae3bf28683a"),
    (b"\x00" * 32, b"\x00" * 40,
     "63d8b645f91022e5bc4ac56793c4197753f24b78584eef717817ab23e65c8be0"),
    (b"key" * 30, b"m" * 100, "3bb18864e3c36070be5f12a2b8ca2846c2bff05ec1533df3890fde8d37e72134"),
    (b"shared-key-32-bytes-long-exactly", b"abc",
     "cad05c85e22cab2b54bfd224487ba4fe355579dcd24bfe46262567a004b8e5d0"),
    (b"k1" * 16, b"fixed message",
     "e3da56eab3d63c41876febf30c1789db0a41c23882b4323d274cefaff42c4d04"),
    (b"k2" * 16, b"fixed message",
     "97a49e9434d3e671802f5a57e3dba81b6363ce0ee7f7fb4b370edbfb1e67dd9d"),
]

# RFC 7748 section 6.1
RFC7748_ALICE = bytes.fromhex("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")
RFC7748_ALICE_PUB = bytes.fromhex("8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a")
RFC7748_BOB = bytes.fromhex("5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb")
RFC7748_BOB_PUB = bytes.fromhex("de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f")
RFC7748_SHARED = bytes.fromhex("4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742")

# session-key fixture: key 00..1f, thing_id 11*16, counter 1, nonce 22*16
SHARED_KEY = bytes(range(32))
TOKEN = Token(b"\x11" * 16, 1, b"\x22" * 16)
SK = bytes.fromhex("7d7153beab00ace2373e00a07c5a63b664eb9bff7c1b8b26e71033affc0573f6")
SK_KEY_BITFLIP = bytes.fromhex("03662cda7f4f90d618281e1446ca30098fd3b5eb449676c74c1bca75041b4fa7")
SK_COUNTER_2 = bytes.fromhex("413826fae4083810e2cd495dea5a28114379b3869734a9d1d5852c08886c3d14")


@pytest.mark.parametrize("message,expected", SHA256_VECTORS)
def test_hash_vectors(message, expected):
    assert crypto.hash(message).hex() == expected
    assert oracles.sha256(message).hex() == expected


@pytest.mark.parametrize("key,message,expected", HMAC_VECTORS)
def test_hmac_vectors(key, message, expected):
    assert crypto.hmac(key, message).hex() == expected
    assert oracles.hmac_sha256(key, message).hex() == expected


def test_hmac_rejects_empty_key():
    with pytest.raises(crypto.EmptyKey):
        crypto.hmac(b"", b"m")


def test_hmac_distinct_keys():
    assert crypto.hmac(b"k1" * 16, b"fixed message") != crypto.hmac(b"k2" * 16, b"fixed message")


@given(st.binary(max_size=300), st.binary(min_size=1, max_size=100))
@settings(max_examples=40)
def test_hash_and_hmac_match_oracle(message, key):
    assert crypto.hash(message) == oracles.sha256(message)
    assert crypto.hmac(key, message) == oracles.hmac_sha256(key, message)
    assert len(crypto.hash(message)) == len(crypto.hmac(key, message)) == 32


def test_address_is_last_20_bytes_of_hash():
    pub = bytes(range(32))
    assert crypto.address(pub) == oracles.sha256(pub)[-20:]
    assert len(crypto.address(pub)) == 20


class TestTokens:
    def test_canonical_bytes_layout(self):
        raw = crypto.canonical_bytes(TOKEN)
        assert raw == b"\x11" * 16 + (1).to_bytes(8, "big") + b"\x22" * 16
        assert Token.from_bytes(raw) == TOKEN

    @pytest.mark.parametrize("raw", [b"", b"\x00" * 39, b"\x00" * 41])
    def test_malformed(self, raw):
        with pytest.raises(crypto.MalformedToken):
            Token.from_bytes(raw)

    def test_bad_fields(self):
        with pytest.raises(crypto.MalformedToken):
            Token(b"\x00" * 15, 1, b"\x00" * 16)
        with pytest.raises(crypto.MalformedToken):
            Token(b"\x00" * 16, -1, b"\x00" * 16)


class TestSessionKey:
    def test_fixed_vector(self):
        assert crypto.derive_session_key(SHARED_KEY, TOKEN) == SK

    def test_both_sides_agree(self):
        thing_side = crypto.derive_session_key(SHARED_KEY, TOKEN)
        acp_side = crypto.derive_session_key(bytes(SHARED_KEY), TOKEN.to_bytes())
        assert thing_side == acp_side

    def test_one_bit_of_key(self):
        key = bytearray(SHARED_KEY)
        key[0] ^= 1
        assert crypto.derive_session_key(bytes(key), TOKEN) == SK_KEY_BITFLIP != SK

    def test_counter_increment(self):
        nxt = Token(TOKEN.thing_id, 2, TOKEN.nonce)
        assert crypto.derive_session_key(SHARED_KEY, nxt) == SK_COUNTER_2 != SK

    def test_wrong_key_length(self):
        with pytest.raises(crypto.InvalidKey):
            crypto.derive_session_key(b"short", TOKEN)

    def test_malformed_token(self):
        with pytest.raises(crypto.MalformedToken):
            crypto.derive_session_key(SHARED_KEY, b"\x00" * 12)


class TestKeyAgreement:
    def test_rfc7748_vector(self):
        alice = crypto.EncKeyPair.from_private(RFC7748_ALICE)
        bob = crypto.EncKeyPair.from_private(RFC7748_BOB)
        assert alice.public == RFC7748_ALICE_PUB
        assert bob.public == RFC7748_BOB_PUB
        assert crypto.key_agreement(alice.private, bob.public) == RFC7748_SHARED
        assert crypto.key_agreement(bob.private, alice.public) == RFC7748_SHARED

    def test_matches_oracle_on_fixed_keys(self):
        a = bytes(range(32))
        b = bytes(range(100, 132))
        pa = crypto.EncKeyPair.from_private(a).public
        pb = crypto.EncKeyPair.from_private(b).public
        assert pa == oracles.x25519_public(a)
        assert crypto.key_agreement(a, pb) == oracles.x25519(a, oracles.x25519_public(b))

    def test_symmetry_and_distinctness(self):
        a, b, c = (crypto.EncKeyPair.generate() for _ in range(3))
        ab = crypto.key_agreement(a.private, b.public)
        assert ab == crypto.key_agreement(b.private, a.public)
        assert ab != crypto.key_agreement(a.private, c.public)

    def test_low_order_point_rejected(self):
        with pytest.raises(crypto.InvalidPublicKey):
            crypto.key_agreement(bytes(range(32)), b"\x00" * 32)
        with pytest.raises(crypto.InvalidPublicKey):
            crypto.key_agreement(bytes(range(32)), b"\x01" * 31)


class TestLedgerKeys:
    def test_deterministic_public(self):
        kp = crypto.LedgerKeyPair.from_private(b"\x07" * 32)
        assert crypto.LedgerKeyPair.from_private(b"\x07" * 32).public == kp.public
        assert len(kp.public) == 32 and len(kp.address) == 20

    def test_signatures(self):
        kp = crypto.LedgerKeyPair.generate()
        sig = kp.sign(b"payload")
        crypto.verify_signature(kp.public, b"payload", sig)
        with pytest.raises(crypto.BadSignature):
            crypto.verify_signature(kp.public, b"payloaD", sig)

    def test_decoupled_from_encryption_pair(self):
        seed = b"\x05" * 32
        assert crypto.LedgerKeyPair.from_private(seed).public != crypto.EncKeyPair.from_private(seed).public


class TestSealedBox:
    def test_round_trip(self):
        kp = crypto.EncKeyPair.generate()
        box = crypto.seal_asym(kp.public, b"session key bytes")
        assert crypto.open_asym(kp, box) == b"session key bytes"
        assert crypto.open_asym(kp, box.to_bytes()) == b"session key bytes"

    def test_wrong_recipient(self):
        kp, other = crypto.EncKeyPair.generate(), crypto.EncKeyPair.generate()
        with pytest.raises(crypto.DecryptionFailure):
            crypto.open_asym(other, crypto.seal_asym(kp.public, b"x"))

    def test_bit_flip_anywhere(self):
        kp = crypto.EncKeyPair.generate()
        raw = crypto.seal_asym(kp.public, b"secret").to_bytes()
        for i in range(len(raw)):
            bad = bytearray(raw)
            bad[i] ^= 0x01
            with pytest.raises(crypto.DecryptionFailure):
                crypto.open_asym(kp, bytes(bad))

    def test_truncated(self):
        with pytest.raises(crypto.DecryptionFailure):
            crypto.open_asym(crypto.EncKeyPair.generate(), b"\x00" * 40)

    def test_seeded_rng_is_reproducible(self):
        import random
        kp = crypto.EncKeyPair.from_private(b"\x09" * 32)
        a = crypto.seal_asym(kp.public, b"m", random.Random(1).randbytes)
        b = crypto.seal_asym(kp.public, b"m", random.Random(1).randbytes)
        assert a == b


class TestSymmetric:
    def test_round_trip(self):
        assert crypto.open_sym(SK, crypto.seal_sym(SK, b"coffee,sugar=1")) == b"coffee,sugar=1"

    def test_mismatched_session_key(self):
        sealed = crypto.seal_sym(SK, b"coffee,sugar=1")
        with pytest.raises(crypto.DecryptionFailure):
            crypto.open_sym(SK_KEY_BITFLIP, sealed)

    def test_fresh_nonce(self):
        assert crypto.seal_sym(SK, b"coffee") != crypto.seal_sym(SK, b"coffee")

    def test_short_input(self):
        with pytest.raises(crypto.DecryptionFailure):
            crypto.open_sym(SK, b"\x00" * 27)
