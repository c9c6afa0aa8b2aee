"""Ledger-oblivious device.

A Thing only ever talks to users over a direct channel.  It issues tokens,
derives the session key it shares with its access control provider, and
answers orders sealed under that key.  It must not depend on the ledger.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, Optional

from . import crypto
from .crypto import DecryptionFailure, Token

PROTOCOLS = ("S", "1", "2")
TOKEN_CACHE_SIZE = 64


class ThingError(Exception):
    pass


class UnknownResource(ThingError):
    pass


class MissingChallenge(ThingError):
    pass


class UnknownToken(ThingError):
    pass


@dataclass(frozen=True)
class ThingResponse:
    token: Token
    contract_uri: str
    hmac_token: Optional[bytes] = None
    challenge_response: Optional[bytes] = None


def coffee_service(order: bytes) -> bytes:
    return b"receipt:" + order


class Thing:
    def __init__(
        self,
        thing_id: bytes,
        shared_key: bytes,
        resources: Dict[str, str],
        service: Callable[[bytes], bytes] = coffee_service,
        rng: Optional[crypto.RandomSource] = None,
        cache_size: int = TOKEN_CACHE_SIZE,
    ):
        if len(thing_id) != crypto.THING_ID_SIZE:
            raise ValueError("thing_id must be 16 bytes")
        if len(shared_key) != crypto.KEY_SIZE:
            raise ValueError("shared_key must be 32 bytes")
        self.thing_id = bytes(thing_id)
        self._shared_key = bytes(shared_key)
        self.resources = dict(resources)
        self.service = service
        self.counter = 0
        self._rng = rng
        self._cache_size = cache_size
        # canonical token bytes -> session key, oldest first
        self._tokens: "OrderedDict[bytes, bytes]" = OrderedDict()

    def _issue_token(self) -> Token:
        self.counter += 1
        nonce = (self._rng or os.urandom)(crypto.TOKEN_NONCE_SIZE)
        return Token(self.thing_id, self.counter, nonce)

    def handle_request(
        self, uri_resource: str, protocol: str, challenge: Optional[bytes] = None
    ) -> ThingResponse:
        if protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {protocol!r}")
        try:
            contract_uri = self.resources[uri_resource]
        except KeyError:
            raise UnknownResource(uri_resource) from None
        if protocol == "2" and challenge is None:
            raise MissingChallenge(uri_resource)
        if protocol != "2" and challenge is not None:
            raise ThingError("a challenge is only answered under protocol 2")

        token = self._issue_token()
        sk = crypto.derive_session_key(self._shared_key, token)
        self._tokens[token.to_bytes()] = sk
        while len(self._tokens) > self._cache_size:
            self._tokens.popitem(last=False)

        if protocol == "S":
            return ThingResponse(token, contract_uri)
        hmac_token = crypto.hmac(sk, token.to_bytes())
        if protocol == "1":
            return ThingResponse(token, contract_uri, hmac_token)
        return ThingResponse(token, contract_uri, hmac_token, crypto.hash(crypto.hmac(sk, challenge)))

    def handle_encrypted_request(self, token: Token | bytes, sealed_request: bytes) -> bytes:
        raw = token.to_bytes() if isinstance(token, Token) else bytes(token)
        sk = self._tokens.get(raw)
        if sk is None:
            raise UnknownToken(raw.hex())
        # one exchange per token, whether or not it succeeds
        del self._tokens[raw]
        order = crypto.open_sym(sk, sealed_request)
        return crypto.seal_sym(sk, self.service(order), self._rng)

    def session_key(self, token: Token | bytes) -> Optional[bytes]:
        """Cached session key for an outstanding token, if any."""
        raw = token.to_bytes() if isinstance(token, Token) else bytes(token)
        return self._tokens.get(raw)


__all__ = [
    "DecryptionFailure",
    "MissingChallenge",
    "PROTOCOLS",
    "Thing",
    "ThingError",
    "ThingResponse",
    "UnknownResource",
    "UnknownToken",
    "coffee_service",
]
