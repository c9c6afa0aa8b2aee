"""The access-control and payment contract.

Users escrow a deposit with one of three ``request`` variants; the
resource's access control provider releases it with ``authorize1`` or
``authorize2``, which also broadcasts the session key sealed to the user.
Unanswered deposits come back through ``reclaim_deposit`` after a timeout.

Argument order for every callable function is fixed by ``ABI`` and is part
of the trace format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import crypto
from .ledger import (
    DEPOSIT,
    KEY,
    CallContext,
    Contract,
    ContractRevert,
    decode_uint,
    encode_uint,
)

DEFAULT_TIMEOUT = 20

ABI: Dict[str, Tuple[str, ...]] = {
    "register_resource": (
        "uri_resource", "uri_policy", "acp_address", "base_cost", "free_credits", "provider",
    ),
    "requestS": ("token", "uri_resource", "user_enc_public"),
    "request1": ("token", "uri_resource", "hmac_token", "user_enc_public"),
    "request2": (
        "token", "uri_resource", "hmac_token", "hidden_challenge", "challenge", "user_enc_public",
    ),
    "authorize1": ("p_user", "token", "uri_resource", "sealed_sk"),
    "authorize2": ("p_user", "token", "uri_resource", "sealed_sk", "hmac_challenge"),
    "reclaim_deposit": ("token", "uri_resource"),
}

REQUEST_FUNCTIONS = {"S": "requestS", "1": "request1", "2": "request2"}


class UnknownFunction(ContractRevert):
    pass


class BadArguments(ContractRevert):
    pass


class NotOwner(ContractRevert):
    pass


class DuplicateResource(ContractRevert):
    pass


class UnknownResource(ContractRevert):
    pass


class InsufficientDeposit(ContractRevert):
    pass


class DuplicateToken(ContractRevert):
    pass


class NotACP(ContractRevert):
    pass


class NoPendingRequest(ContractRevert):
    pass


class VariantMismatch(ContractRevert):
    """authorize1 on a request2 deposit, or the reverse."""


class ChallengeMismatch(ContractRevert):
    pass


class TooEarly(ContractRevert):
    pass


class NotRequester(ContractRevert):
    pass


class AlreadyAuthorized(ContractRevert):
    pass


def encode_credit_grants(grants: Dict[bytes, int]) -> bytes:
    return b"".join(addr + struct.pack(">Q", n) for addr, n in sorted(grants.items()))


def decode_credit_grants(raw: bytes) -> Dict[bytes, int]:
    width = crypto.ADDRESS_SIZE + 8
    if len(raw) % width:
        raise BadArguments("free credit grants are 28-byte records")
    grants = {}
    for i in range(0, len(raw), width):
        (count,) = struct.unpack(">Q", raw[i + crypto.ADDRESS_SIZE:i + width])
        grants[raw[i:i + crypto.ADDRESS_SIZE]] = count
    return grants


@dataclass
class ResourceRecord:
    uri_resource: str
    uri_policy: str
    acp_address: bytes
    base_cost: int
    provider: bytes
    free_credits: Dict[bytes, int] = field(default_factory=dict)


@dataclass
class PendingRequest:
    user_address: bytes
    user_public: bytes
    user_enc_public: bytes
    token: bytes
    uri_resource: str
    escrowed_deposit: int
    created_at_height: int
    uses_credit: bool
    hmac_token: Optional[bytes] = None
    hidden_challenge: Optional[bytes] = None


RequestKey = Tuple[bytes, bytes]


def request_key(user_address: bytes, token: bytes) -> RequestKey:
    return (bytes(user_address), crypto.hash(token))


class AccessContract(Contract):
    def __init__(self, uri: str, owner: bytes, timeout: int = DEFAULT_TIMEOUT):
        super().__init__(uri, owner)
        self.storage = {
            "timeout": timeout,
            "resources": {},
            "pending": {},
            # request key -> "authorized" | "reclaimed"
            "closed": {},
        }

    @property
    def timeout(self) -> int:
        return self.storage["timeout"]

    @property
    def resources(self) -> Dict[str, ResourceRecord]:
        return self.storage["resources"]

    @property
    def pending(self) -> Dict[RequestKey, PendingRequest]:
        return self.storage["pending"]

    @property
    def closed(self) -> Dict[RequestKey, str]:
        return self.storage["closed"]

    # -- read-only views ---------------------------------------------------

    def _credits_available(self, res: ResourceRecord, user: bytes) -> int:
        reserved = sum(
            1 for p in self.pending.values()
            if p.user_address == user and p.uri_resource == res.uri_resource and p.uses_credit
        )
        return res.free_credits.get(user, 0) - reserved

    def quote(self, uri_resource: str, user_address: bytes) -> int:
        res = self._resource(uri_resource)
        return 0 if self._credits_available(res, user_address) > 0 else res.base_cost

    def _resource(self, uri: str) -> ResourceRecord:
        try:
            return self.resources[uri]
        except KeyError:
            raise UnknownResource(uri) from None

    # -- dispatch ----------------------------------------------------------

    def dispatch(self, ctx: CallContext, function: str, args: List[bytes]):
        names = ABI.get(function)
        if names is None:
            raise UnknownFunction(function)
        if len(args) != len(names):
            raise BadArguments(f"{function} takes {len(names)} arguments, got {len(args)}")
        kwargs = dict(zip(names, args))
        for key in ("uri_resource", "uri_policy"):
            if key in kwargs:
                try:
                    kwargs[key] = kwargs[key].decode()
                except UnicodeDecodeError:
                    raise BadArguments(f"{key} is not UTF-8") from None
        return getattr(self, function)(ctx, **kwargs)

    def register_resource(self, ctx, uri_resource, uri_policy, acp_address, base_cost,
                          free_credits, provider):
        if ctx.sender != self.owner:
            raise NotOwner(ctx.sender.hex())
        if uri_resource in self.resources:
            raise DuplicateResource(uri_resource)
        if len(acp_address) != crypto.ADDRESS_SIZE:
            raise BadArguments("acp_address must be 20 bytes")
        provider = provider or self.owner
        grants = decode_credit_grants(free_credits)
        self.resources[uri_resource] = ResourceRecord(
            uri_resource, uri_policy, bytes(acp_address), decode_uint(base_cost),
            bytes(provider), grants,
        )
        ctx.write(5 + len(grants))

    # -- requests ----------------------------------------------------------

    def _request(self, ctx: CallContext, token: bytes, uri_resource: str,
                 user_enc_public: bytes, extra: Sequence[Tuple[str, bytes]],
                 hmac_token: Optional[bytes] = None,
                 hidden_challenge: Optional[bytes] = None):
        res = self._resource(uri_resource)
        try:
            crypto.Token.from_bytes(token)
        except crypto.MalformedToken as exc:
            raise BadArguments(str(exc)) from None
        if len(user_enc_public) != crypto.KEY_SIZE:
            raise BadArguments("user_enc_public must be 32 bytes")
        for name, value in extra:
            if len(value) != crypto.DIGEST_SIZE:
                raise BadArguments(f"{name} must be {crypto.DIGEST_SIZE} bytes")

        key = request_key(ctx.sender, token)
        if key in self.pending or key in self.closed:
            raise DuplicateToken(token.hex())
        uses_credit = self._credits_available(res, ctx.sender) > 0
        effective_cost = 0 if uses_credit else res.base_cost
        if ctx.value < effective_cost:
            raise InsufficientDeposit(f"deposit {ctx.value} < cost {effective_cost}")

        self.pending[key] = PendingRequest(
            user_address=ctx.sender,
            user_public=ctx.sender_public,
            user_enc_public=bytes(user_enc_public),
            token=bytes(token),
            uri_resource=uri_resource,
            escrowed_deposit=ctx.value,
            created_at_height=ctx.height,
            uses_credit=uses_credit,
            hmac_token=hmac_token,
            hidden_challenge=hidden_challenge,
        )
        ctx.write(7 + (hmac_token is not None) + (hidden_challenge is not None))
        ctx.emit(DEPOSIT, [
            ("p_user", ctx.sender_public),
            ("token", token),
            ("uri_policy", res.uri_policy.encode()),
            ("uri_resource", uri_resource.encode()),
            ("user_enc_public", user_enc_public),
            *extra,
        ])

    def requestS(self, ctx, token, uri_resource, user_enc_public):
        self._request(ctx, token, uri_resource, user_enc_public, [])

    def request1(self, ctx, token, uri_resource, hmac_token, user_enc_public):
        self._request(ctx, token, uri_resource, user_enc_public,
                      [("hmac_token", hmac_token)], hmac_token=bytes(hmac_token))

    def request2(self, ctx, token, uri_resource, hmac_token, hidden_challenge, challenge,
                 user_enc_public):
        self._request(
            ctx, token, uri_resource, user_enc_public,
            [("hmac_token", hmac_token), ("hidden_challenge", hidden_challenge),
             ("challenge", challenge)],
            hmac_token=bytes(hmac_token), hidden_challenge=bytes(hidden_challenge),
        )

    # -- authorization -----------------------------------------------------

    def _take_pending(self, ctx: CallContext, p_user: bytes, token: bytes,
                      uri_resource: str) -> Tuple[RequestKey, PendingRequest, ResourceRecord]:
        res = self._resource(uri_resource)
        if ctx.sender != res.acp_address:
            raise NotACP(ctx.sender.hex())
        key = request_key(crypto.address(p_user), token)
        pending = self.pending.get(key)
        if pending is None or pending.uri_resource != uri_resource:
            raise NoPendingRequest(token.hex())
        return key, pending, res

    def _release(self, ctx: CallContext, key: RequestKey, pending: PendingRequest,
                 res: ResourceRecord, p_user: bytes, token: bytes, sealed_sk: bytes) -> None:
        ctx.transfer(res.provider, pending.escrowed_deposit)
        if pending.uses_credit:
            res.free_credits[pending.user_address] -= 1
            ctx.write()
        del self.pending[key]
        self.closed[key] = "authorized"
        ctx.write(2)
        ctx.emit(KEY, [
            ("p_user", p_user),
            ("token", token),
            ("uri_resource", pending.uri_resource.encode()),
            ("sealed_sk", sealed_sk),
        ])

    def authorize1(self, ctx, p_user, token, uri_resource, sealed_sk):
        key, pending, res = self._take_pending(ctx, p_user, token, uri_resource)
        if pending.hidden_challenge is not None:
            raise VariantMismatch("request2 deposits require authorize2")
        self._release(ctx, key, pending, res, p_user, token, sealed_sk)

    def authorize2(self, ctx, p_user, token, uri_resource, sealed_sk, hmac_challenge):
        key, pending, res = self._take_pending(ctx, p_user, token, uri_resource)
        if pending.hidden_challenge is None:
            raise VariantMismatch("authorize2 needs a request2 deposit")
        if crypto.hash(hmac_challenge) != pending.hidden_challenge:
            raise ChallengeMismatch(token.hex())
        self._release(ctx, key, pending, res, p_user, token, sealed_sk)

    # -- refunds -----------------------------------------------------------

    def reclaim_deposit(self, ctx, token, uri_resource):
        key = request_key(ctx.sender, token)
        pending = self.pending.get(key)
        if pending is None or pending.uri_resource != uri_resource:
            if self.closed.get(key) == "authorized":
                raise AlreadyAuthorized(token.hex())
            h = crypto.hash(token)
            if any(k[1] == h for k in self.pending):
                raise NotRequester(ctx.sender.hex())
            raise NoPendingRequest(token.hex())
        if ctx.height < pending.created_at_height + self.timeout:
            raise TooEarly(
                f"height {ctx.height} < {pending.created_at_height} + {self.timeout}"
            )
        ctx.transfer(pending.user_address, pending.escrowed_deposit)
        del self.pending[key]
        self.closed[key] = "reclaimed"
        ctx.write(2)
        return encode_uint(pending.escrowed_deposit)


def register_args(uri_resource: str, uri_policy: str, acp_address: bytes, base_cost: int,
                  free_credits: Optional[Dict[bytes, int]] = None,
                  provider: bytes = b"") -> List[bytes]:
    return [
        uri_resource.encode(), uri_policy.encode(), acp_address, encode_uint(base_cost),
        encode_credit_grants(free_credits or {}), provider,
    ]
