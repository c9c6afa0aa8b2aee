"""Access control provider.

The ACP watches DEPOSIT events for the policies it manages, decides
whether the depositing user may access the resource, re-derives the
session key from the token, and answers on-chain with the key sealed to
the user's registered encryption key.  Refusals never go on-chain: the
event is dropped with a reason code and the user eventually reclaims.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from . import crypto
from .contract import ABI
from .ledger import DEPOSIT, Ledger, LedgerEvent, Receipt, Transaction

logger = logging.getLogger(__name__)


class DropReason(str, enum.Enum):
    NOT_MANAGED = "NOT_MANAGED"
    MALFORMED = "MALFORMED"
    POLICY = "POLICY"
    IDENTITY = "IDENTITY"
    UNKNOWN_THING = "UNKNOWN_THING"
    REPLAY = "REPLAY"
    THING_AUTH = "THING_AUTH"


@dataclass
class PolicyRecord:
    uri_policy: str
    # user ledger address -> registered encryption public key
    allowed: Dict[bytes, bytes] = field(default_factory=dict)

    def allow(self, user_address: bytes, enc_public: bytes) -> None:
        self.allowed[bytes(user_address)] = bytes(enc_public)


@dataclass(frozen=True)
class Drop:
    token: bytes
    user_address: bytes
    reason: DropReason
    height: int


@dataclass(frozen=True)
class Decision:
    """An authorization the ACP submitted, with the policy state it relied on."""

    token: bytes
    user_address: bytes
    uri_policy: str
    allowed_at_decision: frozenset
    function: str


def compute_challenge_proof(sk: bytes, challenge: bytes) -> bytes:
    return crypto.hmac(sk, challenge)


PathLike = Union[str, Path]


def load_policies(source: Union[PathLike, dict]) -> Dict[str, PolicyRecord]:
    """Read ``{uri_policy: [{"address": hex, "enc_public_key": hex}, ...]}``."""
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    policies = {}
    for uri, members in data.items():
        record = PolicyRecord(uri)
        for m in members:
            record.allow(bytes.fromhex(m["address"]), bytes.fromhex(m["enc_public_key"]))
        policies[uri] = record
    return policies


def dump_policies(policies: Dict[str, PolicyRecord]) -> dict:
    return {
        uri: [{"address": a.hex(), "enc_public_key": k.hex()} for a, k in rec.allowed.items()]
        for uri, rec in policies.items()
    }


def load_things(source: Union[PathLike, dict]) -> Dict[bytes, bytes]:
    """Read ``{thing_id_hex: shared_key_hex}``."""
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    return {bytes.fromhex(tid): bytes.fromhex(key) for tid, key in data.items()}


class ACP:
    def __init__(
        self,
        keys: crypto.LedgerKeyPair,
        policies: Dict[str, PolicyRecord],
        things: Dict[bytes, bytes],
        ledger: Optional[Ledger] = None,
        contract_uri: Optional[str] = None,
        rng: Optional[crypto.RandomSource] = None,
        verify_thing_on_challenge: bool = True,
    ):
        self.keys = keys
        self.policies = policies
        self.things = dict(things)
        self.ledger = ledger
        self.contract_uri = contract_uri
        self.verify_thing_on_challenge = verify_thing_on_challenge
        self._rng = rng
        self._seq = 0
        self.last_seen: Dict[bytes, int] = {}
        self.drops: List[Drop] = []
        self.decisions: List[Decision] = []
        self.session_keys: Dict[bytes, bytes] = {}
        self.receipts: List[Receipt] = []
        self._subscription = (
            ledger.subscribe(DEPOSIT, contract_uri) if ledger is not None else None
        )

    @property
    def address(self) -> bytes:
        return self.keys.address

    def _drop(self, ev: LedgerEvent, user: bytes, reason: DropReason) -> None:
        logger.info("drop deposit token=%s reason=%s", ev.get("token", b"").hex()[:16], reason.value)
        self.drops.append(Drop(ev.get("token", b""), user, reason, ev.height))

    def on_deposit_event(self, ev: LedgerEvent) -> Optional[Transaction]:
        if ev.kind != DEPOSIT:
            return None
        try:
            uri_policy = ev["uri_policy"].decode()
            p_user = ev["p_user"]
            token_raw = ev["token"]
            enc_public = ev["user_enc_public"]
        except (KeyError, UnicodeDecodeError):
            self._drop(ev, b"", DropReason.MALFORMED)
            return None
        user = crypto.address(p_user)

        policy = self.policies.get(uri_policy)
        if policy is None:
            self._drop(ev, user, DropReason.NOT_MANAGED)
            return None
        registered_enc = policy.allowed.get(user)
        if registered_enc is None:
            self._drop(ev, user, DropReason.POLICY)
            return None
        if registered_enc != enc_public:
            self._drop(ev, user, DropReason.IDENTITY)
            return None

        try:
            token = crypto.Token.from_bytes(token_raw)
        except crypto.MalformedToken:
            self._drop(ev, user, DropReason.MALFORMED)
            return None
        shared_key = self.things.get(token.thing_id)
        if shared_key is None:
            self._drop(ev, user, DropReason.UNKNOWN_THING)
            return None
        last = self.last_seen.get(token.thing_id)
        if last is not None and token.counter <= last:
            self._drop(ev, user, DropReason.REPLAY)
            return None

        sk = crypto.derive_session_key(shared_key, token)
        hmac_token = ev.get("hmac_token")
        challenge = ev.get("challenge")
        check_thing = hmac_token is not None and (
            challenge is None or self.verify_thing_on_challenge
        )
        if check_thing and hmac_token != crypto.hmac(sk, token.to_bytes()):
            self._drop(ev, user, DropReason.THING_AUTH)
            return None

        self.last_seen[token.thing_id] = token.counter
        self.session_keys[token_raw] = sk
        sealed = crypto.seal_asym(registered_enc, sk, self._rng).to_bytes()
        uri_resource = ev["uri_resource"]
        if challenge is None:
            function = "authorize1"
            args = [p_user, token_raw, uri_resource, sealed]
        else:
            function = "authorize2"
            args = [p_user, token_raw, uri_resource, sealed, compute_challenge_proof(sk, challenge)]
        assert len(args) == len(ABI[function])
        self.decisions.append(Decision(
            token_raw, user, uri_policy, frozenset(policy.allowed), function,
        ))
        if self.ledger is not None:
            self._seq = max(self._seq, self.ledger.next_seq(self.address))
        tx = Transaction.build(self.keys, ev.contract, function, args, seq=self._seq)
        self._seq += 1
        return tx

    def step(self) -> List[Receipt]:
        """Process new DEPOSIT events and submit the resulting authorizations."""
        if self._subscription is None:
            return []
        out = []
        for ev in self._subscription.poll():
            tx = self.on_deposit_event(ev)
            if tx is None:
                continue
            receipt = self.ledger.submit(tx)
            if not receipt.ok:
                logger.info("authorize reverted: %s", receipt.error)
            self.receipts.append(receipt)
            out.append(receipt)
        return out
