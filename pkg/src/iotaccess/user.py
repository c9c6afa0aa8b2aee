"""User-side session orchestration.

A session walks the whole protocol: ask the Thing for a token, escrow a
deposit on the contract, wait for the KEY event, unseal the session key,
then exchange one encrypted order for one encrypted receipt.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol

from . import crypto
from .contract import DEFAULT_TIMEOUT, REQUEST_FUNCTIONS
from .ledger import KEY, ContractRevert, Ledger, LedgerError, Receipt, Transaction
from .thing import ThingError, ThingResponse

logger = logging.getLogger(__name__)

CHALLENGE_SIZE = 32


class SessionState(str, enum.Enum):
    NEW = "NEW"
    REQUESTED_THING = "REQUESTED_THING"
    DEPOSITED = "DEPOSITED"
    KEYED = "KEYED"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


_ORDER = [
    SessionState.NEW,
    SessionState.REQUESTED_THING,
    SessionState.DEPOSITED,
    SessionState.KEYED,
    SessionState.COMPLETED,
]


class FailureReason(str, enum.Enum):
    DEPOSIT_REJECTED = "DEPOSIT_REJECTED"
    TIMEOUT_NO_KEY = "TIMEOUT_NO_KEY"
    KEY_UNSEAL_FAILED = "KEY_UNSEAL_FAILED"
    THING_CHANNEL_FAILED = "THING_CHANNEL_FAILED"


class SessionFailed(Exception):
    def __init__(self, reason: FailureReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


class IllegalTransition(Exception):
    pass


class ThingChannel(Protocol):
    def request(self, uri_resource: str, protocol: str,
                challenge: Optional[bytes]) -> ThingResponse: ...

    def exchange(self, token: crypto.Token, sealed_request: bytes) -> bytes: ...


@dataclass
class SessionRecord:
    protocol: str
    uri_resource: str
    user_address: bytes
    state: SessionState = SessionState.NEW
    reason: Optional[FailureReason] = None
    token: Optional[bytes] = None
    challenge: Optional[bytes] = None
    contract_uri: Optional[str] = None
    deposit: Optional[int] = None
    deposit_height: Optional[int] = None
    key_height: Optional[int] = None
    sk: Optional[bytes] = None
    receipt: Optional[bytes] = None
    refund: Optional[int] = None
    # dispute evidence and rejected-call codes, in order of occurrence
    evidence: List[str] = field(default_factory=list)

    def advance(self, new: SessionState) -> None:
        if self.state in (SessionState.COMPLETED, SessionState.FAILED):
            raise IllegalTransition(f"{self.state.value} is terminal")
        if new is SessionState.FAILED or _ORDER.index(new) > _ORDER.index(self.state):
            self.state = new
            return
        raise IllegalTransition(f"{self.state.value} -> {new.value}")

    def fail(self, reason: FailureReason, detail: str = "") -> None:
        self.advance(SessionState.FAILED)
        self.reason = reason
        if detail:
            self.evidence.append(f"{reason.value}: {detail}")

    @property
    def completed(self) -> bool:
        return self.state is SessionState.COMPLETED


class UserAgent:
    """Drives sessions for one user.

    ``tick`` advances the rest of the world by one round and is called
    while waiting on the ledger; it defaults to mining an empty block.
    ``submit`` can be replaced to intercept outgoing transactions.
    """

    def __init__(
        self,
        ledger_keys: crypto.LedgerKeyPair,
        enc_keys: crypto.EncKeyPair,
        ledger: Ledger,
        channel: ThingChannel,
        tick: Optional[Callable[[], None]] = None,
        rng: Optional[crypto.RandomSource] = None,
        key_timeout: Optional[int] = None,
        declared_enc_public: Optional[bytes] = None,
        submit: Optional[Callable[[Transaction], Receipt]] = None,
    ):
        self.ledger_keys = ledger_keys
        self.enc_keys = enc_keys
        self.ledger = ledger
        self.channel = channel
        self.tick = tick or (lambda: ledger.mine_empty())
        self._rng = rng or os.urandom
        self.key_timeout = key_timeout
        self.declared_enc_public = declared_enc_public or enc_keys.public
        self._submit = submit or ledger.submit
        self._keys_sub = None

    @property
    def address(self) -> bytes:
        return self.ledger_keys.address

    def _tx(self, contract_uri: str, function: str, args, value: int = 0) -> Transaction:
        return Transaction.build(
            self.ledger_keys, contract_uri, function, args, value,
            self.ledger.next_seq(self.address),
        )

    def _key_timeout(self, contract_uri: str) -> int:
        if self.key_timeout is not None:
            return self.key_timeout
        timeout = getattr(self.ledger.contract(contract_uri), "timeout", DEFAULT_TIMEOUT)
        return max(timeout - 2, 1)

    # -- session -----------------------------------------------------------

    def run_session(
        self,
        uri_resource: str,
        protocol: str,
        deposit: Optional[int] = None,
        order_payload: bytes = b"coffee",
    ) -> SessionRecord:
        record = SessionRecord(protocol, uri_resource, self.address)
        try:
            self._run(record, deposit, order_payload)
        except SessionFailed as exc:
            record.fail(exc.reason, exc.detail)
            if exc.reason is FailureReason.TIMEOUT_NO_KEY:
                self._reclaim(record)
        return record

    def _run(self, record: SessionRecord, deposit: Optional[int], order: bytes) -> None:
        protocol = record.protocol
        if protocol == "2":
            record.challenge = self._rng(CHALLENGE_SIZE)
        try:
            response = self.channel.request(record.uri_resource, protocol, record.challenge)
        except (ThingError, crypto.CryptoError) as exc:
            raise SessionFailed(FailureReason.THING_CHANNEL_FAILED, repr(exc)) from exc
        record.token = response.token.to_bytes()
        record.contract_uri = response.contract_uri
        record.advance(SessionState.REQUESTED_THING)

        self._deposit(record, response, deposit)
        record.advance(SessionState.DEPOSITED)

        record.sk = self.await_key(record.token, record.contract_uri, record)
        record.advance(SessionState.KEYED)

        sealed = crypto.seal_sym(record.sk, order, self._rng)
        try:
            reply = self.channel.exchange(response.token, sealed)
            record.receipt = crypto.open_sym(record.sk, reply)
        except (ThingError, crypto.CryptoError) as exc:
            raise SessionFailed(FailureReason.THING_CHANNEL_FAILED, repr(exc)) from exc
        record.advance(SessionState.COMPLETED)

    def _deposit(self, record: SessionRecord, response: ThingResponse,
                 deposit: Optional[int]) -> None:
        protocol = record.protocol
        try:
            contract = self.ledger.contract(response.contract_uri)
            if deposit is None:
                deposit = contract.quote(record.uri_resource, self.address)
        except (LedgerError, ContractRevert) as exc:
            # unknown contract or resource: nothing was sent
            raise SessionFailed(FailureReason.DEPOSIT_REJECTED, repr(exc)) from exc
        record.deposit = deposit

        token = record.token
        uri = record.uri_resource.encode()
        if protocol == "S":
            args = [token, uri, self.declared_enc_public]
        elif protocol == "1":
            args = [token, uri, response.hmac_token or b"", self.declared_enc_public]
        else:
            args = [
                token, uri, response.hmac_token or b"", response.challenge_response or b"",
                record.challenge, self.declared_enc_public,
            ]
        # subscribe before depositing so the KEY event cannot be missed
        self._keys_sub = self.ledger.subscribe(KEY, response.contract_uri)
        tx = self._tx(response.contract_uri, REQUEST_FUNCTIONS[protocol], args, deposit)
        try:
            receipt = self._submit(tx)
        except (LedgerError, crypto.CryptoError) as exc:
            raise SessionFailed(FailureReason.DEPOSIT_REJECTED, repr(exc)) from exc
        if not receipt.ok:
            raise SessionFailed(FailureReason.DEPOSIT_REJECTED, receipt.error or "")
        record.deposit_height = receipt.height

    def await_key(self, token: bytes, contract_uri: str,
                  record: Optional[SessionRecord] = None) -> bytes:
        sub = self._keys_sub or self.ledger.subscribe(KEY, contract_uri)
        start = record.deposit_height if record and record.deposit_height else self.ledger.height
        deadline = start + self._key_timeout(contract_uri)
        while True:
            for ev in sub.poll():
                if ev["p_user"] != self.ledger_keys.public or ev["token"] != token:
                    continue
                if record is not None:
                    record.key_height = ev.height
                try:
                    sk = crypto.open_asym(self.enc_keys, ev["sealed_sk"])
                except crypto.DecryptionFailure as exc:
                    raise SessionFailed(FailureReason.KEY_UNSEAL_FAILED, repr(exc)) from exc
                if len(sk) != crypto.KEY_SIZE:
                    raise SessionFailed(FailureReason.KEY_UNSEAL_FAILED, "bad key length")
                return sk
            if self.ledger.height >= deadline:
                raise SessionFailed(FailureReason.TIMEOUT_NO_KEY, f"no KEY by height {deadline}")
            self.tick()

    def _reclaim(self, record: SessionRecord) -> None:
        if record.deposit_height is None:
            return
        contract = self.ledger.contract(record.contract_uri)
        ready_at = record.deposit_height + getattr(contract, "timeout", DEFAULT_TIMEOUT)
        # the reclaim lands in the next block, so stop one short
        while self.ledger.height + 1 < ready_at:
            self.tick()
        tx = self._tx(record.contract_uri, "reclaim_deposit",
                      [record.token, record.uri_resource.encode()])
        receipt = self.ledger.submit(tx)
        if receipt.ok:
            record.refund = int.from_bytes(receipt.result, "big")
        else:
            record.evidence.append(f"reclaim_deposit: {receipt.error}")
