"""Deterministic in-process ledger.

One transaction per block, contract calls executed atomically, events
appended to a single global log that subscribers replay from genesis.
Costs are metered with a simplified gas-like formula and reported only;
they never move currency.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, replace
from typing import IO, Any, Dict, Iterator, List, Optional, Sequence, Tuple

from . import crypto

BASE_COST = 21000
CALLDATA_BYTE_COST = 16
STORAGE_WRITE_COST = 20000

DEPOSIT = "DEPOSIT"
KEY = "KEY"

OK = "ok"
REVERTED = "reverted"


class LedgerError(Exception):
    pass


class UnknownAccount(LedgerError):
    pass


class UnknownContract(LedgerError):
    pass


class InsufficientBalance(LedgerError):
    pass


class BadSequence(LedgerError):
    pass


BadSignature = crypto.BadSignature


class ContractRevert(Exception):
    """Raised by contract code; the ledger rolls the call back."""

    @property
    def code(self) -> str:
        return type(self).__name__


# ---------------------------------------------------------------------------
# ABI
# ---------------------------------------------------------------------------

def encode_args(args: Sequence[bytes]) -> bytes:
    return json.dumps([bytes(a).hex() for a in args], separators=(",", ":")).encode()


def decode_args(raw: bytes) -> List[bytes]:
    try:
        items = json.loads(raw.decode())
        return [bytes.fromhex(x) for x in items]
    except (ValueError, TypeError, UnicodeDecodeError) as exc:
        raise ContractRevert(f"malformed calldata: {exc}") from exc


def encode_uint(value: int) -> bytes:
    return value.to_bytes(32, "big")


def decode_uint(raw: bytes) -> int:
    return int.from_bytes(raw, "big")


def contract_address(uri: str) -> bytes:
    return crypto.address(uri.encode())


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    sender: bytes
    sender_public: bytes
    target: str
    function: str
    args: bytes
    value: int
    seq: int
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        target = self.target.encode()
        fn = self.function.encode()
        return b"".join([
            b"iotaccess/tx/v1",
            self.sender,
            self.sender_public,
            struct.pack(">I", len(target)), target,
            struct.pack(">I", len(fn)), fn,
            struct.pack(">I", len(self.args)), self.args,
            encode_uint(self.value),
            struct.pack(">Q", self.seq),
        ])

    @classmethod
    def build(
        cls,
        keys: crypto.LedgerKeyPair,
        target: str,
        function: str,
        args: Sequence[bytes],
        value: int = 0,
        seq: int = 0,
    ) -> "Transaction":
        unsigned = cls(keys.address, keys.public, target, function, encode_args(args), value, seq)
        return replace(unsigned, signature=keys.sign(unsigned.signing_payload()))

    @property
    def tx_id(self) -> bytes:
        return crypto.hash(self.signing_payload() + self.signature)

    @property
    def calldata_size(self) -> int:
        try:
            raw = decode_args(self.args)
        except ContractRevert:
            return len(self.args)
        return len(self.function.encode()) + sum(len(a) for a in raw)


@dataclass(frozen=True)
class LedgerEvent:
    kind: str
    contract: str
    args: Tuple[Tuple[str, bytes], ...]
    height: int
    index: int
    tx_id: bytes

    def __getitem__(self, name: str) -> bytes:
        for key, value in self.args:
            if key == name:
                return value
        raise KeyError(name)

    def get(self, name: str, default=None):
        try:
            return self[name]
        except KeyError:
            return default

    @property
    def arity(self) -> int:
        return len(self.args)

    def to_json(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "contract": self.contract,
            "height": self.height,
            "index": self.index,
            "tx_id": self.tx_id.hex(),
            "args": {k: v.hex() for k, v in self.args},
        }


@dataclass(frozen=True)
class Receipt:
    tx_id: bytes
    height: int
    status: str
    events: Tuple[LedgerEvent, ...]
    cost: int
    error: Optional[str] = None
    result: Any = None

    @property
    def ok(self) -> bool:
        return self.status == OK


@dataclass(frozen=True)
class Block:
    height: int
    transactions: Tuple[Transaction, ...]
    receipts: Tuple[Receipt, ...]
    events: Tuple[LedgerEvent, ...]

    def to_json(self) -> Dict[str, Any]:
        txs = []
        for tx, rc in zip(self.transactions, self.receipts):
            txs.append({
                "tx_id": tx.tx_id.hex(),
                "sender": tx.sender.hex(),
                "sender_public": tx.sender_public.hex(),
                "target": tx.target,
                "function": tx.function,
                "args": [a.hex() for a in decode_args(tx.args)],
                "value": tx.value,
                "seq": tx.seq,
                "signature": tx.signature.hex(),
                "status": rc.status,
                "error": rc.error,
                "cost": rc.cost,
            })
        return {
            "kind": "block",
            "height": self.height,
            "txs": txs,
            "events": [e.to_json() for e in self.events],
        }


# ---------------------------------------------------------------------------
# Contract plumbing
# ---------------------------------------------------------------------------

class Contract:
    """Base class for contracts hosted by :class:`Ledger`.

    Subclasses keep all mutable state in ``self.storage`` so the ledger can
    snapshot and restore it around each call, and expose callable methods
    through ``dispatch``.
    """

    uri: str
    owner: bytes

    def __init__(self, uri: str, owner: bytes):
        self.uri = uri
        self.owner = owner
        self.storage: Dict[str, Any] = {}

    @property
    def address(self) -> bytes:
        return contract_address(self.uri)

    def dispatch(self, ctx: "CallContext", function: str, args: List[bytes]) -> Any:
        raise NotImplementedError


class CallContext:
    """What a contract sees while executing one transaction."""

    def __init__(self, ledger: "Ledger", contract: Contract, tx: Transaction, height: int):
        self._ledger = ledger
        self.contract = contract
        self.sender = tx.sender
        self.sender_public = tx.sender_public
        self.value = tx.value
        self.height = height
        self.tx_id = tx.tx_id
        self.storage_writes = 0
        self.events: List[LedgerEvent] = []

    def write(self, slots: int = 1) -> None:
        self.storage_writes += slots

    def emit(self, kind: str, args: Sequence[Tuple[str, bytes]]) -> LedgerEvent:
        event = LedgerEvent(
            kind, self.contract.uri, tuple((k, bytes(v)) for k, v in args),
            self.height, len(self.events), self.tx_id,
        )
        self.events.append(event)
        return event

    def transfer(self, to: bytes, amount: int) -> None:
        """Move funds out of the contract's own account."""
        self._ledger._move(self.contract.address, to, amount)


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

class Subscription:
    """Cursor over the ledger's event log, starting at genesis."""

    def __init__(self, ledger: "Ledger", kind: Optional[str], contract: Optional[str]):
        self._ledger = ledger
        self.kind = kind
        self.contract = contract
        self._cursor = 0

    def _match(self, ev: LedgerEvent) -> bool:
        return (self.kind is None or ev.kind == self.kind) and (
            self.contract is None or ev.contract == self.contract
        )

    def poll(self) -> List[LedgerEvent]:
        log = self._ledger.events
        fresh = [e for e in log[self._cursor:] if self._match(e)]
        self._cursor = len(log)
        return fresh

    def __iter__(self) -> Iterator[LedgerEvent]:
        return iter(self.poll())


class Ledger:
    def __init__(self):
        self.balances: Dict[bytes, int] = {}
        self.public_keys: Dict[bytes, bytes] = {}
        self.contracts: Dict[str, Contract] = {}
        self.blocks: List[Block] = [Block(0, (), (), ())]
        self.events: List[LedgerEvent] = []
        self.minted = 0
        self.allocations: List[Tuple[bytes, int]] = []
        self._last_seq: Dict[bytes, int] = {}

    # -- accounts ----------------------------------------------------------

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    def create_account(self, ledger_public_key: bytes) -> bytes:
        addr = crypto.address(ledger_public_key)
        self.balances.setdefault(addr, 0)
        self.public_keys.setdefault(addr, bytes(ledger_public_key))
        return addr

    def fund(self, addr: bytes, amount: int) -> int:
        if amount < 0:
            raise ValueError("amount must be non-negative")
        if addr not in self.balances:
            raise UnknownAccount(addr.hex())
        self.balances[addr] += amount
        self.minted += amount
        self.allocations.append((addr, amount))
        return self.balances[addr]

    def balance(self, addr: bytes) -> int:
        return self.balances.get(addr, 0)

    def next_seq(self, addr: bytes) -> int:
        return self._last_seq.get(addr, -1) + 1

    def total_supply(self) -> int:
        return sum(self.balances.values())

    def conserved(self) -> bool:
        return self.total_supply() == self.minted and all(v >= 0 for v in self.balances.values())

    def _move(self, src: bytes, dst: bytes, amount: int) -> None:
        if amount < 0:
            raise ValueError("negative transfer")
        if self.balances.get(src, 0) < amount:
            raise InsufficientBalance(src.hex())
        self.balances[src] -= amount
        self.balances[dst] = self.balances.get(dst, 0) + amount

    # -- contracts ---------------------------------------------------------

    def deploy(self, contract: Contract) -> str:
        if contract.uri in self.contracts:
            raise LedgerError(f"contract {contract.uri} already deployed")
        self.contracts[contract.uri] = contract
        self.balances.setdefault(contract.address, 0)
        return contract.uri

    def contract(self, uri: str) -> Contract:
        try:
            return self.contracts[uri]
        except KeyError:
            raise UnknownContract(uri) from None

    # -- execution ---------------------------------------------------------

    def submit(self, tx: Transaction) -> Receipt:
        crypto.verify_signature(tx.sender_public, tx.signing_payload(), tx.signature)
        if crypto.address(tx.sender_public) != tx.sender:
            raise BadSignature("sender address does not match public key")
        contract = self.contract(tx.target)
        if tx.seq <= self._last_seq.get(tx.sender, -1):
            raise BadSequence(f"seq {tx.seq} not above {self._last_seq.get(tx.sender)}")
        if tx.value < 0 or self.balances.get(tx.sender, 0) < tx.value:
            raise InsufficientBalance(tx.sender.hex())

        self._last_seq[tx.sender] = tx.seq
        self.public_keys.setdefault(tx.sender, tx.sender_public)
        self.balances.setdefault(tx.sender, 0)
        height = self.height + 1
        balances_before = dict(self.balances)
        storage_before = copy.deepcopy(contract.storage)
        ctx = CallContext(self, contract, tx, height)
        self._move(tx.sender, contract.address, tx.value)
        try:
            result = contract.dispatch(ctx, tx.function, decode_args(tx.args))
        except ContractRevert as exc:
            self.balances = balances_before
            contract.storage = storage_before
            receipt = Receipt(tx.tx_id, height, REVERTED, (), self._cost(tx, 0), exc.code)
            self._append(tx, receipt)
            return receipt
        receipt = Receipt(
            tx.tx_id, height, OK, tuple(ctx.events), self._cost(tx, ctx.storage_writes),
            result=result,
        )
        self._append(tx, receipt)
        return receipt

    def _cost(self, tx: Transaction, writes: int) -> int:
        return BASE_COST + CALLDATA_BYTE_COST * tx.calldata_size + STORAGE_WRITE_COST * writes

    def _append(self, tx: Transaction, receipt: Receipt) -> None:
        block = Block(receipt.height, (tx,), (receipt,), receipt.events)
        self.blocks.append(block)
        self.events.extend(receipt.events)

    def mine_empty(self, count: int = 1) -> int:
        for _ in range(count):
            self.blocks.append(Block(self.height + 1, (), (), ()))
        return self.height

    # -- observation -------------------------------------------------------

    def subscribe(self, kind: Optional[str] = None, contract: Optional[str] = None) -> Subscription:
        return Subscription(self, kind, contract)

    def transactions(self) -> Iterator[Tuple[Transaction, Receipt]]:
        for block in self.blocks:
            yield from zip(block.transactions, block.receipts)

    def export_trace(self, out: IO[str]) -> None:
        """Write one JSON object per block, hex-encoding byte fields."""
        for block in self.blocks:
            out.write(json.dumps(block.to_json(), separators=(",", ":")) + "\n")
