import io
import json
from dataclasses import FrozenInstanceError, replace

import pytest

from iotaccess import crypto
from iotaccess.ledger import (
    BASE_COST,
    CALLDATA_BYTE_COST,
    DEPOSIT,
    KEY,
    STORAGE_WRITE_COST,
    BadSequence,
    BadSignature,
    InsufficientBalance,
    Ledger,
    Transaction,
    UnknownAccount,
    UnknownContract,
)

from conftest import CONTRACT, RESOURCE, enckeys, keypair, make_token


def request_args(token=None, enc=None):
    return [token or make_token(), RESOURCE.encode(), enc or enckeys("alice").public]


class TestAccounts:
    def test_create_is_idempotent(self):
        ledger = Ledger()
        kp = keypair("a")
        assert ledger.create_account(kp.public) == ledger.create_account(kp.public) == kp.address

    def test_fund_additive(self):
        ledger = Ledger()
        addr = ledger.create_account(keypair("a").public)
        assert ledger.fund(addr, 0) == 0
        ledger.fund(addr, 100)
        assert ledger.fund(addr, 50) == 150
        assert ledger.minted == 150

    def test_fund_unknown(self):
        with pytest.raises(UnknownAccount):
            Ledger().fund(b"\x00" * 20, 1)

    def test_fund_negative(self):
        ledger = Ledger()
        addr = ledger.create_account(keypair("a").public)
        with pytest.raises(ValueError):
            ledger.fund(addr, -1)


class TestSubmit:
    def test_bad_signature_appends_nothing(self, registered):
        c = registered
        tx = Transaction.build(c.alice, CONTRACT, "requestS", request_args(), 10, 0)
        forged = replace(tx, value=1)
        height = c.ledger.height
        with pytest.raises(BadSignature):
            c.ledger.submit(forged)
        assert c.ledger.height == height

    def test_sender_must_match_key(self, registered):
        c = registered
        tx = Transaction.build(c.alice, CONTRACT, "requestS", request_args(), 10, 0)
        with pytest.raises(BadSignature):
            c.ledger.submit(replace(tx, sender=c.bob.address))

    def test_insufficient_balance(self, registered):
        c = registered
        with pytest.raises(InsufficientBalance):
            c.call(c.alice, "requestS", request_args(), value=101)

    def test_unknown_contract(self, registered):
        c = registered
        tx = Transaction.build(c.alice, "ledger://nowhere", "requestS", request_args(), 10, 0)
        with pytest.raises(UnknownContract):
            c.ledger.submit(tx)

    def test_sequence_strictly_increases(self, registered):
        c = registered
        tx = Transaction.build(c.alice, CONTRACT, "requestS", request_args(make_token(1)), 10, 5)
        assert c.ledger.submit(tx).ok
        again = Transaction.build(c.alice, CONTRACT, "requestS", request_args(make_token(2)), 10, 5)
        with pytest.raises(BadSequence):
            c.ledger.submit(again)

    def test_revert_is_atomic(self, registered):
        c = registered
        before = dict(c.ledger.balances)
        storage = repr(c.contract.storage)
        receipt = c.call(c.alice, "requestS", request_args(), value=9)
        assert not receipt.ok and receipt.error == "InsufficientDeposit"
        assert receipt.events == ()
        assert c.ledger.balances == before
        assert repr(c.contract.storage) == storage
        # the reverted call is still on record
        assert c.ledger.blocks[-1].receipts[0].error == "InsufficientDeposit"

    def test_valid_request_emits_one_deposit(self, registered):
        receipt = registered.call(registered.alice, "requestS", request_args(), value=10)
        assert receipt.ok
        assert [e.kind for e in receipt.events] == [DEPOSIT]

    def test_cost_formula(self, registered):
        c = registered
        args = request_args()
        receipt = c.call(c.alice, "requestS", args, value=10)
        calldata = len(b"requestS") + sum(len(a) for a in args)
        assert receipt.cost == BASE_COST + CALLDATA_BYTE_COST * calldata + STORAGE_WRITE_COST * 7

    def test_cost_never_moves_currency(self, registered):
        c = registered
        c.call(c.alice, "requestS", request_args(), value=10)
        assert c.ledger.balance(c.alice.address) == 90
        assert c.ledger.conserved()


class TestBlocksAndEvents:
    def test_one_tx_per_block_and_contiguous(self, registered):
        c = registered
        c.call(c.alice, "requestS", request_args(make_token(1)), value=10)
        c.ledger.mine_empty(3)
        c.call(c.bob, "requestS", request_args(make_token(2), enckeys("bob").public), value=10)
        heights = [b.height for b in c.ledger.blocks]
        assert heights == list(range(len(heights)))
        assert all(len(b.transactions) <= 1 for b in c.ledger.blocks)

    def test_blocks_and_events_are_frozen(self, registered):
        c = registered
        c.call(c.alice, "requestS", request_args(), value=10)
        with pytest.raises(FrozenInstanceError):
            c.ledger.blocks[-1].height = 99
        with pytest.raises(FrozenInstanceError):
            c.ledger.events[-1].kind = KEY
        assert isinstance(c.ledger.blocks[-1].transactions, tuple)

    def test_event_order(self, registered):
        c = registered
        c.call(c.alice, "requestS", request_args(make_token(1)), value=10)
        c.call(c.bob, "requestS", request_args(make_token(2), enckeys("bob").public), value=10)
        keys = [(e.height, e.index) for e in c.ledger.events]
        assert keys == sorted(keys)


class TestSubscribe:
    def test_broadcast_to_all(self, registered):
        c = registered
        s1, s2 = c.ledger.subscribe(), c.ledger.subscribe()
        c.call(c.alice, "requestS", request_args(), value=10)
        a, b = s1.poll(), s2.poll()
        assert a == b and len(a) == 1

    def test_exactly_once(self, registered):
        c = registered
        sub = c.ledger.subscribe(DEPOSIT)
        c.call(c.alice, "requestS", request_args(), value=10)
        assert len(sub.poll()) == 1
        assert sub.poll() == []

    def test_late_subscriber_replays_history(self, registered):
        c = registered
        c.call(c.alice, "requestS", request_args(make_token(1)), value=10)
        c.call(c.bob, "requestS", request_args(make_token(2), enckeys("bob").public), value=10)
        late = c.ledger.subscribe()
        assert [e.height for e in late.poll()] == [e.height for e in c.ledger.events]

    def test_kind_filter(self, registered):
        c = registered
        sub = c.ledger.subscribe(KEY)
        c.call(c.alice, "requestS", request_args(), value=10)
        assert sub.poll() == []

    def test_contract_filter(self, registered):
        sub = registered.ledger.subscribe(contract="ledger://other")
        registered.call(registered.alice, "requestS", request_args(), value=10)
        assert sub.poll() == []


def test_export_trace_one_object_per_block(registered):
    c = registered
    c.call(c.alice, "requestS", request_args(), value=10)
    c.ledger.mine_empty()
    buf = io.StringIO()
    c.ledger.export_trace(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(c.ledger.blocks)
    block = json.loads(lines[2])
    assert list(block) == ["kind", "height", "txs", "events"]
    tx = block["txs"][0]
    assert tx["function"] == "requestS"
    assert bytes.fromhex(tx["sender"]) == c.alice.address
    assert block["events"][0]["args"]["token"] == make_token().hex()


def test_identical_sequences_identical_logs():
    def build():
        ledger = Ledger()
        from iotaccess.contract import AccessContract, register_args
        owner, acp, alice = keypair("owner"), keypair("acp"), keypair("alice")
        ledger.deploy(AccessContract(CONTRACT, owner.address))
        ledger.fund(ledger.create_account(alice.public), 50)
        ledger.submit(Transaction.build(owner, CONTRACT, "register_resource",
                                        register_args(RESOURCE, "p", acp.address, 5), 0, 0))
        ledger.submit(Transaction.build(alice, CONTRACT, "requestS", request_args(), 5, 0))
        buf = io.StringIO()
        ledger.export_trace(buf)
        return buf.getvalue(), dict(ledger.balances)

    assert build() == build()
