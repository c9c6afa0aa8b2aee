import random

import pytest

from iotaccess.acp import ACP, PolicyRecord
from iotaccess.thing import Thing
from iotaccess.user import (
    FailureReason,
    IllegalTransition,
    SessionFailed,
    SessionRecord,
    SessionState,
    UserAgent,
)

from conftest import CONTRACT, POLICY, RESOURCE, enckeys

SHARED = bytes(range(32))
THING_ID = b"\x11" * 16


class DirectChannel:
    def __init__(self, thing):
        self.thing = thing

    def request(self, uri, protocol, challenge):
        return self.thing.handle_request(uri, protocol, challenge)

    def exchange(self, token, sealed):
        return self.thing.handle_encrypted_request(token, sealed)


@pytest.fixture
def world(registered):
    c = registered
    policy = PolicyRecord(POLICY)
    policy.allow(c.alice.address, enckeys("alice").public)
    acp = ACP(c.acp, {POLICY: policy}, {THING_ID: SHARED}, c.ledger, CONTRACT,
              rng=random.Random("acp").randbytes)
    thing = Thing(THING_ID, SHARED, {RESOURCE: CONTRACT}, rng=random.Random("thing").randbytes)

    def tick():
        if not acp.step():
            c.ledger.mine_empty()

    def agent(who=None, enc=None, tick_fn=tick, **kw):
        return UserAgent(who or c.alice, enc or enckeys("alice"), c.ledger, DirectChannel(thing),
                         tick=tick_fn, rng=random.Random("user").randbytes, **kw)

    return c, acp, thing, agent


class TestStateMachine:
    def test_forward_only(self):
        rec = SessionRecord("S", RESOURCE, b"\x00" * 20)
        rec.advance(SessionState.DEPOSITED)
        with pytest.raises(IllegalTransition):
            rec.advance(SessionState.REQUESTED_THING)

    def test_terminal(self):
        rec = SessionRecord("S", RESOURCE, b"\x00" * 20)
        rec.fail(FailureReason.TIMEOUT_NO_KEY)
        with pytest.raises(IllegalTransition):
            rec.advance(SessionState.COMPLETED)
        with pytest.raises(IllegalTransition):
            rec.fail(FailureReason.TIMEOUT_NO_KEY)

    def test_fail_from_any_live_state(self):
        for state in (SessionState.NEW, SessionState.DEPOSITED, SessionState.KEYED):
            rec = SessionRecord("S", RESOURCE, b"\x00" * 20, state=state)
            rec.fail(FailureReason.THING_CHANNEL_FAILED, "x")
            assert rec.state is SessionState.FAILED and rec.evidence


class TestSessions:
    @pytest.mark.parametrize("protocol", ["S", "1", "2"])
    def test_honest(self, world, protocol):
        c, acp, thing, agent = world
        rec = agent().run_session(RESOURCE, protocol, order_payload=b"latte")
        assert rec.completed
        assert rec.receipt == b"receipt:latte"
        assert rec.sk == acp.session_keys[rec.token]
        assert rec.deposit == 10
        assert c.ledger.balance(c.owner.address) == 10

    def test_deposit_rejected(self, world):
        c, _, _, agent = world
        rec = agent().run_session(RESOURCE, "S", deposit=1)
        assert rec.state is SessionState.FAILED
        assert rec.reason is FailureReason.DEPOSIT_REJECTED
        assert c.ledger.balance(c.alice.address) == 100

    def test_timeout_reclaims(self, world):
        c, _, _, agent = world
        rec = agent(tick_fn=c.ledger.mine_empty).run_session(RESOURCE, "1")
        assert rec.reason is FailureReason.TIMEOUT_NO_KEY
        assert rec.refund == 10
        assert c.ledger.balance(c.alice.address) == 100

    def test_thing_channel_failure(self, world):
        _, _, _, agent = world
        rec = agent().run_session("coap://missing", "S")
        assert rec.reason is FailureReason.THING_CHANNEL_FAILED
        assert rec.deposit is None

    def test_unseal_failure(self, world):
        c, acp, _, agent = world
        # the ACP seals to the registered key; this agent holds a different one
        rec = agent(enc=enckeys("other"), declared_enc_public=enckeys("alice").public
                    ).run_session(RESOURCE, "S")
        assert rec.reason is FailureReason.KEY_UNSEAL_FAILED
        assert c.ledger.balance(c.owner.address) == 10

    def test_await_key_ignores_other_users(self, world):
        c, acp, thing, agent = world
        acp.policies[POLICY].allow(c.bob.address, enckeys("bob").public)
        bob = agent(who=c.bob, enc=enckeys("bob"))
        assert bob.run_session(RESOURCE, "S").completed
        # alice watches for bob's token under her own key: nothing matches
        alice = agent(key_timeout=3, tick_fn=c.ledger.mine_empty)
        with pytest.raises(SessionFailed) as exc:
            alice.await_key(c.ledger.events[-1]["token"], CONTRACT)
        assert exc.value.reason is FailureReason.TIMEOUT_NO_KEY

    def test_sk_never_plain_on_ledger(self, world):
        c, _, _, agent = world
        rec = agent().run_session(RESOURCE, "2")
        for ev in c.ledger.events:
            for _, value in ev.args:
                assert rec.sk not in value
        for tx, _ in c.ledger.transactions():
            assert rec.sk not in tx.args and rec.sk.hex().encode() not in tx.args
