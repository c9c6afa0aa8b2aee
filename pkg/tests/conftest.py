import random
import sys
from dataclasses import dataclass

import pytest

from iotaccess import crypto
from iotaccess.contract import AccessContract, register_args
from iotaccess.ledger import Ledger, Transaction

CONTRACT = "ledger://test/contract"
RESOURCE = "coap://thing.test/r"
POLICY = "acp://test/policy"


def keypair(name: str) -> crypto.LedgerKeyPair:
    return crypto.LedgerKeyPair.generate(random.Random(f"ledger/{name}").randbytes)


def enckeys(name: str) -> crypto.EncKeyPair:
    return crypto.EncKeyPair.generate(random.Random(f"enc/{name}").randbytes)


def make_token(counter: int = 1, thing_id: bytes = b"\x11" * 16) -> bytes:
    return crypto.Token(thing_id, counter, bytes([counter % 256]) * 16).to_bytes()


@dataclass
class Chain:
    ledger: Ledger
    contract: AccessContract
    owner: crypto.LedgerKeyPair
    acp: crypto.LedgerKeyPair
    alice: crypto.LedgerKeyPair
    bob: crypto.LedgerKeyPair

    def call(self, who, function, args, value=0):
        tx = Transaction.build(who, CONTRACT, function, args, value,
                               self.ledger.next_seq(who.address))
        return self.ledger.submit(tx)

    def register(self, cost=10, credits=None, uri=RESOURCE, who=None):
        return self.call(who or self.owner, "register_resource",
                         register_args(uri, POLICY, self.acp.address, cost, credits or {}))


def make_chain() -> Chain:
    ledger = Ledger()
    owner, acp, alice, bob = (keypair(n) for n in ("owner", "acp", "alice", "bob"))
    contract = AccessContract(CONTRACT, owner.address, timeout=20)
    ledger.deploy(contract)
    for kp in (owner, acp):
        ledger.create_account(kp.public)
    for kp in (alice, bob):
        ledger.fund(ledger.create_account(kp.public), 100)
    return Chain(ledger, contract, owner, acp, alice, bob)


@pytest.fixture
def chain():
    return make_chain()


@pytest.fixture
def registered(chain):
    assert chain.register().ok
    return chain


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
