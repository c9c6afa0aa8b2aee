"""Scenario harness.

Wires a ledger, the access contract, one Thing, one ACP and a roster of
users together, optionally injects one adversary, runs the configured
sessions in order and produces a :class:`ScenarioReport`.  Every random
value is drawn from streams seeded by ``config.seed``, so a report's trace
is a pure function of its configuration.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from . import crypto
from .acp import ACP, PolicyRecord
from .contract import DEFAULT_TIMEOUT, REQUEST_FUNCTIONS, AccessContract, register_args
from .ledger import DEPOSIT, KEY, Ledger, Transaction
from .thing import PROTOCOLS, Thing, ThingResponse
from .user import SessionRecord, UserAgent

SCHEMA_VERSION = 1

RESOURCE_URI = "coap://kitchen.example/coffee"
POLICY_URI = "acp://company-a.example/employees"
CONTRACT_URI = "ledger://contracts/coffee"

# Gas per function as published for the original EVM deployment.  Shown next
# to the simulated meter for inspection; the two are not comparable.
REFERENCE_GAS = {
    "requestS": 123186,
    "request1": 128218,
    "request2": 253488,
    "authorize1": 57950,
    "authorize2": 63746,
}

ADVERSARY_KINDS = (
    "NONE",
    "FAKE_THING",
    "UNAUTHORIZED_USER",
    "IDENTITY_LIE",
    "TAMPER",
    "REPLAY_TOKEN",
    "ROGUE_ACP",
)

# Taggable fields and the protocols in which they exist.  Channel fields are
# flipped in flight between user and Thing; ``tx`` is the user's signed
# request transaction, flipped after signing.
TAMPER_FIELDS: Dict[str, Tuple[str, ...]] = {
    "token.thing_id": ("S", "1", "2"),
    "token.counter": ("S", "1", "2"),
    "token.nonce": ("S", "1", "2"),
    "contract_uri": ("S", "1", "2"),
    "hmac_token": ("1", "2"),
    "challenge_response": ("2",),
    "challenge": ("2",),
    "order": ("S", "1", "2"),
    "receipt": ("S", "1", "2"),
    "tx": ("S", "1", "2"),
}

_TOKEN_SLICES = {
    "token.thing_id": slice(0, crypto.THING_ID_SIZE),
    "token.counter": slice(crypto.THING_ID_SIZE, crypto.THING_ID_SIZE + 8),
    "token.nonce": slice(crypto.THING_ID_SIZE + 8, crypto.TOKEN_SIZE),
}


class ConfigError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


def tamper_fields(protocol: str) -> List[str]:
    return [f for f, protos in TAMPER_FIELDS.items() if protocol in protos]


def flip(data: bytes, position: int) -> bytes:
    if not 0 <= position < len(data):
        raise ConfigError(f"tamper position {position} outside field of {len(data)} bytes")
    out = bytearray(data)
    out[position] ^= 0xFF
    return bytes(out)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class UserSpec:
    name: str
    funding: int = 100
    authorized: bool = True


@dataclass
class SessionSpec:
    user: str
    order: str = "espresso"
    deposit: Optional[int] = None


@dataclass
class AdversarySpec:
    kind: str = "NONE"
    target: int = -1
    field: Optional[str] = None
    position: int = 0
    # REPLAY_TOKEN: session whose Thing response is replayed (default target - 1)
    source: Optional[int] = None

    @property
    def label(self) -> str:
        return f"TAMPER:{self.field}" if self.kind == "TAMPER" else self.kind


@dataclass
class ScenarioConfig:
    protocol: str = "2"
    seed: int = 0
    timeout: int = DEFAULT_TIMEOUT
    key_timeout: Optional[int] = None
    cost: int = 10
    free_credits: Dict[str, int] = field(default_factory=dict)
    users: List[UserSpec] = field(default_factory=lambda: [UserSpec("alice")])
    sessions: List[SessionSpec] = field(default_factory=lambda: [SessionSpec("alice")])
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    acp_online: bool = True
    acp_verify_thing_on_challenge: bool = True
    expect: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.timeout < 3:
            raise ConfigError("timeout must be at least 3 blocks")
        if self.cost < 0:
            raise ConfigError("cost must be non-negative")
        names = [u.name for u in self.users]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate user names")
        if not self.sessions:
            raise ConfigError("at least one session is required")
        for s in self.sessions:
            if s.user not in names:
                raise ConfigError(f"session user {s.user!r} is not in the roster")
        for name in self.free_credits:
            if name not in names:
                raise ConfigError(f"free credits for unknown user {name!r}")
        adv = self.adversary
        if adv.kind not in ADVERSARY_KINDS:
            raise ConfigError(f"unknown adversary kind {adv.kind!r}")
        if not -len(self.sessions) <= adv.target < len(self.sessions):
            raise ConfigError("adversary target is not a session index")
        if adv.kind == "TAMPER":
            if adv.field not in TAMPER_FIELDS:
                raise ConfigError(f"unknown tamper field {adv.field!r}")
            if self.protocol not in TAMPER_FIELDS[adv.field]:
                raise ConfigError(f"field {adv.field} does not exist under protocol {self.protocol}")
        if adv.kind == "REPLAY_TOKEN":
            source = self.replay_source
            if not 0 <= source < self.target_index:
                raise ConfigError("REPLAY_TOKEN needs an earlier session to replay from")

    @property
    def target_index(self) -> int:
        return self.adversary.target % len(self.sessions)

    @property
    def replay_source(self) -> int:
        src = self.adversary.source
        return self.target_index - 1 if src is None else src

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "users" in data:
                data["users"] = [UserSpec(**u) for u in data["users"]]
            if "sessions" in data:
                data["sessions"] = [SessionSpec(**s) for s in data["sessions"]]
            if "adversary" in data:
                data["adversary"] = AdversarySpec(**data["adversary"])
            if "protocol" in data:
                data["protocol"] = str(data["protocol"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def coffee_config(protocol: str = "2", seed: int = 0) -> ScenarioConfig:
    """Shared-kitchen coffee machine: three free cups, then pay per cup."""
    return ScenarioConfig(
        protocol=protocol,
        seed=seed,
        free_credits={"alice": 3},
        sessions=[SessionSpec("alice", order) for order in
                  ("espresso", "latte", "cappuccino", "americano")],
        expect={"transfers": [0, 0, 0, 10]},
    )


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------

def _stream(seed: int, name: str) -> crypto.RandomSource:
    return random.Random(f"{seed}/{name}").randbytes


def _hexfields(fields: Dict[str, Optional[bytes]]) -> Dict[str, Optional[str]]:
    return {k: (None if v is None else v.hex()) for k, v in fields.items()}


class Channel:
    """Direct user<->Thing link with an adversary's hands on it."""

    def __init__(self, world: "World"):
        self.world = world
        self.messages: List[Dict[str, Any]] = []
        self.field_lengths: Dict[str, int] = {}

    def _log(self, kind: str, fields: Dict[str, Optional[bytes]]) -> None:
        self.messages.append({
            "kind": "message",
            "seq": len(self.messages),
            "session": self.world.current,
            "height": self.world.ledger.height,
            "type": kind,
            "fields": _hexfields(fields),
        })

    def _tamper(self, name: str, data: Optional[bytes]) -> Optional[bytes]:
        if data is None:
            return None
        self.field_lengths.setdefault(name, len(data))
        adv = self.world.config.adversary
        if adv.kind == "TAMPER" and adv.field == name and self.world.attacking:
            return flip(data, adv.position)
        return data

    def request(self, uri_resource: str, protocol: str,
                challenge: Optional[bytes]) -> ThingResponse:
        w = self.world
        challenge = self._tamper("challenge", challenge)
        self._log("THING_REQUEST", {
            "uri_resource": uri_resource.encode(), "protocol": protocol.encode(),
            "challenge": challenge,
        })
        if w.attacking and w.config.adversary.kind == "REPLAY_TOKEN":
            response = w.responses[w.config.replay_source]
        else:
            thing = w.thing_for_current()
            response = thing.handle_request(uri_resource, protocol, challenge)
            w.thing_keys[response.token.to_bytes()] = thing.session_key(response.token)
        w.responses[w.current] = response

        raw = response.token.to_bytes()
        for name, sl in _TOKEN_SLICES.items():
            part = self._tamper(name, raw[sl])
            raw = raw[:sl.start] + part + raw[sl.stop:]
        uri = self._tamper("contract_uri", response.contract_uri.encode())
        out = ThingResponse(
            crypto.Token.from_bytes(raw),
            uri.decode("utf-8", errors="replace"),
            self._tamper("hmac_token", response.hmac_token),
            self._tamper("challenge_response", response.challenge_response),
        )
        self._log("THING_RESPONSE", {
            "token": raw, "contract_uri": uri, "hmac_token": out.hmac_token,
            "challenge_response": out.challenge_response,
        })
        return out

    def exchange(self, token: crypto.Token, sealed_request: bytes) -> bytes:
        sealed_request = self._tamper("order", sealed_request)
        self._log("ORDER", {"token": token.to_bytes(), "sealed": sealed_request})
        try:
            reply = self.world.thing_for_current().handle_encrypted_request(token, sealed_request)
        except Exception as exc:
            self._log("ABORT", {"error": type(exc).__name__.encode()})
            raise
        reply = self._tamper("receipt", reply)
        self._log("RECEIPT", {"sealed": reply})
        return reply


class RogueACP:
    """Impostor that answers every DEPOSIT with an authorize of its own."""

    def __init__(self, ledger: Ledger, rng: crypto.RandomSource):
        self.ledger = ledger
        self.keys = crypto.LedgerKeyPair.generate(rng)
        self._rng = rng
        self._sub = ledger.subscribe(DEPOSIT, CONTRACT_URI)
        ledger.create_account(self.keys.public)
        self.receipts = []

    @property
    def address(self) -> bytes:
        return self.keys.address

    def step(self) -> None:
        for ev in self._sub.poll():
            sealed = crypto.seal_asym(ev["user_enc_public"], self._rng(crypto.KEY_SIZE), self._rng)
            args = [ev["p_user"], ev["token"], ev["uri_resource"], sealed.to_bytes()]
            function = "authorize1"
            if ev.get("challenge") is not None:
                function = "authorize2"
                args.append(self._rng(crypto.DIGEST_SIZE))
            tx = Transaction.build(self.keys, CONTRACT_URI, function, args,
                                   seq=self.ledger.next_seq(self.address))
            self.receipts.append(self.ledger.submit(tx))


class World:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        seed = config.seed
        self.rng = random.Random(f"{seed}/world")
        self.ledger = Ledger()
        self.current = 0
        self.responses: Dict[int, ThingResponse] = {}
        self.thing_keys: Dict[bytes, Optional[bytes]] = {}

        self.operator = crypto.LedgerKeyPair.generate(_stream(seed, "operator"))
        self.acp_keys = crypto.LedgerKeyPair.generate(_stream(seed, "acp/ledger"))
        self.user_keys: Dict[str, Tuple[crypto.LedgerKeyPair, crypto.EncKeyPair]] = {}
        names = [u.name for u in config.users]
        if config.adversary.kind == "UNAUTHORIZED_USER":
            names.append("mallory")
        for name in names:
            self.user_keys[name] = (
                crypto.LedgerKeyPair.generate(_stream(seed, f"user/{name}/ledger")),
                crypto.EncKeyPair.generate(_stream(seed, f"user/{name}/enc")),
            )

        thing_rng = _stream(seed, "thing")
        self.thing_id = thing_rng(crypto.THING_ID_SIZE)
        shared_key = thing_rng(crypto.KEY_SIZE)
        self.thing = Thing(self.thing_id, shared_key, {RESOURCE_URI: CONTRACT_URI}, rng=thing_rng)
        self.fake_thing = None
        if config.adversary.kind == "FAKE_THING":
            fake_rng = _stream(seed, "fake-thing")
            self.fake_thing = Thing(
                self.thing_id, fake_rng(crypto.KEY_SIZE), {RESOURCE_URI: CONTRACT_URI}, rng=fake_rng,
            )

        # accounts and funding
        self.contract = AccessContract(CONTRACT_URI, self.operator.address, config.timeout)
        self.ledger.deploy(self.contract)
        self.ledger.create_account(self.operator.public)
        self.ledger.create_account(self.acp_keys.public)
        funding = {u.name: u.funding for u in config.users}
        funding.setdefault("mallory", 100)
        for name, (lk, _) in self.user_keys.items():
            self.ledger.fund(self.ledger.create_account(lk.public), funding[name])

        credits = {self.user_keys[n][0].address: c for n, c in config.free_credits.items()}
        reg = self.ledger.submit(Transaction.build(
            self.operator, CONTRACT_URI, "register_resource",
            register_args(RESOURCE_URI, POLICY_URI, self.acp_keys.address, config.cost, credits),
            seq=0,
        ))
        assert reg.ok, reg.error

        policy = PolicyRecord(POLICY_URI)
        for u in config.users:
            if u.authorized:
                lk, ek = self.user_keys[u.name]
                policy.allow(lk.address, ek.public)
        self.acp = ACP(
            self.acp_keys, {POLICY_URI: policy}, {self.thing_id: shared_key},
            self.ledger, CONTRACT_URI, rng=_stream(seed, "acp/seal"),
            verify_thing_on_challenge=config.acp_verify_thing_on_challenge,
        )
        self.actors: list = [self.acp] if config.acp_online else []
        self.rogue = None
        if config.adversary.kind == "ROGUE_ACP":
            self.rogue = RogueACP(self.ledger, _stream(seed, "rogue"))
            self.actors.append(self.rogue)
        self.rng.shuffle(self.actors)
        self.channel = Channel(self)
        self.tx_lengths: Dict[str, int] = {}

    # -- orchestration -----------------------------------------------------

    @property
    def attacking(self) -> bool:
        return self.config.adversary.kind != "NONE" and self.current == self.config.target_index

    def thing_for_current(self) -> Thing:
        if self.attacking and self.fake_thing is not None:
            return self.fake_thing
        return self.thing

    def tick(self) -> None:
        before = self.ledger.height
        for actor in self.actors:
            actor.step()
        if self.ledger.height == before:
            self.ledger.mine_empty()

    def submit(self, tx: Transaction):
        self.tx_lengths.setdefault("tx", len(tx.args))
        adv = self.config.adversary
        if (self.attacking and adv.kind == "TAMPER" and adv.field == "tx"
                and tx.function in REQUEST_FUNCTIONS.values()):
            tx = replace(tx, args=flip(tx.args, adv.position))
        return self.ledger.submit(tx)

    def agent_for(self, index: int, spec: SessionSpec) -> Tuple[str, UserAgent]:
        adv = self.config.adversary
        name = spec.user
        lk, ek = self.user_keys[name]
        declared = None
        if index == self.config.target_index:
            if adv.kind == "UNAUTHORIZED_USER":
                name = "mallory"
                lk, ek = self.user_keys[name]
            elif adv.kind == "IDENTITY_LIE":
                # victim's allow-listed ledger key, victim's registered
                # encryption key declared, but no access to its private half
                declared = ek.public
                ek = crypto.EncKeyPair.generate(_stream(self.config.seed, "liar/enc"))
                name = f"liar-as-{spec.user}"
        agent = UserAgent(
            lk, ek, self.ledger, self.channel, tick=self.tick,
            rng=_stream(self.config.seed, f"session/{index}"),
            key_timeout=self.config.key_timeout, declared_enc_public=declared,
            submit=self.submit,
        )
        return name, agent

    def named_addresses(self) -> Dict[str, bytes]:
        out = {name: lk.address for name, (lk, _) in self.user_keys.items()}
        out["operator"] = self.operator.address
        out["acp"] = self.acp_keys.address
        if self.rogue is not None:
            out["rogue_acp"] = self.rogue.address
        out["escrow"] = self.contract.address
        return out

    def thing_addresses(self) -> set:
        # Things hold no ledger key; these are the addresses a Thing would
        # have if it ever derived one from its identity or secrets.
        ids = {self.thing_id}
        return {crypto.address(i) for i in ids}

    def run(self) -> "ScenarioReport":
        outcomes = []
        records = []
        for index, spec in enumerate(self.config.sessions):
            self.current = index
            name, agent = self.agent_for(index, spec)
            provider_before = self.ledger.balance(self.operator.address)
            record = agent.run_session(RESOURCE_URI, self.config.protocol, spec.deposit,
                                       spec.order.encode())
            provider_delta = self.ledger.balance(self.operator.address) - provider_before
            records.append(record)
            outcomes.append(self._outcome(index, spec, name, agent, record, provider_delta))
        return ScenarioReport.build(self, outcomes, records)

    def _outcome(self, index: int, spec: SessionSpec, acting: str, agent: UserAgent,
                 record: SessionRecord, provider_delta: int) -> Dict[str, Any]:
        token = record.token
        key_emitted = token is not None and any(
            ev.kind == KEY and ev["token"] == token and ev["p_user"] == agent.ledger_keys.public
            for ev in self.ledger.events
        )
        agreement = None
        if record.sk is not None:
            agreement = record.sk == self.thing_keys.get(token) == self.acp.session_keys.get(token)
        drops = [d.reason.value for d in self.acp.drops if d.token == token]
        return {
            "kind": "session",
            "index": index,
            "user": spec.user,
            "acting": acting,
            "protocol": record.protocol,
            "state": record.state.value,
            "reason": record.reason.value if record.reason else None,
            "token": token.hex() if token else None,
            "deposit": record.deposit,
            "deposit_height": record.deposit_height,
            "key_height": record.key_height,
            "refund": record.refund,
            "key_emitted": key_emitted,
            "provider_delta": provider_delta,
            "provider_paid": provider_delta > 0,
            "completed": record.completed,
            "sk_agreement": agreement,
            "acp_drops": drops,
            "receipt": record.receipt.hex() if record.receipt else None,
            "evidence": list(record.evidence),
        }


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _cost_rows(ledger: Ledger) -> List[Dict[str, Any]]:
    by_fn: Dict[str, List[int]] = {}
    for tx, rc in ledger.transactions():
        if rc.ok:
            by_fn.setdefault(tx.function, []).append(rc.cost)
    rows = []
    for fn in sorted(by_fn):
        costs = by_fn[fn]
        rows.append({
            "kind": "cost",
            "function": fn,
            "calls": len(costs),
            "simulated": costs[0],
            "max": max(costs),
            "reference_gas": REFERENCE_GAS.get(fn),
        })
    return rows


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    sessions: List[Dict[str, Any]]
    balances: Dict[str, int]
    costs: List[Dict[str, Any]]
    conservation: bool
    thing_transactions: int
    expectations: List[Dict[str, Any]]
    lines: List[Dict[str, Any]]
    field_lengths: Dict[str, int]
    records: List[SessionRecord] = field(repr=False, default_factory=list)
    world: Optional[World] = field(repr=False, default=None)

    @property
    def ok(self) -> bool:
        return (self.conservation and self.thing_transactions == 0
                and all(e["ok"] for e in self.expectations))

    @property
    def target(self) -> Dict[str, Any]:
        return self.sessions[self.config.target_index]

    def triple(self, index: Optional[int] = None) -> Tuple[bool, bool, bool]:
        s = self.target if index is None else self.sessions[index]
        return (s["key_emitted"], s["provider_paid"], s["completed"])

    @property
    def events(self):
        return self.world.ledger.events if self.world else []

    @classmethod
    def build(cls, world: World, outcomes: List[Dict[str, Any]],
              records: List[SessionRecord]) -> "ScenarioReport":
        ledger = world.ledger
        names = world.named_addresses()
        balances = {n: ledger.balance(a) for n, a in sorted(names.items())}
        conservation = ledger.conserved() and sum(balances.values()) == ledger.minted
        thing_addrs = world.thing_addresses()
        thing_txs = sum(1 for tx, _ in ledger.transactions() if tx.sender in thing_addrs)
        costs = _cost_rows(ledger)
        expectations = _check_expectations(world.config, outcomes)

        lines: List[Dict[str, Any]] = [{
            "kind": "header",
            "schema": SCHEMA_VERSION,
            "config": world.config.to_dict(),
            "accounts": {n: a.hex() for n, a in sorted(names.items())},
            "allocations": [[a.hex(), amt] for a, amt in ledger.allocations],
        }]
        lines.extend(b.to_json() for b in ledger.blocks)
        lines.extend(world.channel.messages)
        lines.extend(outcomes)
        lines.extend(
            {"kind": "drop", "actor": "acp", "token": d.token.hex(),
             "user": d.user_address.hex(), "reason": d.reason.value, "height": d.height}
            for d in world.acp.drops
        )
        lines.append({"kind": "balances", "balances": balances, "minted": ledger.minted})
        lines.extend(costs)
        report = cls(
            world.config, outcomes, balances, costs, conservation, thing_txs, expectations,
            lines, {**world.channel.field_lengths, **world.tx_lengths}, records, world,
        )
        lines.append({
            "kind": "summary",
            "conservation": conservation,
            "thing_transactions": thing_txs,
            "expectations": expectations,
            "ok": report.ok,
        })
        return report

    def to_jsonl(self) -> str:
        return "".join(json.dumps(line, separators=(",", ":")) + "\n" for line in self.lines)

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl())


def _check_expectations(config: ScenarioConfig, outcomes: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    results = []
    expect = config.expect or {}
    if "transfers" in expect:
        actual = [o["provider_delta"] for o in outcomes]
        results.append({"name": "transfers", "expected": expect["transfers"],
                        "actual": actual, "ok": actual == expect["transfers"]})
    if "target" in expect:
        t = outcomes[config.target_index]
        actual = [t["key_emitted"], t["provider_paid"], t["completed"]]
        results.append({"name": "target", "expected": expect["target"],
                        "actual": actual, "ok": actual == list(expect["target"])})
    if "states" in expect:
        actual = [o["state"] for o in outcomes]
        results.append({"name": "states", "expected": expect["states"],
                        "actual": actual, "ok": actual == expect["states"]})
    return results


def run(config: ScenarioConfig) -> ScenarioReport:
    return World(config).run()


# ---------------------------------------------------------------------------
# Trace comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diff:
    path: str
    a: Any
    b: Any


TraceSource = Union[ScenarioReport, str, Path, Sequence[Dict[str, Any]]]


def load_trace(source: TraceSource) -> List[Dict[str, Any]]:
    if isinstance(source, ScenarioReport):
        # round-trip through JSON so in-memory and on-disk traces compare alike
        return [json.loads(json.dumps(line)) for line in source.lines]
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    return list(source)


def _schema(lines: List[Dict[str, Any]]) -> Optional[int]:
    if lines and lines[0].get("kind") == "header":
        return lines[0].get("schema")
    return None


def _walk(path: str, a: Any, b: Any, out: List[Diff]) -> None:
    if isinstance(a, dict) and isinstance(b, dict):
        for key in list(a) + [k for k in b if k not in a]:
            _walk(f"{path}.{key}", a.get(key), b.get(key), out)
    elif isinstance(a, list) and isinstance(b, list):
        for i in range(max(len(a), len(b))):
            _walk(f"{path}[{i}]", a[i] if i < len(a) else None, b[i] if i < len(b) else None, out)
    elif a != b:
        out.append(Diff(path, a, b))


def compare_traces(a: TraceSource, b: TraceSource) -> List[Diff]:
    la, lb = load_trace(a), load_trace(b)
    sa, sb = _schema(la), _schema(lb)
    if sa is None or sb is None or sa != sb:
        raise SchemaMismatch(f"trace schemas differ: {sa} vs {sb}")
    diffs: List[Diff] = []
    _walk("", la, lb, diffs)
    return diffs


def event_kinds(source: TraceSource) -> List[str]:
    return [ev["kind"] for line in load_trace(source) if line.get("kind") == "block"
            for ev in line["events"]]


# ---------------------------------------------------------------------------
# Failure matrix
# ---------------------------------------------------------------------------

def load_expected_matrix(path: Optional[Union[str, Path]] = None) -> Dict[str, Dict[str, List[bool]]]:
    if path is None:
        text = resources.files("iotaccess").joinpath("data/expected_matrix.json").read_text()
    else:
        text = Path(path).read_text()
    return {p: {k: v for k, v in row.items() if not k.startswith("_")}
            for p, row in json.loads(text).items() if not p.startswith("_")}


def matrix_config(protocol: str, adversary: AdversarySpec, seed: int = 0) -> ScenarioConfig:
    if adversary.kind == "REPLAY_TOKEN":
        users = [UserSpec("alice"), UserSpec("bob")]
        sessions = [SessionSpec("alice"), SessionSpec("bob")]
    else:
        users = [UserSpec("alice")]
        sessions = [SessionSpec("alice")]
    return ScenarioConfig(protocol=protocol, seed=seed, users=users, sessions=sessions,
                          adversary=adversary)


def field_lengths(protocol: str, seed: int = 0) -> Dict[str, int]:
    """Byte lengths of every taggable field, measured on an honest run."""
    return run(matrix_config(protocol, AdversarySpec(), seed)).field_lengths


def matrix_cases(
    protocols: Iterable[str] = PROTOCOLS,
    adversaries: Iterable[str] = ADVERSARY_KINDS,
    positions: str = "all",
    seed: int = 0,
) -> Iterator[Tuple[str, AdversarySpec]]:
    for protocol in protocols:
        lengths = None
        for kind in adversaries:
            if kind != "TAMPER":
                yield protocol, AdversarySpec(kind)
                continue
            lengths = lengths or field_lengths(protocol, seed)
            for name in tamper_fields(protocol):
                n = lengths[name]
                if positions == "all":
                    picks = range(n)
                elif positions == "edges":
                    picks = sorted({0, n // 2, n - 1})
                else:
                    raise ConfigError(f"positions must be 'all' or 'edges', not {positions!r}")
                for pos in picks:
                    yield protocol, AdversarySpec("TAMPER", field=name, position=pos)


@dataclass
class MatrixRow:
    protocol: str
    label: str
    position: Optional[int]
    triple: Tuple[bool, bool, bool]
    expected: Optional[Tuple[bool, bool, bool]]
    conservation: bool
    thing_transactions: int
    state: str
    reason: Optional[str]

    @property
    def ok(self) -> bool:
        return (self.expected is not None and self.triple == self.expected
                and self.conservation and self.thing_transactions == 0)


def run_matrix(
    protocols: Iterable[str] = PROTOCOLS,
    adversaries: Iterable[str] = ADVERSARY_KINDS,
    positions: str = "all",
    seed: int = 0,
    expected: Optional[Dict[str, Dict[str, List[bool]]]] = None,
) -> List[MatrixRow]:
    expected = expected if expected is not None else load_expected_matrix()
    rows = []
    for protocol, adv in matrix_cases(protocols, adversaries, positions, seed):
        report = run(matrix_config(protocol, adv, seed))
        exp = expected.get(protocol, {}).get(adv.label)
        t = report.target
        rows.append(MatrixRow(
            protocol, adv.label, adv.position if adv.kind == "TAMPER" else None,
            report.triple(), tuple(exp) if exp is not None else None,
            report.conservation, report.thing_transactions, t["state"], t["reason"],
        ))
    return rows
