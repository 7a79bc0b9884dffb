"""Self-contained scenario files: topology, scripted steps, expected trace.

A scenario builds a fresh in-memory grid, applies its steps in order (each
step runs the network to quiescence before the next), and yields one trace.
Scenarios may pin an expected-trace fixture; runners compare byte for byte.
Unlike deployment policy files, scenario policies are raw integer entries,
so bits above the service mask can be exercised as stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import profiles
from .certs import CertificateAuthority, Repository
from .errors import SchemaError, StorageError
from .nodes import (
    CaNode,
    DiscoveryNode,
    MonitorNode,
    RepositoryNode,
    ServiceNode,
    UserAgentNode,
)
from .policy import GridConfig, PolicyTable, StateSet, VoFilterConfig
from .protocol import decode_envelope
from .signers import derive_keypair, derive_rng, get_signer
from .simnet import FaultSpec, SimConfig, Simulation, Trace

STEP_OPS = ("register", "request", "set_state", "inject", "fault")


@dataclass
class ScenarioService:
    address: str
    policy: dict[int, int]
    forward: dict[int, str] = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    seed: int
    tick_limit: int
    delivery: str
    signer_name: str
    cfg: GridConfig
    vo_filter: VoFilterConfig
    default_states: StateSet
    addresses: dict[str, str]
    services: list[ScenarioService]
    service_names: dict[int, str]
    steps: list[dict]
    expect_trace: str | None = None


def _int_keyed(doc: dict, label: str) -> dict[int, object]:
    out = {}
    for key, value in doc.items():
        if not key.isdigit():
            raise SchemaError(f"{label} key {key!r} must be a decimal integer")
        out[int(key)] = value
    return out


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise SchemaError("scenario must be an object")
    try:
        grid = doc.get("grid", {})
        cfg = GridConfig(
            grid.get("states", profiles.GRID_CONFIG.state_count),
            grid.get("services", profiles.GRID_CONFIG.service_count),
            grid.get("entry_width", profiles.GRID_CONFIG.entry_width),
        )
        vo = doc.get("vo_filter")
        if vo is None:
            vo_filter = VoFilterConfig(
                considered=StateSet(range(1, cfg.state_count + 1)), imposed={}
            )
        else:
            vo_filter = VoFilterConfig(
                considered=StateSet(vo["considered"]),
                imposed={
                    user: StateSet(states)
                    for user, states in vo.get("imposed", {}).items()
                },
            )
        vo_filter.check_against(cfg)
        addresses = {
            "ca": "ca",
            "repository": "repo",
            "monitor": "monitor",
            "discovery": "disc",
            **doc.get("addresses", {}),
        }
        services = [
            ScenarioService(
                address=s["address"],
                policy={
                    state: entry
                    for state, entry in _int_keyed(s.get("policy", {}), "policy").items()
                },
                forward=dict(_int_keyed(s.get("forward", {}), "forward")),
            )
            for s in doc.get("services", [])
        ]
        names = {
            int(k): v
            for k, v in doc.get(
                "service_names", {str(k): v for k, v in profiles.SERVICE_NAMES.items()}
            ).items()
        }
        steps = doc.get("steps", [])
        for step in steps:
            if not isinstance(step, dict) or step.get("op") not in STEP_OPS:
                raise SchemaError(f"bad scenario step {step!r}")
        return Scenario(
            name=doc.get("name", "scenario"),
            seed=doc.get("seed", 0),
            tick_limit=doc.get("tick_limit", 10_000),
            delivery=doc.get("delivery", "in-order"),
            signer_name=doc.get("signer", "ed25519"),
            cfg=cfg,
            vo_filter=vo_filter,
            default_states=StateSet(
                doc.get("default_states", list(profiles.DEFAULT_STATES))
            ),
            addresses=addresses,
            services=services,
            service_names=names,
            steps=steps,
            expect_trace=doc.get("expect_trace"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad scenario: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"bad scenario JSON in {path}: {exc}") from exc
    return parse_scenario(doc)


class ScenarioRunner:
    """Builds the scenario's world and replays its steps."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        s = scenario
        self.signer = get_signer(s.signer_name)
        ca_addr = s.addresses["ca"]
        repo_addr = s.addresses["repository"]
        monitor_addr = s.addresses["monitor"]
        disc_addr = s.addresses["discovery"]
        ca_pair = derive_keypair(self.signer, s.seed, "key", ca_addr)
        disc_pair = derive_keypair(self.signer, s.seed, "key", disc_addr)
        authority = CertificateAuthority(ca_addr, self.signer, ca_pair, s.cfg)
        self.ca = CaNode(ca_addr, authority, monitor_addr, repo_addr)
        self.monitor = MonitorNode(monitor_addr, ca_addr, s.cfg, s.default_states)
        self.repository = RepositoryNode(
            repo_addr, Repository(ca_pair.public, self.signer)
        )
        self.discovery = DiscoveryNode(
            disc_addr,
            self.signer,
            disc_pair,
            s.vo_filter,
            ca_pair.public,
            ca_addr,
            repo_addr,
            rng=derive_rng(s.seed, "ticket", disc_addr),
        )
        self.services = {
            spec.address: ServiceNode(
                spec.address,
                self.signer,
                derive_keypair(self.signer, s.seed, "key", spec.address),
                PolicyTable(s.cfg, spec.policy),
                ca_pair.public,
                disc_pair.public,
                ca_addr,
                repo_addr,
                disc_addr,
                service_names=s.service_names,
                forward_map=dict(spec.forward),
            )
            for spec in s.services
        }
        self.agents = {
            name: UserAgentNode(
                name,
                self.signer,
                derive_keypair(self.signer, s.seed, "key", name),
                ca_pair.public,
                ca_addr,
                repo_addr,
                disc_addr,
            )
            for name in self._user_names()
        }
        behaviors = [
            self.ca,
            self.monitor,
            self.repository,
            self.discovery,
            *self.services.values(),
            *self.agents.values(),
        ]
        self.sim = Simulation(
            behaviors,
            SimConfig(seed=s.seed, tick_limit=s.tick_limit, delivery=s.delivery),
        )

    def _user_names(self) -> list[str]:
        names = []
        for step in self.scenario.steps:
            if step.get("op") == "register" and step.get("kind") == "user":
                if step["name"] not in names:
                    names.append(step["name"])
        return names

    def _agent(self, name: str) -> UserAgentNode:
        try:
            return self.agents[name]
        except KeyError:
            raise SchemaError(f"user {name!r} has no register step") from None

    def run(self) -> Trace:
        for step in self.scenario.steps:
            self._apply(step)
        return self.sim.run()

    def _apply(self, step: dict) -> None:
        op = step["op"]
        if op == "fault":
            self.sim.add_fault(
                FaultSpec(
                    kind=step["kind"],
                    at_tick=step.get("at_tick"),
                    after_type=step.get("after_type"),
                    address=step.get("address"),
                    link_from=step.get("link_from"),
                    link_to=step.get("link_to"),
                    delay=step.get("delay", 0),
                    subject=step.get("subject"),
                    jump=step.get("jump"),
                )
            )
            return
        if op == "register":
            kind = step.get("kind", "user")
            if kind == "discovery":
                self.sim.inject(self.discovery.registration_envelopes())
            elif kind == "service":
                self.sim.inject(self.services[step["address"]].registration_envelopes())
            elif kind == "user":
                agent = self._agent(step["name"])
                if "states" in step:
                    self.monitor.seed_states(step["name"], StateSet(step["states"]))
                self.sim.inject(agent.registration_envelopes())
            else:
                raise SchemaError(f"bad register kind {kind!r}")
        elif op == "request":
            agent = self._agent(step["user"])
            self.sim.inject(agent.request_access(step.get("invoke")))
        elif op == "set_state":
            outs = self.monitor.set_states(step["user"], StateSet(step["states"]))
            self.sim.inject(outs)
        elif op == "inject":
            env = decode_envelope(json.dumps(step["envelope"]).encode("utf-8"))
            self.sim.inject([env], at_tick=step.get("at_tick"))
        else:
            raise SchemaError(f"unknown step op {op!r}")
        self.sim.run()
        if op == "set_state":
            agent = self.agents.get(step["user"])
            if agent is not None:
                # the subject refetches its rotated certificate
                agent.own_cert = self.repository.repository.get_cert(step["user"])


def run_scenario(scenario: Scenario) -> Trace:
    return ScenarioRunner(scenario).run()
