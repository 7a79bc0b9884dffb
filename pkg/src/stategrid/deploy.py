"""Deployment files and the runtime that drives a grid on disk.

A deployment directory holds the roster, per-node policy files, key
material and persisted node state, so successive CLI invocations (register,
set-state, request) operate on one continuing grid. Every invocation loads
the world, runs one simulated exchange to quiescence, and saves the world
back.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import profiles
from .certs import (
    CertificateAuthority,
    Certificate,
    Repository,
    VerifyStatus,
    canonical_json_bytes,
    cert_from_json,
    cert_to_json,
    verify_certificate,
)
from .errors import ExistsError, GridError, NotFoundError, SchemaError, StorageError
from .nodes import (
    CaNode,
    DEFAULT_HOLD_WINDOW,
    DEFAULT_REPLAY_WINDOW,
    DEFAULT_TICKET_TTL,
    DEFAULT_VALIDITY_TICKS,
    DiscoveryNode,
    MonitorNode,
    RepositoryNode,
    ServiceNode,
    UserAgentNode,
)
from .policy import (
    GridConfig,
    PolicyTable,
    StateSet,
    VoFilterConfig,
    load_policy_file,
    save_policy_file,
)
from .signers import KeyPair, derive_keypair, derive_rng, get_signer
from .simnet import SimConfig, Simulation, Trace

DEPLOYMENT_FILE = "deployment.json"


@dataclass
class ServiceSpec:
    address: str
    policy_file: str
    forward: dict[int, str] = field(default_factory=dict)


@dataclass
class Deployment:
    root: Path
    cfg: GridConfig
    signer_name: str
    seed: int
    ca_addr: str
    repository_addr: str
    monitor_addr: str
    discovery_addr: str
    services: list[ServiceSpec]
    vo_filter: VoFilterConfig
    default_states: StateSet
    state_names: dict[int, str]
    service_names: dict[int, str]
    validity_ticks: int = DEFAULT_VALIDITY_TICKS
    ticket_ttl: int = DEFAULT_TICKET_TTL
    replay_window: int = DEFAULT_REPLAY_WINDOW
    hold_window: int = DEFAULT_HOLD_WINDOW

    def to_json(self) -> dict:
        return {
            "profile": profiles.PROFILE_NAME,
            "grid": {
                "states": self.cfg.state_count,
                "services": self.cfg.service_count,
                "entry_width": self.cfg.entry_width,
            },
            "signer": self.signer_name,
            "seed": self.seed,
            "addresses": {
                "ca": self.ca_addr,
                "repository": self.repository_addr,
                "monitor": self.monitor_addr,
                "discovery": self.discovery_addr,
            },
            "services": [
                {
                    "address": s.address,
                    "policy_file": s.policy_file,
                    "forward": {str(k): v for k, v in sorted(s.forward.items())},
                }
                for s in self.services
            ],
            "vo_filter": {
                "considered": self.vo_filter.considered.to_list(),
                "imposed": {
                    user: states.to_list()
                    for user, states in sorted(self.vo_filter.imposed.items())
                },
            },
            "default_states": self.default_states.to_list(),
            "state_names": {str(k): v for k, v in sorted(self.state_names.items())},
            "service_names": {str(k): v for k, v in sorted(self.service_names.items())},
            "timing": {
                "validity_ticks": self.validity_ticks,
                "ticket_ttl": self.ticket_ttl,
                "replay_window": self.replay_window,
                "hold_window": self.hold_window,
            },
        }

    @classmethod
    def from_json(cls, root: Path, doc: dict) -> "Deployment":
        try:
            grid = doc["grid"]
            cfg = GridConfig(grid["states"], grid["services"], grid["entry_width"])
            addresses = doc["addresses"]
            services = [
                ServiceSpec(
                    address=s["address"],
                    policy_file=s["policy_file"],
                    forward={int(k): v for k, v in s.get("forward", {}).items()},
                )
                for s in doc["services"]
            ]
            vo_filter = VoFilterConfig(
                considered=StateSet(doc["vo_filter"]["considered"]),
                imposed={
                    user: StateSet(states)
                    for user, states in doc["vo_filter"]["imposed"].items()
                },
            ).check_against(cfg)
            timing = doc["timing"]
            return cls(
                root=root,
                cfg=cfg,
                signer_name=doc["signer"],
                seed=doc["seed"],
                ca_addr=addresses["ca"],
                repository_addr=addresses["repository"],
                monitor_addr=addresses["monitor"],
                discovery_addr=addresses["discovery"],
                services=services,
                vo_filter=vo_filter,
                default_states=StateSet(doc["default_states"]),
                state_names={int(k): v for k, v in doc["state_names"].items()},
                service_names={int(k): v for k, v in doc["service_names"].items()},
                validity_ticks=timing["validity_ticks"],
                ticket_ttl=timing["ticket_ttl"],
                replay_window=timing["replay_window"],
                hold_window=timing["hold_window"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad deployment file: {exc}") from exc


def _write_json(path: Path, doc: dict) -> None:
    try:
        path.write_bytes(canonical_json_bytes(doc) + b"\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"bad JSON in {path}: {exc}") from exc


def _keypair_to_json(pair: KeyPair) -> dict:
    return {
        "private": base64.b64encode(pair.private).decode("ascii"),
        "public": base64.b64encode(pair.public).decode("ascii"),
    }


def _keypair_from_json(doc: dict) -> KeyPair:
    return KeyPair(
        base64.b64decode(doc["private"]), base64.b64decode(doc["public"])
    )


def init_deployment(
    root: str | Path,
    profile: str = profiles.PROFILE_NAME,
    service_count: int = 2,
    seed: int = 7,
    signer_name: str = "ed25519",
    force: bool = False,
) -> Deployment:
    """Create a deployment directory for the bundled profile and bootstrap
    the infrastructure certificates."""
    if profile != profiles.PROFILE_NAME:
        raise SchemaError(f"unknown profile {profile!r}")
    if service_count < 1:
        raise SchemaError("need at least one service node")
    root = Path(root)
    marker = root / DEPLOYMENT_FILE
    if marker.exists() and not force:
        raise ExistsError(f"{marker} already exists (use force to overwrite)")
    (root / "policies").mkdir(parents=True, exist_ok=True)
    (root / "keys").mkdir(exist_ok=True)
    (root / "state").mkdir(exist_ok=True)

    services = []
    table = profiles.default_policy_table()
    for i in range(service_count):
        addr = f"svc-{chr(ord('a') + i)}"
        policy_rel = f"policies/{addr}.policy"
        save_policy_file(table, root / policy_rel)
        services.append(ServiceSpec(address=addr, policy_file=policy_rel))

    deployment = Deployment(
        root=root,
        cfg=profiles.GRID_CONFIG,
        signer_name=signer_name,
        seed=seed,
        ca_addr="ca",
        repository_addr="repo",
        monitor_addr="monitor",
        discovery_addr="disc",
        services=services,
        vo_filter=profiles.default_vo_filter(),
        default_states=profiles.default_states(),
        state_names=dict(profiles.STATE_NAMES),
        service_names=dict(profiles.SERVICE_NAMES),
    )
    signer = get_signer(signer_name)
    for addr in [deployment.ca_addr, deployment.discovery_addr] + [
        s.address for s in services
    ]:
        pair = derive_keypair(signer, seed, "key", addr)
        _write_json(root / "keys" / f"{addr}.json", _keypair_to_json(pair))
    _write_json(marker, deployment.to_json())

    world = GridWorld(deployment)
    world.bootstrap_infra()
    world.save()
    return deployment


def load_deployment(root: str | Path) -> Deployment:
    root = Path(root)
    marker = root / DEPLOYMENT_FILE
    if not marker.exists():
        raise NotFoundError(f"no {DEPLOYMENT_FILE} in {root}")
    return Deployment.from_json(root, _read_json(marker))


class GridWorld:
    """All node behaviors for one deployment plus persisted state."""

    def __init__(self, deployment: Deployment):
        self.deployment = deployment
        d = deployment
        self.signer = get_signer(d.signer_name)
        self.user_keys: dict[str, KeyPair] = {}

        ca_pair = self._load_keys(d.ca_addr)
        authority = CertificateAuthority(d.ca_addr, self.signer, ca_pair, d.cfg)
        self.ca = CaNode(
            d.ca_addr, authority, d.monitor_addr, d.repository_addr, d.validity_ticks
        )
        self.monitor = MonitorNode(d.monitor_addr, d.ca_addr, d.cfg, d.default_states)
        self.repository = RepositoryNode(
            d.repository_addr, Repository(ca_pair.public, self.signer)
        )
        disc_pair = self._load_keys(d.discovery_addr)
        self.discovery = DiscoveryNode(
            d.discovery_addr,
            self.signer,
            disc_pair,
            d.vo_filter,
            ca_pair.public,
            d.ca_addr,
            d.repository_addr,
            ticket_ttl=d.ticket_ttl,
            replay_window=d.replay_window,
            rng=derive_rng(d.seed, "ticket", d.discovery_addr),
            roster=[s.address for s in d.services],
            assume_free=True,
        )
        self.services: dict[str, ServiceNode] = {}
        for spec in d.services:
            table = load_policy_file(d.root / spec.policy_file, d.cfg)
            self.services[spec.address] = ServiceNode(
                spec.address,
                self.signer,
                self._load_keys(spec.address),
                table,
                ca_pair.public,
                disc_pair.public,
                d.ca_addr,
                d.repository_addr,
                d.discovery_addr,
                service_names=d.service_names,
                hold_window=d.hold_window,
                forward_map=dict(spec.forward),
            )
        self.agents: dict[str, UserAgentNode] = {}
        self._restore()

    def _load_keys(self, addr: str) -> KeyPair:
        return _keypair_from_json(
            _read_json(self.deployment.root / "keys" / f"{addr}.json")
        )

    def _state_path(self) -> Path:
        return self.deployment.root / "state" / "state.json"

    def _restore(self) -> None:
        path = self._state_path()
        if not path.exists():
            return
        state = _read_json(path)
        self.ca.authority.restore_state(state["ca"])
        self.repository.repository.restore_state(state["repository"])
        self.monitor.restore_state(state["monitor"])
        self.discovery.restore_state(state["discovery"])
        for name, doc in state["users"].items():
            pair = _keypair_from_json(doc["keys"])
            agent = self._build_agent(name, pair)
            agent.restore_state(doc)
            self.agents[name] = agent
            self.user_keys[name] = pair

    def save(self) -> None:
        state = {
            "ca": self.ca.authority.to_state(),
            "repository": self.repository.repository.to_state(),
            "monitor": self.monitor.to_state(),
            "discovery": self.discovery.to_state(),
            "users": {
                name: {
                    "keys": _keypair_to_json(self.user_keys[name]),
                    **self.agents[name].to_state(),
                }
                for name in sorted(self.agents)
            },
        }
        _write_json(self._state_path(), state)

    def _build_agent(self, name: str, pair: KeyPair) -> UserAgentNode:
        d = self.deployment
        return UserAgentNode(
            name,
            self.signer,
            pair,
            self.ca.authority.public_key,
            d.ca_addr,
            d.repository_addr,
            d.discovery_addr,
        )

    def behaviors(self) -> list:
        return [
            self.ca,
            self.monitor,
            self.repository,
            self.discovery,
            *self.services.values(),
            *self.agents.values(),
        ]

    def simulation(self) -> Simulation:
        return Simulation(
            self.behaviors(), SimConfig(seed=self.deployment.seed)
        )

    def bootstrap_infra(self) -> Trace:
        sim = self.simulation()
        sim.inject(self.discovery.registration_envelopes())
        for svc in self.services.values():
            sim.inject(svc.registration_envelopes())
        trace = sim.run()
        if self.discovery.own_cert is None:
            raise GridError("discovery registration failed")
        return trace

    def register_user(
        self, name: str, states: StateSet | None = None
    ) -> Certificate:
        if name in self.agents:
            agent = self.agents[name]
        else:
            pair = derive_keypair(self.signer, self.deployment.seed, "key", name)
            agent = self._build_agent(name, pair)
            self.agents[name] = agent
            self.user_keys[name] = pair
        if states is not None:
            self.monitor.seed_states(name, states)
        sim = self.simulation()
        sim.inject(agent.registration_envelopes())
        sim.run()
        self._raise_failures(agent)
        if agent.own_cert is None:
            raise GridError(f"registration of {name!r} produced no certificate")
        return agent.own_cert

    def set_state(self, name: str, states: StateSet) -> Certificate:
        outs = self.monitor.set_states(name, states)
        sim = self.simulation()
        sim.inject(outs)
        sim.run()
        cert = self.repository.repository.get_cert(name)
        # hand the rotated certificate to the subject's agent, the way a
        # real user application refetches its own certificate
        if name in self.agents:
            self.agents[name].own_cert = cert
        return cert

    def request(
        self, name: str, invoke: int | None = None
    ) -> tuple[UserAgentNode, Trace]:
        agent = self.agents.get(name)
        if agent is None:
            raise NotFoundError(f"user {name!r} is not registered here")
        sim = self.simulation()
        sim.inject(agent.request_access(invoke))
        trace = sim.run()
        return agent, trace

    def show_cert(self, name: str) -> tuple[dict, VerifyStatus, list[int]]:
        repo = self.repository.repository
        cert = repo.get_cert(name)
        status = verify_certificate(
            cert, self.ca.authority.public_key, 0, repo.crl, self.signer
        )
        return cert_to_json(cert), status, sorted(repo.crl.serials)

    @staticmethod
    def _raise_failures(agent: UserAgentNode) -> None:
        if agent.failures:
            code, detail = agent.failures[0]
            err = GridError(detail)
            err.code = code
            raise err
