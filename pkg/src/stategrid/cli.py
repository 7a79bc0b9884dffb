"""Command-line front door.

Exit codes: 0 success, 1 trace/assertion mismatch, 2 operational error
(the failing code is printed on stderr as ``error: E_...``).
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .deploy import GridWorld, init_deployment, load_deployment
from .errors import GridError, PolicyParseError
from .policy import StateSet, decode_services, load_policy_file, render_policy_line
from .scenario import load_scenario, run_scenario
from .simnet import dump_trace, load_trace, trace_diff


def _parse_states(text: str) -> StateSet:
    try:
        return StateSet(int(part) for part in text.split(","))
    except ValueError:
        raise PolicyParseError(f"bad state list {text!r}") from None


def _world(args) -> GridWorld:
    return GridWorld(load_deployment(args.dir))


def cmd_init(args) -> int:
    init_deployment(
        args.out,
        profile=args.profile,
        service_count=args.services,
        seed=args.seed,
        signer_name=args.signer,
        force=args.force,
    )
    print(f"initialized {args.out}")
    return 0


def cmd_register(args) -> int:
    world = _world(args)
    states = _parse_states(args.states) if args.states else None
    cert = world.register_user(args.user, states)
    world.save()
    print(f"registered {args.user} serial {cert.serial} states {cert.state_list.to_list()}")
    return 0


def cmd_set_state(args) -> int:
    world = _world(args)
    cert = world.set_state(args.user, _parse_states(args.states))
    world.save()
    print(f"reissued {args.user} serial {cert.serial} states {cert.state_list.to_list()}")
    return 0


def cmd_show_cert(args) -> int:
    world = _world(args)
    doc, status, crl = world.show_cert(args.user)
    print(json.dumps(doc, sort_keys=True, separators=(",", ":")))
    print(f"status: {status.value}")
    print(f"crl: {crl}")
    return 0


def cmd_policy(args) -> int:
    deployment = load_deployment(args.dir)
    specs = deployment.services
    if args.node:
        specs = [s for s in specs if s.address == args.node]
        if not specs:
            print(f"error: E_NOT_FOUND: no service node {args.node}", file=sys.stderr)
            return 2
    for spec in specs:
        table = load_policy_file(deployment.root / spec.policy_file, deployment.cfg)
        print(f"# {spec.address}")
        for state in sorted(table.entries):
            services = decode_services(table.entries[state], deployment.cfg)
            print(render_policy_line(state, services))
    return 0


def cmd_request(args) -> int:
    world = _world(args)
    agent, trace = world.request(args.user, args.invoke)
    world.save()
    if args.trace:
        dump_trace(trace, args.trace)
    if agent.active_services is not None:
        for service_id in agent.active_services:
            name = world.deployment.service_names.get(service_id, "")
            print(f"{service_id} {name}".rstrip())
    for service_id, body in agent.results:
        print(f"invoked {service_id}: {body}")
    if agent.failures:
        code, detail = agent.failures[0]
        print(f"error: {code}: {detail}", file=sys.stderr)
        return 2
    return 0


def _bundled_scenarios() -> list[tuple[str, Path]]:
    base = resources.files("stategrid").joinpath("scenarios")
    found = []
    for entry in base.iterdir():
        if entry.name.endswith(".scn"):
            found.append((entry.name, Path(str(entry))))
    return sorted(found)


def _run_one_scenario(path: Path) -> int:
    scenario = load_scenario(path)
    trace = run_scenario(scenario)
    if scenario.expect_trace is None:
        print(f"ran {scenario.name}: {len(trace)} envelopes")
        return 0
    expected = load_trace(Path(path).parent / scenario.expect_trace)
    divergence = trace_diff(trace, expected)
    if divergence is None:
        print(f"ok {scenario.name}")
        return 0
    print(f"trace mismatch in {scenario.name}: {divergence}", file=sys.stderr)
    return 1


def cmd_run_scenario(args) -> int:
    if args.all:
        worst = 0
        for _, path in _bundled_scenarios():
            worst = max(worst, _run_one_scenario(path))
        return worst
    if not args.file:
        print("error: E_SCHEMA: give a scenario file or --all", file=sys.stderr)
        return 2
    return _run_one_scenario(Path(args.file))


def cmd_trace_diff(args) -> int:
    divergence = trace_diff(load_trace(args.first), load_trace(args.second))
    if divergence is None:
        print("identical")
        return 0
    print(divergence)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stategrid",
        description="Stateful policy-based authorization grid: demo deployment, "
        "certificate administration and scripted scenario runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a fresh deployment directory")
    p.add_argument("--profile", default="spig")
    p.add_argument("--out", required=True)
    p.add_argument("--services", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--signer", default="ed25519", choices=["ed25519", "hmac"])
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("register", help="register a user with the CA")
    p.add_argument("--user", required=True)
    p.add_argument("--states", help="comma-separated states, e.g. 1,4")
    p.add_argument("--dir", default=".")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("set-state", help="change a user's states (reissues the cert)")
    p.add_argument("--user", required=True)
    p.add_argument("--states", required=True)
    p.add_argument("--dir", default=".")
    p.set_defaults(func=cmd_set_state)

    p = sub.add_parser("show-cert", help="print a subject's current certificate")
    p.add_argument("--user", required=True)
    p.add_argument("--dir", default=".")
    p.set_defaults(func=cmd_show_cert)

    p = sub.add_parser("policy", help="inspect service-node policies")
    p.add_argument("action", choices=["show"])
    p.add_argument("--node")
    p.add_argument("--dir", default=".")
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("request", help="run the full access flow for a user")
    p.add_argument("--user", required=True)
    p.add_argument("--invoke", type=int)
    p.add_argument("--trace", help="dump the run's trace to this file")
    p.add_argument("--dir", default=".")
    p.set_defaults(func=cmd_request)

    p = sub.add_parser("run-scenario", help="execute a scenario file")
    p.add_argument("file", nargs="?")
    p.add_argument("--all", action="store_true", help="run the bundled scenarios")
    p.set_defaults(func=cmd_run_scenario)

    p = sub.add_parser("trace-diff", help="compare two trace files")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=cmd_trace_diff)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GridError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
