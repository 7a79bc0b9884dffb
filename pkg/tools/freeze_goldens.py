#!/usr/bin/env python3
"""Regenerate the frozen fixtures: golden certificate, wire lines, scenario
traces. Run from the repository root after any intentional format change,
then review the diff before committing."""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from stategrid.certs import CertificateAuthority, SubjectKind, canonical_bytes, cert_to_json
from stategrid.policy import GridConfig, StateSet
from stategrid.protocol import CATALOG, Envelope, Ticket, encode_envelope, sign_ticket
from stategrid.scenario import load_scenario, run_scenario
from stategrid.signers import HmacSigner, derive_keypair

from envgen import random_envelope

FIXTURES = ROOT / "tests" / "fixtures"
SCENARIOS = ROOT / "src" / "stategrid" / "scenarios"


def freeze_cert_fixture() -> None:
    out = FIXTURES / "certs"
    out.mkdir(parents=True, exist_ok=True)
    signer = HmacSigner()
    ca = CertificateAuthority(
        "ca", signer, derive_keypair(signer, 1, "key", "ca"), GridConfig(8, 4, 8)
    )
    cert = ca.issue(
        "insp_rao",
        SubjectKind.USER,
        derive_keypair(signer, 1, "key", "insp_rao").public,
        StateSet.of(1, 4),
        now=3,
        validity_ticks=1000,
    )
    (out / "golden_cert.json").write_text(
        json.dumps(cert_to_json(cert), sort_keys=True, indent=2) + "\n"
    )
    (out / "golden_cert_canonical.bin").write_bytes(canonical_bytes(cert))


def freeze_wire_fixtures() -> None:
    out = FIXTURES / "wire"
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for msg_type in sorted(CATALOG):
        lines.append(encode_envelope(random_envelope(random.Random(f"wire:{msg_type}"), msg_type)))
    (out / "catalog.jsonl").write_bytes(b"".join(lines))

    signer = HmacSigner()
    disc = derive_keypair(signer, 1, "key", "disc")
    ticket = sign_ticket(
        Ticket(
            ticket_id="00112233445566778899aabbccddeeff",
            user="insp_rao",
            issued_at=4,
            ttl_ticks=100,
        ),
        signer,
        disc.private,
    )
    serv_req = Envelope(
        msg_id=5,
        sender="insp_rao",
        recipient="svc-a",
        msg_type="SERV_REQ",
        payload={"user": "insp_rao", "ticket": ticket, "cert_serial": 1},
    )
    (out / "serv_req.bin").write_bytes(encode_envelope(serv_req))


def freeze_scenario_traces() -> None:
    for scn in sorted(SCENARIOS.glob("*.scn")):
        scenario = load_scenario(scn)
        trace = run_scenario(scenario)
        if scenario.expect_trace:
            (scn.parent / scenario.expect_trace).write_bytes(trace.to_bytes())
            print(f"froze {scenario.expect_trace}: {len(trace)} envelopes")


if __name__ == "__main__":
    freeze_cert_fixture()
    freeze_wire_fixtures()
    freeze_scenario_traces()
    print("fixtures written")
