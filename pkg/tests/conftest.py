import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from stategrid.scenario import ScenarioRunner, parse_scenario

SPIG_POLICY = {"1": 15, "5": 94, "6": 98, "7": 12, "8": 4}


def make_doc(**overrides) -> dict:
    """Scenario document for one user, one discovery, two service nodes."""
    doc = {
        "name": "test-world",
        "seed": 42,
        "signer": "hmac",
        "services": [
            {"address": "svc-a", "policy": dict(SPIG_POLICY)},
            {"address": "svc-b", "policy": dict(SPIG_POLICY)},
        ],
        "steps": [],
    }
    doc.update(overrides)
    return doc


def standard_steps(user="insp_rao", states=None, invoke=None, services=("svc-a", "svc-b")):
    register = {"op": "register", "kind": "user", "name": user}
    if states is not None:
        register["states"] = list(states)
    steps = [register, {"op": "register", "kind": "discovery"}]
    steps += [{"op": "register", "kind": "service", "address": s} for s in services]
    request = {"op": "request", "user": user}
    if invoke is not None:
        request["invoke"] = invoke
    steps.append(request)
    return steps


def make_runner(**overrides) -> ScenarioRunner:
    return ScenarioRunner(parse_scenario(make_doc(**overrides)))


@pytest.fixture
def runner() -> ScenarioRunner:
    return make_runner()
