"""Simulator: determinism, FIFO links, faults, trace files."""

import pytest

from stategrid.errors import ConfigError, SchemaError, StorageError, UnknownTypeError
from stategrid.nodes import NodeBehavior
from stategrid.protocol import Envelope
from stategrid.simnet import (
    FaultSpec,
    SimConfig,
    Simulation,
    Trace,
    dump_trace,
    load_trace,
    trace_diff,
)

from conftest import make_runner, standard_steps


class Burst(NodeBehavior):
    """Emits a numbered batch to each target when poked."""

    kind = "burst"

    def __init__(self, address, targets, count, msg_type="GET_CERT"):
        super().__init__(address)
        self.targets = targets
        self.count = count
        self.msg_type = msg_type

    def handle(self, env, now):
        return [
            self.make(t, self.msg_type, {"subject_name": f"{self.address}:{i}"})
            for t in self.targets
            for i in range(self.count)
        ]


class Probe(NodeBehavior):
    kind = "probe"

    def __init__(self, address):
        super().__init__(address)
        self.seen = []

    def handle(self, env, now):
        self.seen.append((env.sender, env.payload["subject_name"]))
        return []


def poke(target, msg_id=1):
    return Envelope(
        msg_id=msg_id,
        sender="tester",
        recipient=target,
        msg_type="GET_CERT",
        payload={"subject_name": "poke"},
    )


class TestScheduling:
    def test_empty_script_is_quiescent(self):
        sim = Simulation([Probe("p")], SimConfig())
        trace = sim.run()
        assert len(trace) == 0
        assert not trace.tick_limit_hit
        assert trace.final_states["p"]["kind"] == "probe"

    @pytest.mark.parametrize("delivery", ["in-order", "seeded-shuffle"])
    def test_fifo_per_link(self, delivery):
        probe = Probe("p")
        sim = Simulation(
            [Burst("b1", ["p"], 10), Burst("b2", ["p"], 10), probe],
            SimConfig(seed=5, delivery=delivery),
        )
        sim.inject([poke("b1", 1), poke("b2", 2)])
        sim.run()
        for sender in ("b1", "b2"):
            got = [mark for s, mark in probe.seen if s == sender]
            assert got == [f"{sender}:{i}" for i in range(10)]

    def test_same_seed_same_trace(self):
        def one(seed, delivery):
            probe = Probe("p")
            sim = Simulation(
                [Burst("b1", ["p"], 5), Burst("b2", ["p"], 5), probe],
                SimConfig(seed=seed, delivery=delivery),
            )
            sim.inject([poke("b1", 1), poke("b2", 2)])
            return sim.run().to_bytes()

        assert one(9, "seeded-shuffle") == one(9, "seeded-shuffle")
        assert one(9, "in-order") == one(9, "in-order")

    def test_tick_limit_reported(self):
        a = Burst("a", ["b"], 1)
        b = Burst("b", ["a"], 1)
        sim = Simulation([a, b], SimConfig(tick_limit=40))
        sim.inject([poke("a")])
        trace = sim.run()
        assert trace.tick_limit_hit
        assert len(trace) > 10

    def test_duplicate_msg_id_rejected(self):
        sim = Simulation([Probe("p")], SimConfig())
        sim.inject([poke("p", 1)])
        with pytest.raises(ValueError):
            sim.inject([poke("p", 1)])

    def test_duplicate_address_rejected(self):
        with pytest.raises(ConfigError):
            Simulation([Probe("p"), Probe("p")], SimConfig())

    def test_non_catalog_emission_rejected(self):
        sim = Simulation([Burst("a", ["p"], 1, msg_type="BOGUS"), Probe("p")], SimConfig())
        sim.inject([poke("a")])
        with pytest.raises(UnknownTypeError):
            sim.run()


class TestFaults:
    def test_drop_node_silences_and_exhausts_pool(self):
        steps = standard_steps(states=[1], services=("svc-a",))
        runner = make_runner(
            services=[{"address": "svc-a", "policy": {"1": 15}}], steps=steps
        )
        # NODE_STATUS #1 is the registration announce, #2 is the busy mark
        # while serving: drop the node right there, mid-flow
        runner.sim.add_fault(
            FaultSpec(kind="drop_node", after_type="NODE_STATUS", occurrence=2, address="svc-a")
        )
        runner.run()
        drop_tick = max(
            e.tick for e in runner.sim.trace.entries if e.envelope.msg_type == "NODE_STATUS"
        )
        assert all(
            e.tick <= drop_tick
            for e in runner.sim.trace.entries
            if e.envelope.sender == "svc-a"
        )
        runner.sim.inject(runner.agents["insp_rao"].request_access())
        runner.sim.run()
        assert [c for c, _ in runner.agents["insp_rao"].failures] == ["E_NO_NODE"]

    def test_fault_validation(self):
        with pytest.raises(ConfigError):
            FaultSpec(kind="meteor", at_tick=1)
        with pytest.raises(ConfigError):
            FaultSpec(kind="drop_node")
        with pytest.raises(ConfigError):
            FaultSpec(kind="drop_node", at_tick=1, after_type="GET_CERT")
        with pytest.raises(ConfigError):
            SimConfig(faults=[FaultSpec(kind="drop_node", at_tick=99, address="x")], tick_limit=50)


class TestTraceFiles:
    def make_trace(self):
        runner = make_runner(steps=standard_steps(states=[5, 6], invoke=2))
        return runner.run()

    def test_dump_load_round_trip(self, tmp_path):
        trace = self.make_trace()
        path = tmp_path / "flow.trace"
        dump_trace(trace, path)
        loaded = load_trace(path)
        assert loaded == trace
        assert loaded.to_bytes() == trace.to_bytes()
        assert loaded.final_states == trace.final_states

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.trace"
        path.write_bytes(b"no tab here\n")
        with pytest.raises(SchemaError):
            load_trace(path)
        path.write_bytes(b"12\t{not json}\n")
        with pytest.raises(SchemaError):
            load_trace(path)
        with pytest.raises(StorageError):
            load_trace(tmp_path / "absent.trace")

    def test_load_rejects_truncated_envelope(self, tmp_path):
        trace = self.make_trace()
        data = trace.to_bytes()
        path = tmp_path / "trunc.trace"
        path.write_bytes(data[: len(data) // 2].rsplit(b"\n", 1)[0] + b"\x00\n")
        with pytest.raises(SchemaError):
            load_trace(path)

    def test_diff_identical(self):
        trace = self.make_trace()
        assert trace_diff(trace, trace) is None

    def test_diff_reports_first_divergence(self):
        a = self.make_trace()
        b = self.make_trace()
        victim = b.entries[7]
        b.entries[7] = type(victim)(victim.tick, victim.envelope.__class__(
            msg_id=victim.envelope.msg_id,
            sender=victim.envelope.sender,
            recipient=victim.envelope.recipient,
            msg_type="ERROR",
            payload={"code": "E_X", "detail": ""},
            correlation_id=victim.envelope.correlation_id,
        ))
        report = trace_diff(a, b)
        assert report is not None and report.startswith("entry 7:")

    def test_diff_length_mismatch(self):
        a = self.make_trace()
        b = Trace.from_bytes(a.to_bytes())
        b.entries.pop()
        report = trace_diff(a, b)
        assert report is not None and "only in first" in report
