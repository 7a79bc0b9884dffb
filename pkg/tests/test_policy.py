"""Policy algebra: filtering, imposing, encoding and mapping."""

import random

import pytest

from stategrid.errors import (
    ConfigError,
    DuplicateServiceError,
    DuplicateStateError,
    OutOfRangeError,
    PolicyParseError,
    StorageError,
)
from stategrid.policy import (
    GridConfig,
    PolicyTable,
    ServiceSet,
    StateSet,
    VoFilterConfig,
    decode_services,
    effective_state,
    encode_services,
    filter_states,
    impose_states,
    load_policy_file,
    parse_policy_line,
    policy_map,
    render_policy_line,
    save_policy_file,
)

from oracles import (
    oracle_decode,
    oracle_effective,
    oracle_encode,
    oracle_intersection,
    oracle_policy_map,
    oracle_union,
)

SPIG = GridConfig(8, 4, 8)


def random_states(rng, n):
    return {s for s in range(1, n + 1) if rng.random() < 0.4}


class TestSets:
    def test_mask_round_trip(self):
        s = StateSet.of(1, 4, 15)
        assert StateSet.from_mask(s.to_mask()) == s
        assert s.to_mask() == 0b100000000001001

    def test_mask_oracle(self):
        rng = random.Random(11)
        for _ in range(100):
            members = random_states(rng, 16)
            mask = StateSet(members).to_mask()
            assert mask == oracle_encode(members)
            assert set(StateSet.from_mask(mask)) == members

    def test_rejects_bad_members(self):
        with pytest.raises(OutOfRangeError):
            StateSet.of(0)
        with pytest.raises(OutOfRangeError):
            StateSet.of(-3)
        with pytest.raises(OutOfRangeError):
            StateSet([True])

    def test_no_cross_kind_mixing(self):
        with pytest.raises(TypeError):
            StateSet.of(1) & ServiceSet.of(1)

    def test_iteration_sorted(self):
        assert list(StateSet.of(5, 1, 3)) == [1, 3, 5]


class TestFilterImpose:
    def test_filter_example(self):
        # certificate states {1,4,15} against a VO considering 1..12
        got = filter_states(StateSet.of(1, 4, 15), StateSet(range(1, 13)))
        assert got == StateSet.of(1, 4)

    def test_filter_empty(self):
        assert filter_states(StateSet(), StateSet(range(1, 13))) == StateSet()

    def test_filter_matches_oracle(self):
        rng = random.Random(21)
        for _ in range(200):
            s, c = random_states(rng, 16), random_states(rng, 16)
            assert set(filter_states(StateSet(s), StateSet(c))) == oracle_intersection(s, c)

    def test_impose_example(self):
        got = impose_states(StateSet.of(1, 4), StateSet.of(11, 12))
        assert got == StateSet.of(1, 4, 11, 12)

    def test_impose_identity(self):
        s = StateSet.of(2, 7)
        assert impose_states(s, StateSet()) == s

    def test_impose_matches_oracle(self):
        rng = random.Random(22)
        for _ in range(200):
            a, b = random_states(rng, 16), random_states(rng, 16)
            assert set(impose_states(StateSet(a), StateSet(b))) == oracle_union(a, b)

    def test_effective_state_composed(self):
        vo = VoFilterConfig(
            considered=StateSet(range(1, 13)),
            imposed={"insp_rao": StateSet.of(11, 12)},
        )
        got = effective_state(StateSet.of(1, 4, 15), vo, "insp_rao")
        assert got == StateSet.of(1, 4, 11, 12)

    def test_effective_state_unknown_user_imposes_nothing(self):
        vo = VoFilterConfig(considered=StateSet(range(1, 13)), imposed={})
        assert effective_state(StateSet(), vo, "anyone") == StateSet()

    def test_effective_state_matches_oracle(self):
        rng = random.Random(23)
        for _ in range(200):
            considered = random_states(rng, 16)
            imposed = {s for s in considered if rng.random() < 0.3}
            cert = random_states(rng, 16)
            vo = VoFilterConfig(
                considered=StateSet(considered), imposed={"u": StateSet(imposed)}
            )
            assert set(effective_state(StateSet(cert), vo, "u")) == oracle_effective(
                cert, considered, imposed
            )


class TestEncodeDecode:
    def test_encode_examples(self):
        assert encode_services(ServiceSet.of(2, 3, 4), SPIG) == 14
        assert encode_services(ServiceSet(), SPIG) == 0
        assert encode_services(ServiceSet.of(3, 4), SPIG) == 12

    def test_decode_examples(self):
        assert decode_services(94, SPIG) == ServiceSet.of(2, 3, 4)  # 01011110
        assert decode_services(98, SPIG) == ServiceSet.of(2)  # 01100010
        assert decode_services(0, SPIG) == ServiceSet()

    def test_round_trip(self):
        for mask in range(16):
            services = ServiceSet.from_mask(mask)
            assert decode_services(encode_services(services, SPIG), SPIG) == services

    def test_high_bits_ignored(self):
        for value in range(256):
            assert decode_services(value, SPIG) == decode_services(value & 0b1111, SPIG)

    def test_decode_matches_oracle(self):
        for value in range(256):
            assert set(decode_services(value, SPIG)) == oracle_decode(value, 4)

    def test_out_of_range(self):
        with pytest.raises(OutOfRangeError):
            encode_services(ServiceSet.of(5), SPIG)
        with pytest.raises(OutOfRangeError):
            decode_services(256, SPIG)
        with pytest.raises(OutOfRangeError):
            decode_services(-1, SPIG)


class TestPolicyTable:
    def test_lookup_worked_example(self):
        table = PolicyTable(SPIG, {5: 94, 6: 98})
        assert table.lookup(5) == ServiceSet.of(2, 3, 4)
        assert table.lookup(6) == ServiceSet.of(2)

    def test_lookup_missing_state_denies(self):
        table = PolicyTable(SPIG, {5: 94})
        assert table.lookup(6) == ServiceSet()

    def test_lookup_random_matches_oracle(self):
        rng = random.Random(31)
        cfg = GridConfig(16, 8, 8)
        for _ in range(100):
            entries = {
                s: rng.randrange(256) for s in range(1, 17) if rng.random() < 0.5
            }
            table = PolicyTable(cfg, entries)
            state = rng.randrange(1, 17)
            assert set(table.lookup(state)) == oracle_decode(entries.get(state, 0), 8)

    def test_rejects_bad_entries(self):
        with pytest.raises(OutOfRangeError):
            PolicyTable(SPIG, {9: 1})
        with pytest.raises(OutOfRangeError):
            PolicyTable(SPIG, {1: 256})


class TestPolicyMap:
    def test_worked_example(self):
        table = PolicyTable(SPIG, {5: 94, 6: 98})
        assert policy_map(StateSet.of(5, 6), table) == ServiceSet.of(2)

    def test_empty_effective_denies(self):
        table = PolicyTable(SPIG, {5: 94})
        assert policy_map(StateSet(), table) == ServiceSet()

    def test_edit_restricted_gets_3_and_4(self):
        table = PolicyTable(SPIG, {7: encode_services(ServiceSet.of(3, 4), SPIG)})
        assert policy_map(StateSet.of(7), table) == ServiceSet.of(3, 4)

    def test_missing_entry_empties_intersection(self):
        table = PolicyTable(SPIG, {5: 94})
        assert policy_map(StateSet.of(5, 6), table) == ServiceSet()

    def test_singleton_equals_lookup(self):
        table = PolicyTable(SPIG, {1: 15, 5: 94, 6: 98})
        for state in range(1, 9):
            assert policy_map(StateSet.of(state), table) == table.lookup(state)

    def test_random_matches_oracle(self):
        rng = random.Random(41)
        for _ in range(300):
            n, m = rng.randrange(1, 17), rng.randrange(1, 17)
            cfg = GridConfig(n, m, 16)
            entries = {
                s: rng.randrange(1 << 16)
                for s in range(1, n + 1)
                if rng.random() < 0.6
            }
            table = PolicyTable(cfg, entries)
            effective = random_states(rng, n)
            got = policy_map(StateSet(effective), table)
            assert set(got) == oracle_policy_map(effective, entries, m)


class TestPolicyText:
    def test_parse_example(self):
        assert parse_policy_line("7: 3,4", SPIG) == (7, ServiceSet.of(3, 4))

    def test_parse_worked_example_services(self):
        assert parse_policy_line("5: 2,3,4", SPIG) == (5, ServiceSet.of(2, 3, 4))

    def test_parse_whitespace(self):
        assert parse_policy_line("  7 :  3 , 4  ", SPIG) == (7, ServiceSet.of(3, 4))

    @pytest.mark.parametrize("text", ["1:", "1: ", "nonsense", "1 3,4", "1: x", "1: 2,,3"])
    def test_parse_malformed(self, text):
        with pytest.raises(PolicyParseError):
            parse_policy_line(text, SPIG)

    def test_parse_out_of_range(self):
        with pytest.raises(OutOfRangeError):
            parse_policy_line("9: 1", SPIG)
        with pytest.raises(OutOfRangeError):
            parse_policy_line("1: 5", SPIG)

    def test_parse_duplicate_service(self):
        with pytest.raises(DuplicateServiceError):
            parse_policy_line("1: 2,2", SPIG)

    def test_render_round_trip(self):
        rng = random.Random(51)
        for _ in range(100):
            state = rng.randrange(1, 9)
            services = {s for s in range(1, 5) if rng.random() < 0.5} or {1}
            line = render_policy_line(state, ServiceSet(services))
            assert parse_policy_line(line, SPIG) == (state, ServiceSet(services))

    def test_render_refuses_empty(self):
        with pytest.raises(PolicyParseError):
            render_policy_line(1, ServiceSet())


class TestPolicyFiles:
    def test_load(self, tmp_path):
        path = tmp_path / "node.policy"
        path.write_text("# demo policies\n5: 2,3,4\n\n6: 2\n", encoding="utf-8")
        table = load_policy_file(path, SPIG)
        assert table.entries == {5: 14, 6: 2}

    def test_load_empty(self, tmp_path):
        path = tmp_path / "empty.policy"
        path.write_text("", encoding="utf-8")
        assert load_policy_file(path, SPIG).entries == {}

    def test_duplicate_state_rejected(self, tmp_path):
        path = tmp_path / "dup.policy"
        path.write_text("5: 2\n5: 3\n", encoding="utf-8")
        with pytest.raises(DuplicateStateError):
            load_policy_file(path, SPIG)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            load_policy_file(tmp_path / "absent.policy", SPIG)

    def test_save_load_round_trip(self, tmp_path):
        table = PolicyTable(SPIG, {1: 15, 5: 14, 7: 12})
        path = tmp_path / "rt.policy"
        save_policy_file(table, path)
        assert load_policy_file(path, SPIG) == table

    def test_save_keeps_only_service_bits(self, tmp_path):
        table = PolicyTable(SPIG, {5: 94})
        path = tmp_path / "mask.policy"
        save_policy_file(table, path)
        reloaded = load_policy_file(path, SPIG)
        assert reloaded.entries == {5: 14}
        assert reloaded.lookup(5) == table.lookup(5)


class TestConfigs:
    def test_grid_config_validation(self):
        with pytest.raises(ConfigError):
            GridConfig(0, 4, 8)
        with pytest.raises(ConfigError):
            GridConfig(8, 0, 8)
        with pytest.raises(ConfigError):
            GridConfig(8, 9, 8)

    def test_vo_filter_rejects_outside_imposed(self):
        with pytest.raises(ConfigError):
            VoFilterConfig(
                considered=StateSet(range(1, 13)),
                imposed={"u": StateSet.of(12, 13)},
            )

    def test_vo_filter_accepts_subset(self):
        vo = VoFilterConfig(
            considered=StateSet(range(1, 13)), imposed={"u": StateSet.of(11, 12)}
        )
        assert vo.imposed_for("u") == StateSet.of(11, 12)
        assert vo.imposed_for("other") == StateSet()
