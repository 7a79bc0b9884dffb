"""State/service set algebra and policy mapping.

A user certificate carries a set of numbered *states* (situational
attributes such as "on duty" or "suspended"). A virtual organization first
FILTERs that set against the states it currently considers, then IMPOSEs
extra per-user states from its imposed list; the result is the user's
*effective state*. Each service node holds a policy table mapping a state
to an integer entry whose low bits encode the services granted to holders
of that state (service ``i`` lives at bit ``i - 1``, least significant bit
first). POLICY_MAP intersects the per-state service sets over all effective
states: a multi-state user receives only the services common to every one
of its states.

All functions here are pure and operate on immutable values.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    ConfigError,
    DuplicateServiceError,
    DuplicateStateError,
    OutOfRangeError,
    PolicyParseError,
    StorageError,
)


@dataclass(frozen=True)
class GridConfig:
    """Dimensions of the authorization universe.

    ``state_count`` is the number of user states the grid distinguishes,
    ``service_count`` the number of services a node may render, and
    ``entry_width`` the bit width of a stored policy entry. Only the low
    ``service_count`` bits of an entry carry authorization meaning; any
    higher bits are preserved in storage but masked off during mapping.
    """

    state_count: int = 8
    service_count: int = 4
    entry_width: int = 8

    def __post_init__(self):
        if self.state_count < 1:
            raise ConfigError(f"state_count must be >= 1, got {self.state_count}")
        if self.service_count < 1:
            raise ConfigError(f"service_count must be >= 1, got {self.service_count}")
        if self.entry_width < self.service_count:
            raise ConfigError(
                f"entry_width {self.entry_width} narrower than "
                f"service_count {self.service_count}"
            )

    @property
    def entry_limit(self) -> int:
        return 1 << self.entry_width

    @property
    def service_mask(self) -> int:
        return (1 << self.service_count) - 1


class _IdSet:
    """Immutable set of positive integer ids with a bitmask twin.

    The canonical integer form sets bit ``i - 1`` for member ``i``, so the
    set and mask representations interconvert losslessly.
    """

    __slots__ = ("members",)

    def __init__(self, members: Iterable[int] = ()):
        frozen = frozenset(members)
        for m in frozen:
            if isinstance(m, bool) or not isinstance(m, int) or m < 1:
                raise OutOfRangeError(f"ids must be integers >= 1, got {m!r}")
        object.__setattr__(self, "members", frozen)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @classmethod
    def of(cls, *members: int):
        return cls(members)

    @classmethod
    def from_mask(cls, mask: int):
        if mask < 0:
            raise OutOfRangeError(f"mask must be non-negative, got {mask}")
        return cls(i + 1 for i in range(mask.bit_length()) if mask >> i & 1)

    def to_mask(self) -> int:
        mask = 0
        for m in self.members:
            mask |= 1 << (m - 1)
        return mask

    def to_list(self) -> list[int]:
        return sorted(self.members)

    def _check_same_kind(self, other):
        if type(other) is not type(self):
            raise TypeError(
                f"cannot combine {type(self).__name__} with {type(other).__name__}"
            )

    def __and__(self, other):
        self._check_same_kind(other)
        return type(self)(self.members & other.members)

    def __or__(self, other):
        self._check_same_kind(other)
        return type(self)(self.members | other.members)

    def issubset(self, other) -> bool:
        self._check_same_kind(other)
        return self.members <= other.members

    def __contains__(self, item) -> bool:
        return item in self.members

    def __iter__(self) -> Iterator[int]:
        return iter(self.to_list())

    def __len__(self) -> int:
        return len(self.members)

    def __bool__(self) -> bool:
        return bool(self.members)

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and self.members == other.members

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.members))

    def __repr__(self) -> str:
        inner = ", ".join(str(m) for m in self.to_list())
        return f"{type(self).__name__}({{{inner}}})"


class StateSet(_IdSet):
    """Set of user-state numbers."""


class ServiceSet(_IdSet):
    """Set of service numbers."""


def check_states(states: StateSet, cfg: GridConfig) -> StateSet:
    """Reject states outside the configured universe."""
    for s in states:
        if s > cfg.state_count:
            raise OutOfRangeError(f"state {s} outside 1..{cfg.state_count}")
    return states


def check_services(services: ServiceSet, cfg: GridConfig) -> ServiceSet:
    for s in services:
        if s > cfg.service_count:
            raise OutOfRangeError(f"service {s} outside 1..{cfg.service_count}")
    return services


@dataclass(frozen=True)
class VoFilterConfig:
    """Per-VO filtering rules: the states considered at present plus the
    imposed list adding VO-assigned states to named users.

    Imposed states must stay inside the considered set, otherwise the
    imposed list could smuggle back states the filter just removed.
    """

    considered: StateSet
    imposed: Mapping[str, StateSet]

    def __post_init__(self):
        for user, states in self.imposed.items():
            if not states.issubset(self.considered):
                extra = states.members - self.considered.members
                raise ConfigError(
                    f"imposed states {sorted(extra)} for {user!r} "
                    "fall outside the considered set"
                )

    def check_against(self, cfg: GridConfig) -> "VoFilterConfig":
        check_states(self.considered, cfg)
        return self

    def imposed_for(self, user: str) -> StateSet:
        return self.imposed.get(user, StateSet())


def filter_states(cert_states: StateSet, considered: StateSet) -> StateSet:
    """Keep only the certificate states the VO currently considers."""
    return cert_states & considered


def impose_states(filtered: StateSet, imposed: StateSet) -> StateSet:
    """Add the VO-imposed states to a filtered set."""
    return filtered | imposed


def effective_state(cert_states: StateSet, vo: VoFilterConfig, user: str) -> StateSet:
    """FILTER then IMPOSE; users absent from the imposed list add nothing."""
    return impose_states(
        filter_states(cert_states, vo.considered), vo.imposed_for(user)
    )


def encode_services(services: ServiceSet, cfg: GridConfig) -> int:
    """Pack a service set into a policy entry (low bits only)."""
    check_services(services, cfg)
    return services.to_mask()


def decode_services(entry: int, cfg: GridConfig) -> ServiceSet:
    """Unpack the authorization-relevant low bits of a policy entry.

    Bits at or above ``service_count`` never contribute services.
    """
    if not 0 <= entry < cfg.entry_limit:
        raise OutOfRangeError(
            f"policy entry {entry} outside 0..{cfg.entry_limit - 1}"
        )
    return ServiceSet.from_mask(entry & cfg.service_mask)


class PolicyTable:
    """Partial map from state to policy entry.

    A state with no entry contributes the empty service set, so any user
    holding it maps to no services at all: deny by default.
    """

    def __init__(self, cfg: GridConfig, entries: Mapping[int, int] | None = None):
        self.cfg = cfg
        self.entries: dict[int, int] = {}
        for state, raw in (entries or {}).items():
            self.set_entry(state, raw)

    def set_entry(self, state: int, raw: int) -> None:
        if not 1 <= state <= self.cfg.state_count:
            raise OutOfRangeError(
                f"state {state} outside 1..{self.cfg.state_count}"
            )
        if not 0 <= raw < self.cfg.entry_limit:
            raise OutOfRangeError(
                f"policy entry {raw} outside 0..{self.cfg.entry_limit - 1}"
            )
        self.entries[state] = raw

    def lookup(self, state: int) -> ServiceSet:
        if not 1 <= state <= self.cfg.state_count:
            raise OutOfRangeError(
                f"state {state} outside 1..{self.cfg.state_count}"
            )
        raw = self.entries.get(state)
        if raw is None:
            return ServiceSet()
        return decode_services(raw, self.cfg)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PolicyTable)
            and self.cfg == other.cfg
            and self.entries == other.entries
        )

    def __repr__(self) -> str:
        return f"PolicyTable({self.entries!r})"


def policy_map(effective: StateSet, table: PolicyTable) -> ServiceSet:
    """Intersect the granted service sets of every effective state.

    An empty effective set yields no services; the mathematically vacuous
    intersection would grant everything, which is the wrong default for an
    authorization decision.
    """
    check_states(effective, table.cfg)
    if not effective:
        return ServiceSet()
    result: ServiceSet | None = None
    for state in effective:
        granted = table.lookup(state)
        result = granted if result is None else result & granted
        if not result:
            return result
    assert result is not None
    return result


_POLICY_LINE = re.compile(r"^\s*(\d+)\s*:\s*(.+?)\s*$")


def parse_policy_line(text: str, cfg: GridConfig) -> tuple[int, ServiceSet]:
    """Parse one ``<state> : <service>, <service>, ...`` policy line.

    The service list must be non-empty and free of duplicates; silent
    acceptance of either would mask configuration typos.
    """
    match = _POLICY_LINE.match(text)
    if match is None:
        raise PolicyParseError(f"malformed policy line: {text!r}")
    state = int(match.group(1))
    if not 1 <= state <= cfg.state_count:
        raise OutOfRangeError(f"state {state} outside 1..{cfg.state_count}")
    services: list[int] = []
    for token in match.group(2).split(","):
        token = token.strip()
        if not token.isdigit():
            raise PolicyParseError(f"bad service token {token!r} in {text!r}")
        service = int(token)
        if not 1 <= service <= cfg.service_count:
            raise OutOfRangeError(
                f"service {service} outside 1..{cfg.service_count}"
            )
        if service in services:
            raise DuplicateServiceError(f"service {service} repeated in {text!r}")
        services.append(service)
    return state, ServiceSet(services)


def render_policy_line(state: int, services: ServiceSet) -> str:
    if not services:
        raise PolicyParseError(
            f"state {state} grants no services; the line format cannot express that"
        )
    return f"{state}: " + ",".join(str(s) for s in services)


def load_policy_file(path: str | Path, cfg: GridConfig) -> PolicyTable:
    """Load a policy table from line-oriented text.

    Blank lines and ``#`` comments are ignored. A state appearing on two
    lines is an error rather than last-wins: security configuration should
    not be silently self-overriding.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read policy file {path}: {exc}") from exc
    table = PolicyTable(cfg)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        state, services = parse_policy_line(stripped, cfg)
        if state in table.entries:
            raise DuplicateStateError(
                f"{path}:{lineno}: duplicate policy for state {state}"
            )
        table.set_entry(state, encode_services(services, cfg))
    return table


def save_policy_file(table: PolicyTable, path: str | Path) -> None:
    """Write a table in the line format; only the low service bits survive."""
    lines = [
        render_policy_line(state, decode_services(raw, table.cfg))
        for state, raw in sorted(table.entries.items())
    ]
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write policy file {path}: {exc}") from exc
