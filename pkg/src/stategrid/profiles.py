"""Bundled deployment profile: a small state-police records grid.

Eight user states, four services, one byte per policy entry. States 1..7
describe police officials; state 8 is the plain citizen account every
unknown registrant receives. The default policy table grants on-duty staff
everything, maps the restricted states 5 and 6 through byte entries whose
high nibbles are deliberately nonzero (only the low nibble carries
authorization), limits edit-restricted holders to services 3 and 4, and
gives citizens lookup access only. Entries beyond those defaults are
absent, which denies by default.
"""

from __future__ import annotations

from .policy import GridConfig, PolicyTable, StateSet, VoFilterConfig

PROFILE_NAME = "spig"

GRID_CONFIG = GridConfig(state_count=8, service_count=4, entry_width=8)

STATE_NAMES = {
    1: "On Duty",
    2: "Suspended",
    3: "Transferred",
    4: "Convicted",
    5: "On Leave",
    6: "View Restricted",
    7: "Edit Restricted",
    8: "User",
}

SERVICE_NAMES = {
    1: "Criminal Records Database",
    2: "FIR Records",
    3: "Search for INV status",
    4: "ADD FIR/Criminal Records",
}

# state -> raw policy entry (8 bits; low nibble = services)
DEFAULT_POLICY_ENTRIES = {
    1: 0b00001111,  # all four services
    5: 94,  # 01011110 -> services {2, 3, 4}
    6: 98,  # 01100010 -> services {2}
    7: 0b00001100,  # services {3, 4}
    8: 0b00000100,  # services {3}
}

DEFAULT_STATES = (8,)


def default_policy_table() -> PolicyTable:
    return PolicyTable(GRID_CONFIG, DEFAULT_POLICY_ENTRIES)


def default_vo_filter() -> VoFilterConfig:
    return VoFilterConfig(
        considered=StateSet(range(1, GRID_CONFIG.state_count + 1)), imposed={}
    )


def default_states() -> StateSet:
    return StateSet(DEFAULT_STATES)
