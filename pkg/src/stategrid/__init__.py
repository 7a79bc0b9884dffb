"""Stateful, multilevel, certificate-monitored authorization for service grids.

The pieces, bottom up: a pure set algebra mapping user states through
per-node policy tables to granted services (`policy`); state-carrying
certificates with monitored reissue and revocation (`certs`, `signers`); a
line-oriented JSON wire protocol (`protocol`); deterministic behaviors for
the six node roles (`nodes`); a discrete-event simulator and a socket
transport sharing those behaviors (`simnet`, `sockets`); and a CLI with a
bundled demo profile (`cli`, `profiles`, `deploy`, `scenario`).
"""

from .errors import GridError
from .policy import (
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
    policy_map,
)
from .certs import (
    Certificate,
    CertificateAuthority,
    Crl,
    Repository,
    SubjectKind,
    VerifyStatus,
    verify_certificate,
)
from .protocol import Envelope, Ticket, TicketStatus, validate_ticket
from .simnet import FaultSpec, SimConfig, Simulation, Trace

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "CertificateAuthority",
    "Crl",
    "Envelope",
    "FaultSpec",
    "GridConfig",
    "GridError",
    "PolicyTable",
    "Repository",
    "ServiceSet",
    "SimConfig",
    "Simulation",
    "StateSet",
    "SubjectKind",
    "Ticket",
    "TicketStatus",
    "Trace",
    "VerifyStatus",
    "VoFilterConfig",
    "decode_services",
    "effective_state",
    "encode_services",
    "filter_states",
    "impose_states",
    "policy_map",
    "validate_ticket",
    "verify_certificate",
]
