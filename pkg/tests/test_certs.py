"""Certificate lifecycle: issuance, verification, reissue, repository, CRL."""

import random
from pathlib import Path

import pytest

from stategrid.certs import (
    CertificateAuthority,
    Certificate,
    Crl,
    Repository,
    SubjectKind,
    VerifyStatus,
    canonical_bytes,
    cert_from_json,
    cert_to_json,
    crl_from_json,
    crl_to_json,
    verify_certificate,
)
from stategrid.errors import (
    DuplicateSubjectError,
    InvalidCertError,
    NotFoundError,
    OutOfRangeError,
    SchemaError,
    UnknownSubjectError,
)
from stategrid.policy import GridConfig, StateSet
from stategrid.signers import HmacSigner

FIXTURES = Path(__file__).parent / "fixtures" / "certs"
SPIG = GridConfig(8, 4, 8)


@pytest.fixture
def signer():
    return HmacSigner()


@pytest.fixture
def ca(signer):
    return CertificateAuthority("ca", signer, signer.generate(random.Random(5)), SPIG)


def user_pair(signer, seed=6):
    return signer.generate(random.Random(seed))


class TestCanonicalBytes:
    def test_value_equal_certs_serialize_identically(self, ca, signer):
        cert = ca.issue("insp_rao", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        twin = cert_from_json(cert_to_json(cert))
        assert canonical_bytes(cert) == canonical_bytes(twin)

    def test_serial_changes_bytes(self, ca):
        a = ca.issue("a", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        b = ca.issue("b", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        twin = cert_from_json({**cert_to_json(b), "subject_name": "a"})
        assert canonical_bytes(a) != canonical_bytes(twin)

    def test_golden_fixture(self):
        cert = cert_from_json(
            __import__("json").loads((FIXTURES / "golden_cert.json").read_text())
        )
        assert canonical_bytes(cert) == (FIXTURES / "golden_cert_canonical.bin").read_bytes()


class TestIssueVerify:
    def test_issue_on_duty_user(self, ca, signer):
        pair = user_pair(signer)
        cert = ca.issue("insp_rao", SubjectKind.USER, pair.public, StateSet.of(1), 0, 100)
        assert cert.state_list == StateSet.of(1)
        status = verify_certificate(cert, ca.public_key, 1, Crl(), signer)
        assert status is VerifyStatus.OK

    def test_issue_discovery_with_empty_states(self, ca, signer):
        cert = ca.issue("disc", SubjectKind.DISCOVERY, b"pk", StateSet(), 0, 100)
        assert cert.state_list == StateSet()
        assert verify_certificate(cert, ca.public_key, 1, Crl(), signer) is VerifyStatus.OK

    def test_serials_strictly_increase(self, ca):
        rng = random.Random(7)
        serials = []
        for i in range(100):
            name = f"user{i}"
            cert = ca.issue(name, SubjectKind.USER, b"pk", StateSet(), 0, 100)
            serials.append(cert.serial)
            if rng.random() < 0.3:
                serials.append(ca.reissue(name, StateSet.of(2), 0, 100).serial)
        assert serials == sorted(set(serials))

    def test_duplicate_subject_rejected(self, ca):
        ca.issue("dup", SubjectKind.USER, b"pk", StateSet(), 0, 100)
        with pytest.raises(DuplicateSubjectError):
            ca.issue("dup", SubjectKind.USER, b"pk", StateSet(), 0, 100)

    def test_issue_rejects_out_of_range_states(self, ca):
        with pytest.raises(OutOfRangeError):
            ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(9), 0, 100)

    def test_issue_preconditions(self, ca):
        with pytest.raises(ValueError):
            ca.issue("", SubjectKind.USER, b"pk", StateSet(), 0, 100)
        with pytest.raises(ValueError):
            ca.issue("u", SubjectKind.USER, b"pk", StateSet(), 0, 0)

    def test_expired(self, ca, signer):
        cert = ca.issue("u", SubjectKind.USER, b"pk", StateSet(), 0, 100)
        assert verify_certificate(cert, ca.public_key, 100, Crl(), signer) is VerifyStatus.EXPIRED
        assert verify_certificate(cert, ca.public_key, 99, Crl(), signer) is VerifyStatus.OK

    def test_revoked_beats_expired(self, ca, signer):
        cert = ca.issue("u", SubjectKind.USER, b"pk", StateSet(), 0, 100)
        crl = Crl({cert.serial})
        assert verify_certificate(cert, ca.public_key, 500, crl, signer) is VerifyStatus.REVOKED

    def test_tampered_field_is_bad_signature(self, ca, signer):
        cert = ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        forged = cert_from_json({**cert_to_json(cert), "state_list": [1, 2]})
        status = verify_certificate(forged, ca.public_key, 1, Crl(), signer)
        assert status is VerifyStatus.BAD_SIGNATURE

    def test_mutated_canonical_bytes_never_verify(self, ca, signer):
        cert = ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1, 4), 0, 100)
        data = canonical_bytes(cert)
        rng = random.Random(13)
        for _ in range(100):
            pos = rng.randrange(len(data))
            flip = data[pos] ^ (1 << rng.randrange(8))
            mutated = data[:pos] + bytes([flip]) + data[pos + 1 :]
            assert not signer.verify(ca.public_key, mutated, cert.signature)


class TestReissue:
    def test_suspension_rotates(self, ca, signer):
        old = ca.issue("insp_rao", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        new = ca.reissue("insp_rao", StateSet.of(2), 1, 100)
        assert new.state_list == StateSet.of(2)
        assert new.serial > old.serial
        assert verify_certificate(old, ca.public_key, 2, ca.crl, signer) is VerifyStatus.REVOKED
        assert verify_certificate(new, ca.public_key, 2, ca.crl, signer) is VerifyStatus.OK

    def test_identical_states_still_rotate(self, ca):
        old = ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        new = ca.reissue("u", StateSet.of(1), 1, 100)
        assert new.serial > old.serial
        assert old.serial in ca.crl.serials

    def test_chain_of_reissues(self, ca, signer):
        certs = [ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 1000)]
        for i in range(5):
            certs.append(ca.reissue("u", StateSet.of(1 + i % 3), i, 1000))
        assert len(ca.crl.serials) == 5
        for stale in certs[:-1]:
            assert (
                verify_certificate(stale, ca.public_key, 10, ca.crl, signer)
                is VerifyStatus.REVOKED
            )
        assert (
            verify_certificate(certs[-1], ca.public_key, 10, ca.crl, signer)
            is VerifyStatus.OK
        )

    def test_unknown_subject(self, ca):
        with pytest.raises(UnknownSubjectError):
            ca.reissue("ghost", StateSet(), 0, 100)
        with pytest.raises(UnknownSubjectError):
            ca.revoke_subject("ghost", 0)

    def test_at_most_one_ok_cert_per_subject(self, ca, signer):
        history = [ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 1000)]
        for i in range(4):
            history.append(ca.reissue("u", StateSet.of(2), i, 1000))
            ok = [
                c
                for c in history
                if verify_certificate(c, ca.public_key, i, ca.crl, signer)
                is VerifyStatus.OK
            ]
            assert len(ok) == 1


class TestRepository:
    def test_store_then_get_newest(self, ca, signer):
        repo = Repository(ca.public_key, signer)
        v1 = ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 1000)
        repo.store_cert(v1, 0)
        v2 = ca.reissue("u", StateSet.of(2), 1, 1000)
        repo.store_cert(v2, 1)
        assert repo.get_cert("u") == v2

    def test_get_unknown(self, ca, signer):
        with pytest.raises(NotFoundError):
            Repository(ca.public_key, signer).get_cert("nobody")

    def test_store_rejects_invalid(self, ca, signer):
        repo = Repository(ca.public_key, signer)
        cert = ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100)
        forged = cert_from_json({**cert_to_json(cert), "state_list": [2]})
        with pytest.raises(InvalidCertError):
            repo.store_cert(forged, 0)
        with pytest.raises(InvalidCertError):
            repo.store_cert(cert, 100)  # already expired at store time

    def test_crl_propagates_revocation(self, ca, signer):
        repo = Repository(ca.public_key, signer)
        v1 = ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 1000)
        repo.store_cert(v1, 0)
        ca.reissue("u", StateSet.of(2), 1, 1000)
        repo.update_crl(ca.crl.snapshot())
        assert v1.serial in repo.get_crl().serials

    def test_crl_merge_is_monotone(self):
        crl = Crl({1, 2}, issued_at=5)
        crl.merge(Crl({3}, issued_at=2))
        assert crl.serials == {1, 2, 3}
        assert crl.issued_at == 5


class TestJson:
    def test_cert_round_trip(self, ca):
        cert = ca.issue("u", SubjectKind.USER, b"\x00\xffpk", StateSet.of(1, 4), 0, 100)
        assert cert_from_json(cert_to_json(cert)) == cert

    def test_cert_schema_violations(self, ca):
        doc = cert_to_json(ca.issue("u", SubjectKind.USER, b"pk", StateSet.of(1), 0, 100))
        for broken in (
            {k: v for k, v in doc.items() if k != "serial"},
            {**doc, "extra": 1},
            {**doc, "kind": "wizard"},
            {**doc, "state_list": [2, 1]},
            {**doc, "state_list": [1, 1]},
            {**doc, "serial": "1"},
            {**doc, "public_key": "!!!"},
        ):
            with pytest.raises(SchemaError):
                cert_from_json(broken)

    def test_lifetime_invariant(self):
        with pytest.raises(SchemaError):
            Certificate(
                serial=1,
                subject_name="u",
                kind=SubjectKind.USER,
                public_key=b"pk",
                state_list=StateSet(),
                issued_at=5,
                expires_at=5,
                issuer="ca",
            )

    def test_crl_round_trip(self):
        crl = Crl({3, 1, 9}, issued_at=7)
        assert crl_from_json(crl_to_json(crl)) == crl
        with pytest.raises(SchemaError):
            crl_from_json({"revoked_serials": [2, 1], "issued_at": 0})
