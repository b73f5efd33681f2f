"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines
as they happen; they are also repeated in the terminal summary.
"""

import os
import random
import time

import pytest
from hypothesis import given, settings

from wpki import codec, crypto, net, ocsp, profiles
from wpki.authority import CAConfig, init_ca
from wpki.client import TrafficReport
from wpki.crypto import PublicKeyInfo
from wpki.enrollment import (
    CertificateRequest,
    Credentials,
    CertificateResponse,
    RegistrationRequest,
    client_build_request,
)
from wpki.errors import CodecError, MacMismatch, PopFailure, UnknownReference
from wpki.ocsp import Status, StatusResponse, client_validate, new_nonce
from wpki.profiles import CAIdentity, CertificateTemplate
from wpki.scenario import LoopbackPKI, check_delegation, run_demo

from acceptance_log import criterion
from profile_table import MATRIX, check_cell
from revocation_oracle import cross_check
from strategies import RANDOM_BUILDERS, seeded

NOW = 1_700_000_000


def ca_identity(keypair):
    return CAIdentity(name="Acceptance CA", keypair=keypair,
                      crl_url="wpki://127.0.0.1:7002/crl/latest",
                      aia_url="wpki://127.0.0.1:7003/ocsp", alt_names=("Acceptance CA",))


# 1 -------------------------------------------------------------------------------

def test_ac1_ecdsa_key_shrinks_certificate(session_keys):
    with criterion(1, "ECDSA certificate >= 90 bytes smaller than with a 131-byte RSA key",
                   budget_s=1.0) as notes:
        identity = ca_identity(session_keys[crypto.CURVE_160][0])
        template = CertificateTemplate("mobile-0001", 3600)
        rsa = PublicKeyInfo(crypto.RSA1024_PLACEHOLDER, os.urandom(131))
        rsa_size = len(codec.encode_entity(profiles.build_certificate(template, rsa, identity, 2, NOW)))
        for curve in (crypto.CURVE_160, crypto.CURVE_P256):
            key = session_keys[curve][1].public_info
            cert = profiles.build_certificate(template, key, identity, 2, NOW)
            assert profiles.check_generation(cert)
            size = len(codec.encode_entity(cert))
            notes.append(f"curve {curve}: {size} vs {rsa_size} bytes")
            assert rsa_size - size >= 90


# 2 -------------------------------------------------------------------------------

def test_ac2_short_lived_smaller_than_wireless(session_keys):
    with criterion(2, "short-lived certificate smaller than full certificate, 100 inputs",
                   budget_s=1.0) as notes:
        rng = random.Random(2)
        keys = session_keys[crypto.CURVE_160] + session_keys[crypto.CURVE_P256]
        margins = []
        for _ in range(100):
            identity = ca_identity(rng.choice(session_keys[crypto.CURVE_160]))
            identity = CAIdentity(
                name="".join(rng.choice("ABCDEFGH xyz") for _ in range(rng.randint(1, 40))),
                keypair=identity.keypair, crl_url=identity.crl_url, aia_url=identity.aia_url)
            subject = "".join(rng.choice("abcdefgh-.0123") for _ in range(rng.randint(1, 60)))
            key = rng.choice(keys).public_info
            lifetime = rng.randint(60, profiles.SHORT_LIVED_MAX)
            now = NOW + rng.randrange(10**6)
            full = profiles.build_certificate(CertificateTemplate(subject, lifetime), key,
                                              identity, rng.randrange(1, 2**63), now)
            short = profiles.build_short_lived(subject, key, lifetime, identity, now)
            margins.append(len(codec.encode_entity(full)) - len(codec.encode_entity(short)))
        notes.append(f"saving {min(margins)}..{max(margins)} bytes")
        assert min(margins) > 0


# 3 -------------------------------------------------------------------------------

def test_ac3_profile_matrix():
    with criterion(3, "25-row conformance matrix, both columns, absent and present") as notes:
        assert len(MATRIX) == 25
        assert [(r.field, r.generation, r.process) for r in profiles.PROFILE_RULES] == MATRIX
        failures = [detail for row in MATRIX for mode in ("generation", "process")
                    for present in (False, True)
                    for ok, detail in [check_cell(row, mode, present)] if not ok]
        notes.append(f"{4 * len(MATRIX) - len(failures)}/{4 * len(MATRIX)} cells")
        assert failures == []


# 4 -------------------------------------------------------------------------------

def _canonical_fixtures():
    return {cls: build(random.Random(4)) for cls, build in RANDOM_BUILDERS.items()}


def test_ac4_codec_roundtrip_and_mutation():
    with criterion(4, ">= 1000 round-trips per kind; every single-byte mutation caught",
                   budget_s=30.0) as notes:
        counts = {}
        for cls in RANDOM_BUILDERS:
            seen = []

            @settings(max_examples=1000, database=None)
            @given(seeded(cls))
            def roundtrip(x):
                data = codec.encode_entity(x)
                assert codec.decode_entity(data, cls) == x
                assert codec.deframe(codec.frame_entity(x)) == (cls.KIND, data)
                seen.append(1)

            roundtrip()
            counts[cls.__name__] = len(seen)
        assert min(counts.values()) >= 1000, counts

        mutations = caught = 0
        for cls, value in _canonical_fixtures().items():
            data = codec.encode_entity(value)
            for i in range(len(data)):
                for b in range(256):
                    if b == data[i]:
                        continue
                    mutated = bytearray(data)
                    mutated[i] = b
                    mutations += 1
                    try:
                        decoded = codec.decode_entity(bytes(mutated), cls)
                    except CodecError:
                        caught += 1
                        continue
                    assert decoded != value, (cls.__name__, i, b)
                    caught += 1
        notes.append(f"{len(counts)} kinds x >= {min(counts.values())}; "
                     f"{caught}/{mutations} mutations rejected or decoded differently")
        assert caught == mutations


# 5 -------------------------------------------------------------------------------

def test_ac5_enrollment(tmp_path, session_keys):
    with criterion(5, "enrollment < 1 s, state < 1 KiB, replay/MAC/PoP rejected") as notes:
        with LoopbackPKI(tmp_path) as pki:
            client = pki.client()
            start = time.perf_counter()
            state, report = client.run_enrollment(pki.ca_address, pki.repo_address)
            elapsed = time.perf_counter() - start
            notes.append(f"enrolled in {elapsed:.3f} s, {report.persisted_bytes} bytes at rest")
            assert elapsed < 1.0
            assert report.persisted_bytes < 1024

            key = session_keys[crypto.CURVE_160][1]
            with net.Connection(pki.ca_address) as conn:
                creds = conn.call(RegistrationRequest("IMEI-490154203237518"), Credentials)
                req = client_build_request(creds, key, "mobile-0002")

                wrong = Credentials(creds.username, creds.password + "x", creds.random_code)
                with pytest.raises(MacMismatch):
                    conn.call(client_build_request(wrong, key, "mobile-0002"),
                              CertificateResponse)

                other = session_keys[crypto.CURVE_160][2]
                swapped = CertificateRequest(
                    reference_number=req.reference_number, subject=req.subject,
                    public_key_info=other.public_info, pop_signature=req.pop_signature,
                    request_mac=b"\0" * 32)
                swapped = CertificateRequest(
                    reference_number=swapped.reference_number, subject=swapped.subject,
                    public_key_info=swapped.public_key_info,
                    pop_signature=swapped.pop_signature,
                    request_mac=crypto.mac(creds.mac_key(), swapped.mac_message()))
                with pytest.raises(PopFailure):
                    conn.call(swapped, CertificateResponse)

                conn.call(req, CertificateResponse)
                with pytest.raises(UnknownReference):
                    conn.call(req, CertificateResponse)
            notes.append("replay, MacMismatch and PopFailure rejected")


# 6 -------------------------------------------------------------------------------

def test_ac6_delegation(tmp_path):
    with criterion(6, "demo: zero CRL bytes at the client, no certificate sent by it") as notes:
        result = run_demo(tmp_path, out=lambda line: None)
        reports = result.reports()
        crl_bytes = sum(r.received_crl_bytes for _, r in reports)
        notes.append(f"{len(reports)} client reports, {crl_bytes} CRL bytes")
        assert result.ok, result.failures
        assert crl_bytes == 0
        assert result.outcomes["revoked-wireless"].peer_status == Status.REVOKED
        # the checker does fail a violating run
        bad = TrafficReport(received_crl_bytes=1, sent_kinds={"peer": [0x05]})
        assert len(check_delegation("control", bad)) == 2


# 7 -------------------------------------------------------------------------------

def test_ac7_revocation(tmp_path, session_keys):
    with criterion(7, "good -> revoked after revoke + publish; oracle agrees on >= 200 pairs",
                   budget_s=60.0) as notes:
        with LoopbackPKI(tmp_path / "live") as pki:
            peer, _ = pki.add_peer("srv", "wireless")
            before, nonce = ocsp.query(pki.ocsp_address, peer.certificate)
            assert client_validate(before, nonce, pki.ocsp_public_key)
            pki.revoke(peer.certificate.serial)
            pki.publish_crl()
            after, _ = ocsp.query(pki.ocsp_address, peer.certificate)
            assert (before.status, after.status) == (Status.GOOD, Status.REVOKED)

        ca = init_ca(CAConfig(state_dir=tmp_path / "oracle"), now=NOW)
        mismatches, seen = cross_check(ca, tmp_path / "oracle", session_keys[crypto.CURVE_160][1:4],
                                       NOW, pairs=240)
        notes.append("240 pairs: " + ", ".join(f"{s.name.lower()}={n}" for s, n in seen.items()))
        assert mismatches == []


# 8 -------------------------------------------------------------------------------

def test_ac8_replay_and_staleness(session_keys):
    with criterion(8, "wrong-nonce and stale responses rejected in 100% of cases") as notes:
        responder = session_keys[crypto.CURVE_160][0]
        rng = random.Random(8)
        freshness = ocsp.DEFAULT_FRESHNESS
        injected = rejected = 0
        for _ in range(200):
            nonce = new_nonce()
            now = NOW + rng.randrange(10**6)
            # a wrong nonce on an otherwise perfect response
            wrong = bytes(b ^ rng.randint(1, 255) if i == rng.randrange(16) else b
                          for i, b in enumerate(nonce))
            if wrong == nonce:
                wrong = bytes([nonce[0] ^ 1]) + nonce[1:]
            cases = [(now, wrong), (now - freshness - 1 - rng.randrange(10**5), nonce)]
            for produced_at, echoed in cases:
                resp = profiles.sign_entity(StatusResponse(
                    status=Status.GOOD, serial=rng.randrange(2**32), produced_at=produced_at,
                    nonce=echoed, signature=crypto.SignatureValue(crypto.ECDSA_SHA256, b"")),
                    responder)
                injected += 1
                verdict = client_validate(resp, nonce, responder.public_key, now, freshness)
                rejected += verdict.reason in ("nonce-mismatch", "stale")
            # and the control: the same response, fresh and echoing, is accepted
            good = profiles.sign_entity(StatusResponse(
                status=Status.GOOD, serial=1, produced_at=now, nonce=nonce,
                signature=crypto.SignatureValue(crypto.ECDSA_SHA256, b"")), responder)
            assert client_validate(good, nonce, responder.public_key, now, freshness)
        notes.append(f"{rejected}/{injected} rejected")
        assert rejected == injected
