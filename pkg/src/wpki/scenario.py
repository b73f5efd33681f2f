"""Bring a whole PKI up on loopback: repository, CA, OCSP responder and any
number of scripted server peers, each on its own (by default ephemeral) port.

Used by the ``demo`` command and by the end-to-end tests.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import crypto, net, ocsp, profiles
from .authority import (
    CAConfig,
    CertificationAuthority,
    Reason,
    RevocationList,
    RevokeCommand,
    init_ca,
)
from .client import Client, TrafficReport, TransactionOutcome
from .ocsp import Responder, Status
from .peer import ServerPeer
from .repository import RemoteRepository

log = logging.getLogger(__name__)


def _unbound(kind, payload):
    raise RuntimeError("service not wired yet")


@dataclass
class SuiteOptions:
    host: str = "127.0.0.1"
    ca_port: int = 0
    repo_port: int = 0
    ocsp_port: int = 0
    curve_id: int = crypto.CURVE_160
    cert_lifetime_s: int = 30 * 86400
    short_lived_lifetime_s: int = profiles.DEFAULT_SHORT_LIVED_LIFETIME
    short_lived_max_s: int = profiles.SHORT_LIVED_MAX
    crl_validity_s: int = 300
    crl_refresh_s: int = 0
    freshness_s: int = ocsp.DEFAULT_FRESHNESS
    ca_name: str = "WPKI Root CA"


class LoopbackPKI:
    """Context manager owning every service of one PKI instance."""

    def __init__(self, state_dir, options: Optional[SuiteOptions] = None, clock=time.time):
        self.state_dir = Path(state_dir)
        self.options = options or SuiteOptions()
        self.clock = clock
        self._servers: list[net.FramedServer] = []
        self.peers: dict[str, tuple[ServerPeer, net.Address]] = {}

    def _bind(self, port: int, name: str) -> net.FramedServer:
        server = net.FramedServer((self.options.host, port), _unbound, name=name)
        self._servers.append(server)
        return server

    def __enter__(self) -> "LoopbackPKI":
        try:
            self._start()
        except BaseException:
            self.close()
            raise
        return self

    def _start(self) -> None:
        o = self.options
        # bind first: certificate URLs and AIA must name the real ports
        repo_srv = self._bind(o.repo_port, "repository")
        ca_srv = self._bind(o.ca_port, "ca")
        ocsp_srv = self._bind(o.ocsp_port, "ocsp")
        self.repo_address = repo_srv.address
        self.ca_address = ca_srv.address
        self.ocsp_address = ocsp_srv.address

        self.ca: CertificationAuthority = init_ca(CAConfig(
            state_dir=self.state_dir,
            name=o.ca_name,
            curve_id=o.curve_id,
            cert_lifetime_s=o.cert_lifetime_s,
            crl_validity_s=o.crl_validity_s,
            repo_address=self.repo_address,
            ocsp_address=self.ocsp_address,
        ), now=int(self.clock()))
        repo_srv.dispatch = self.ca.repository.dispatch
        ca_srv.dispatch = self.ca.dispatch

        keypair, cert = ocsp.provision_responder(self.ca, self.state_dir, int(self.clock()))
        self.responder = Responder(
            keypair, cert, self.ca.public_key, RemoteRepository(self.repo_address),
            crl_refresh_s=o.crl_refresh_s, short_lived_max_s=o.short_lived_max_s,
            clock=self.clock,
        )
        ocsp_srv.dispatch = self.responder.dispatch
        self.ca.generate_crl(int(self.clock()))
        for server in self._servers:
            server.start()

    @property
    def ocsp_public_key(self) -> bytes:
        return self.responder.public_key

    def add_peer(self, name: str, kind: str = "short", subject: Optional[str] = None,
                 port: int = 0):
        """Start a scripted server peer holding a fresh CA-issued certificate."""
        o = self.options
        subject = subject or f"{name}.example"
        key = crypto.generate_keypair(o.curve_id)
        now = int(self.clock())
        if kind == "short":
            cert = self.ca.issue_short_lived(subject, key.public_info, o.short_lived_lifetime_s,
                                             now, o.short_lived_max_s)
        elif kind == "wireless":
            cert, _ = self.ca.issue_service_certificate(subject, key.public_info,
                                                        profiles.EKU_SERVER_AUTH, now)
        else:
            raise ValueError(f"peer kind must be 'short' or 'wireless', not {kind!r}")
        peer = ServerPeer(cert, self.ocsp_address, self.ocsp_public_key,
                          freshness_s=o.freshness_s, clock=self.clock)
        server = peer.serve((o.host, port))
        self._servers.append(server)
        server.start()
        self.peers[name] = (peer, server.address)
        return peer, server.address

    def client(self, name: str = "client", **kw) -> Client:
        kw.setdefault("freshness_s", self.options.freshness_s)
        kw.setdefault("clock", self.clock)
        kw.setdefault("ocsp_public_key", self.ocsp_public_key)
        return Client(self.state_dir / name, **kw)

    def revoke(self, serial: int, reason: Reason = Reason.KEY_COMPROMISE) -> None:
        """Revoke through the CA service, as an operator would."""
        with net.Connection(self.ca_address, peer="operator") as conn:
            conn.call(RevokeCommand(serial, int(reason)), RevokeCommand)

    def publish_crl(self):
        with net.Connection(self.ca_address, peer="operator") as conn:
            return conn.call(RevokeCommand(), RevocationList)

    def close(self) -> None:
        while self._servers:
            self._servers.pop().stop()

    def __exit__(self, *exc):
        self.close()


# -- scripted demo ------------------------------------------------------------

CLIENT_CERT_KIND = profiles.WirelessCertificate.KIND


@dataclass
class DemoResult:
    enrollment: TrafficReport
    outcomes: dict[str, TransactionOutcome] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def reports(self) -> list[tuple[str, TrafficReport]]:
        return [("enrollment", self.enrollment)] + [(k, v.report) for k, v in self.outcomes.items()]


def check_delegation(name: str, report: TrafficReport) -> list[str]:
    """Zero-CRL and cert_url-only checks on one client report."""
    failures = []
    if report.received_crl_bytes != 0:
        failures.append(f"{name}: client received {report.received_crl_bytes} CRL bytes")
    for peer, kinds in report.sent_kinds.items():
        if CLIENT_CERT_KIND in kinds:
            failures.append(f"{name}: client sent a certificate frame to {peer}")
    return failures


def run_demo(state_dir, options: Optional[SuiteOptions] = None,
             out: Callable[[str], None] = print) -> DemoResult:
    """Enroll, transact with a good peer, revoke, republish, transact again."""
    with LoopbackPKI(state_dir, options) as pki:
        out(f"repository {pki.repo_address[0]}:{pki.repo_address[1]}, "
            f"CA {pki.ca_address[0]}:{pki.ca_address[1]}, "
            f"OCSP {pki.ocsp_address[0]}:{pki.ocsp_address[1]}")
        client = pki.client()
        state, enroll_report = client.run_enrollment(pki.ca_address, pki.repo_address,
                                                     pki.options.curve_id,
                                                     device_id="IMEI-490154203237518",
                                                     subject="mobile-0001")
        out(f"enrolled {state.credentials.username}; certificate at {state.cert_url}")
        result = DemoResult(enroll_report)

        _, short_addr = pki.add_peer("short-lived-server", "short")
        wireless_peer, wireless_addr = pki.add_peer("wireless-server", "wireless")
        expectations = []

        def transact(label, address, expected):
            outcome = client.run_transaction(address, pki.ocsp_address)
            result.outcomes[label] = outcome
            out(f"{label}: peer {outcome.peer_subject!r} status={outcome.peer_status.name.lower()} "
                f"proceeded={outcome.proceeded} peer_accepted={outcome.peer_accepted}")
            expectations.append((label, outcome, expected))

        transact("good-short-lived", short_addr, Status.GOOD)
        transact("good-wireless", wireless_addr, Status.GOOD)

        serial = wireless_peer.certificate.serial
        pki.revoke(serial)
        crl = pki.publish_crl()
        out(f"revoked serial {serial}; CRL republished with {len(crl.entries)} entr"
            f"{'y' if len(crl.entries) == 1 else 'ies'}")
        transact("revoked-wireless", wireless_addr, Status.REVOKED)

    for label, outcome, expected in expectations:
        if outcome.peer_status != expected:
            result.failures.append(f"{label}: expected {expected.name}, got {outcome.peer_status.name}")
        if expected == Status.GOOD and not outcome.peer_accepted:
            result.failures.append(f"{label}: the peer did not accept the client ({outcome.detail})")
    for name, report in result.reports():
        result.failures.extend(check_delegation(name, report))
    return result
