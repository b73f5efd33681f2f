"""Constrained-device model.

A :class:`Client` runs the enrollment flow against the CA and the
transaction flow against a server peer, metering every frame it sends and
receives. It stores only its private key, credentials and certificate URL
(``<state_dir>/client/state``); certificates are never kept, and revocation
lists are never downloaded - the OCSP responder does that work.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import codec, crypto, enrollment, net, ocsp, profiles
from .enrollment import ClientState, CertificateResponse, Credentials
from .errors import (
    PeerRejected,
    PeerUnreachable,
    StorageFailure,
    TransportError,
    ValidationFailed,
    WpkiError,
)
from .ocsp import Status, StatusRequest
from .profiles import ShortLivedCertificate, WirelessCertificate
from .repository import FetchCommand, RemoteRepository

log = logging.getLogger(__name__)


@dataclass
class TrafficReport:
    sent_bytes: dict[str, int] = field(default_factory=dict)
    received_bytes: dict[str, int] = field(default_factory=dict)
    received_crl_bytes: int = 0
    persisted_bytes: int = 0
    # frame kinds per peer, in order; lets callers check what crossed each link
    sent_kinds: dict[str, list[int]] = field(default_factory=dict)
    received_kinds: dict[str, list[int]] = field(default_factory=dict)

    @classmethod
    def from_meter(cls, meter: net.TrafficMeter, persisted_bytes: int = 0) -> "TrafficReport":
        return cls(
            sent_bytes=dict(meter.sent),
            received_bytes=dict(meter.received),
            received_crl_bytes=meter.received_crl_bytes,
            persisted_bytes=persisted_bytes,
            sent_kinds={k: list(v) for k, v in meter.sent_kinds.items()},
            received_kinds={k: list(v) for k, v in meter.received_kinds.items()},
        )

    @property
    def total_sent(self) -> int:
        return sum(self.sent_bytes.values())

    @property
    def total_received(self) -> int:
        return sum(self.received_bytes.values())

    def to_text(self) -> str:
        lines = []
        for peer in sorted(set(self.sent_bytes) | set(self.received_bytes)):
            lines.append(f"sent_bytes[{peer}]={self.sent_bytes.get(peer, 0)}")
            lines.append(f"received_bytes[{peer}]={self.received_bytes.get(peer, 0)}")
        lines.append(f"received_crl_bytes={self.received_crl_bytes}")
        lines.append(f"persisted_bytes={self.persisted_bytes}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


@dataclass
class TransactionOutcome:
    peer_subject: str
    peer_status: Status
    proceeded: bool
    report: TrafficReport
    peer_accepted: Optional[bool] = None
    detail: Optional[str] = None

    def __post_init__(self):
        if self.proceeded and self.peer_status != Status.GOOD:
            raise ValueError("a transaction can only proceed with a good peer")


def _attach(exc: WpkiError, meter: net.TrafficMeter, persisted: int = 0) -> WpkiError:
    exc.report = TrafficReport.from_meter(meter, persisted)  # type: ignore[attr-defined]
    return exc


class Client:
    """One constrained device. Single owner: run one flow at a time."""

    def __init__(self, state_dir, ocsp_public_key: Optional[bytes] = None, *,
                 freshness_s: int = ocsp.DEFAULT_FRESHNESS, clock=time.time,
                 timeout: float = net.DEFAULT_TIMEOUT):
        self.state_path = Path(state_dir) / "client" / "state"
        self.ocsp_public_key = ocsp_public_key
        self.freshness_s = freshness_s
        self.clock = clock
        self.timeout = timeout

    # -- state --

    def load_state(self) -> ClientState:
        return ClientState.decode(self.state_path.read_bytes())

    def persisted_bytes(self) -> int:
        try:
            return self.state_path.stat().st_size
        except FileNotFoundError:
            return 0

    def _save_state(self, state: ClientState) -> int:
        data = state.encode()
        try:
            self.state_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.state_path.with_name("state.tmp")
            fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, self.state_path)
        except OSError as exc:
            raise StorageFailure(str(exc)) from None
        return len(data)

    # -- enrollment --

    def run_enrollment(self, ca_address: net.Address, repo_address: Optional[net.Address] = None,
                       curve_id: int = crypto.CURVE_160, *, device_id: str = "device-0001",
                       subject: Optional[str] = None) -> tuple[ClientState, TrafficReport]:
        """Register, request and receive a certificate; persist the minimal state.

        With ``repo_address`` the client also checks that the returned URL
        dereferences to the certificate it was handed.
        """
        meter = net.TrafficMeter()
        try:
            reg = enrollment.client_begin_registration(device_id)
            with net.Connection(ca_address, peer="ca", meter=meter, timeout=self.timeout) as conn:
                creds = conn.call(reg, Credentials)
                keypair = crypto.generate_keypair(curve_id)
                req = enrollment.client_build_request(creds, keypair, subject or device_id)
                resp = conn.call(req, CertificateResponse)
            state = enrollment.client_complete(resp, keypair, creds, int(self.clock()))
            if repo_address is not None:
                remote = RemoteRepository(repo_address, self.timeout, meter)
                if remote.fetch_certificate(resp.cert_url) != resp.certificate:
                    raise ValidationFailed("cert_url does not dereference to the issued certificate")
            persisted = self._save_state(state)
        except WpkiError as exc:
            raise _attach(exc, meter) from None
        return state, TrafficReport.from_meter(meter, persisted)

    # -- transaction --

    def validate_peer(self, cert, ocsp_address: net.Address,
                      meter: net.TrafficMeter) -> tuple[Status, ocsp.Verdict]:
        resp, nonce = ocsp.query(ocsp_address, cert, meter=meter, timeout=self.timeout)
        verdict = ocsp.client_validate(resp, nonce, self.ocsp_public_key,
                                       int(self.clock()), self.freshness_s)
        if verdict.reason in ("bad-signature", "nonce-mismatch", "stale"):
            raise ValidationFailed(f"OCSP response rejected: {verdict.reason}", status=resp.status)
        return resp.status, verdict

    def run_transaction(self, peer_address: net.Address,
                        ocsp_address: net.Address) -> TransactionOutcome:
        """Get the peer's certificate, have OCSP judge it, then send our URL.

        The client never sends its certificate: only the URL, and only after
        the peer's certificate came back good.
        """
        if self.ocsp_public_key is None:
            raise ValidationFailed("no OCSP responder key configured")
        state = self.load_state()
        meter = net.TrafficMeter()
        persisted = self.persisted_bytes()
        try:
            with net.Connection(peer_address, peer="peer", meter=meter, timeout=self.timeout,
                                error=PeerUnreachable) as conn:
                cert = conn.call(FetchCommand(), WirelessCertificate, ShortLivedCertificate)
                status, verdict = self.validate_peer(cert, ocsp_address, meter)
                if status != Status.GOOD:
                    return TransactionOutcome(cert.subject, status, False,
                                              TrafficReport.from_meter(meter, persisted),
                                              detail=verdict.reason)
                try:
                    conn.call(StatusRequest(state.cert_url, ocsp.new_nonce()), net.ErrorReply)
                    accepted, detail = True, "accepted"
                except PeerRejected as exc:
                    accepted, detail = False, exc.detail
        except WpkiError as exc:
            raise _attach(exc, meter, persisted) from None
        return TransactionOutcome(cert.subject, status, True,
                                  TrafficReport.from_meter(meter, persisted),
                                  peer_accepted=accepted, detail=detail)
