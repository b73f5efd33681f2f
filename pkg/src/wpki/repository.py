"""The certificate directory.

Certificates are stored one file per serial under ``repo/certs/<serial>``
and addressed by ``wpki://<host>:<port>/certs/<serial>`` URLs; the latest
CA-signed revocation list lives in ``repo/crl/latest``. The repository is
the only place a revocation list is ever downloaded from.
"""

from __future__ import annotations

import os
import re
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import codec, net, profiles
from .codec import Field, U64
from .errors import (
    BadSignature,
    BadUrl,
    DuplicateSerial,
    InvariantViolation,
    KindMismatch,
    NoCrlYet,
    NotFound,
    RepositoryUnavailable,
    StorageFailure,
    TransportError,
)
from .profiles import WirelessCertificate

DEFAULT_PORT = 7002
SCHEME = "wpki"

_URL = re.compile(r"^wpki://(?P<host>[^/:\s]+):(?P<port>\d{1,5})/certs/(?P<serial>\d+)$")


@dataclass(frozen=True)
class CertURL:
    host: str
    port: int
    serial: int

    def __str__(self) -> str:
        return f"{SCHEME}://{self.host}:{self.port}/certs/{self.serial}"

    @classmethod
    def parse(cls, text: str) -> "CertURL":
        m = _URL.match(text)
        if m is None:
            raise BadUrl(f"not a certificate URL: {text!r}")
        port = int(m["port"])
        if not 0 < port < 65536:
            raise BadUrl(f"port out of range in {text!r}")
        serial = int(m["serial"])
        if serial >= 1 << 64 or str(serial) != m["serial"]:
            raise BadUrl(f"bad serial in {text!r}")
        return cls(m["host"], port, serial)


def cert_url(host: str, port: int, serial: int) -> str:
    return str(CertURL(host, port, serial))


def crl_url(host: str, port: int) -> str:
    return f"{SCHEME}://{host}:{port}/crl/latest"


@codec.register
@dataclass(frozen=True)
class FetchCommand(codec.Entity):
    """Ask for the certificate with ``serial``, or the latest CRL when absent."""

    KIND = 0x0C
    FIELDS = (Field(0x02, "serial", U64, True),)

    serial: Optional[int] = None


class Repository:
    """File-backed store. ``host``/``port`` are what URLs are minted with."""

    def __init__(self, state_dir, ca_public_key: Optional[bytes] = None,
                 host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        root = Path(state_dir) / "repo"
        self.certs_dir = root / "certs"
        self.crl_dir = root / "crl"
        self.ca_public_key = ca_public_key
        self.host = host
        self.port = port
        self._publish_lock = threading.Lock()
        try:
            self.certs_dir.mkdir(parents=True, exist_ok=True)
            self.crl_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageFailure(str(exc)) from None

    def url_for(self, serial: int) -> str:
        return cert_url(self.host, self.port, serial)

    def serials(self) -> list[int]:
        return sorted(int(p.name) for p in self.certs_dir.iterdir() if p.name.isdigit())

    def store_certificate(self, cert: WirelessCertificate) -> str:
        report = profiles.check_generation(cert)
        if not report:
            raise InvariantViolation(f"refusing non-conformant certificate: {report.violations}")
        data = codec.encode_entity(cert)
        target = self.certs_dir / str(cert.serial)
        try:
            fd, tmp = tempfile.mkstemp(dir=self.certs_dir, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
                    f.flush()
                    os.fsync(f.fileno())
                # link() refuses to overwrite, so a serial can be written once only
                os.link(tmp, target)
            finally:
                os.unlink(tmp)
        except FileExistsError:
            raise DuplicateSerial(f"serial {cert.serial} already stored") from None
        except OSError as exc:
            raise StorageFailure(str(exc)) from None
        return self.url_for(cert.serial)

    def fetch_bytes(self, serial: int) -> bytes:
        try:
            return (self.certs_dir / str(serial)).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"serial {serial}") from None
        except OSError as exc:
            raise StorageFailure(str(exc)) from None

    def fetch_by_serial(self, serial: int) -> WirelessCertificate:
        return codec.decode_entity(self.fetch_bytes(serial), WirelessCertificate)

    def fetch_certificate(self, url: str) -> WirelessCertificate:
        return self.fetch_by_serial(CertURL.parse(url).serial)

    def publish_crl(self, crl) -> None:
        if self.ca_public_key is None:
            raise BadSignature("repository has no CA key configured")
        if not profiles.verify_signature(crl, self.ca_public_key):
            raise BadSignature("CRL is not signed by the configured CA")
        data = codec.encode_entity(crl)
        with self._publish_lock:
            try:
                fd, tmp = tempfile.mkstemp(dir=self.crl_dir, prefix=".tmp-")
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
                    f.flush()
                    os.fsync(f.fileno())
                os.replace(tmp, self.crl_dir / "latest")
            except OSError as exc:
                raise StorageFailure(str(exc)) from None

    def fetch_latest_crl_bytes(self) -> bytes:
        try:
            return (self.crl_dir / "latest").read_bytes()
        except FileNotFoundError:
            raise NoCrlYet("no CRL published") from None

    def fetch_latest_crl(self):
        return codec.decode_entity(self.fetch_latest_crl_bytes(), 0x07)

    # -- service --

    def dispatch(self, kind: int, payload: bytes):
        if kind != FetchCommand.KIND:
            raise KindMismatch(f"repository does not handle {codec.KINDS[kind]}")
        cmd = codec.decode_entity(payload, FetchCommand)
        if cmd.serial is None:
            return 0x07, self.fetch_latest_crl_bytes()
        return WirelessCertificate.KIND, self.fetch_bytes(cmd.serial)

    def serve(self, address: net.Address = ("127.0.0.1", DEFAULT_PORT)) -> net.FramedServer:
        return net.FramedServer(address, self.dispatch, name="repository")


class RemoteRepository:
    """Repository reached over the framed protocol; same read API as Repository."""

    def __init__(self, address: net.Address, timeout: float = net.DEFAULT_TIMEOUT,
                 meter: Optional[net.TrafficMeter] = None, peer: str = "repository"):
        self.address = address
        self.timeout = timeout
        self.meter = meter
        self.peer = peer

    def _fetch(self, address: net.Address, serial: Optional[int], *expected):
        try:
            with net.Connection(address, timeout=self.timeout, meter=self.meter,
                                peer=self.peer, error=TransportError) as conn:
                return conn.call(FetchCommand(serial), *expected)
        except TransportError as exc:
            raise RepositoryUnavailable(str(exc)) from None

    def fetch_by_serial(self, serial: int) -> WirelessCertificate:
        return self._fetch(self.address, serial, WirelessCertificate)

    def fetch_certificate(self, url: str) -> WirelessCertificate:
        parsed = CertURL.parse(url)
        return self._fetch((parsed.host, parsed.port), parsed.serial, WirelessCertificate)

    def fetch_latest_crl(self):
        return self._fetch(self.address, None, codec.entity_class(0x07))

