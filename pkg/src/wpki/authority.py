"""Certification authority state and service.

State directory layout (under ``state_dir``)::

    ca/key            curve id byte + private scalar
    ca/cert           self-signed CA certificate (canonical encoding)
    ca/ledger         append-only JSON lines: issue / revoke events
    ca/registrations  append-only JSON lines: register / consume events
    ca/lock           advisory lock serializing writers across processes

Issued certificates are written to the repository *before* the ledger entry
and the reply, so a crash can leave at most an orphan certificate (adopted
into the ledger on resume), never a URL that points nowhere.
"""

from __future__ import annotations

import enum
import fcntl
import json
import logging
import os
import secrets
import string
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

from . import codec, crypto, net, profiles
from .codec import Field, TIME, U8, U64, Text
from .crypto import KeyPair, PublicKeyInfo, SIGNATURE, SignatureValue
from .errors import (
    AlreadyRevoked,
    CorruptState,
    InvariantViolation,
    KindMismatch,
    Malformed,
    RepositoryUnavailable,
    StorageFailure,
    UnknownSerial,
    WpkiError,
)
from .profiles import CAIdentity, CertificateTemplate, WirelessCertificate
from .repository import Repository, crl_url

log = logging.getLogger(__name__)

DEFAULT_PORT = 7001
DEFAULT_CRL_VALIDITY = 300
DEFAULT_CERT_LIFETIME = 30 * 86400
CA_CERT_LIFETIME = 10 * 365 * 86400
CA_SERIAL = 1


class Reason(enum.IntEnum):
    UNSPECIFIED = 0
    KEY_COMPROMISE = 1
    SUPERSEDED = 2


class RevokedEntry(NamedTuple):
    serial: int
    revoked_at: int
    reason: Reason


class _RevokedEntries(codec.ValueCodec):
    """Concatenated ``serial(8) revoked_at(8) reason(1)`` records."""

    SIZE = 17

    def check(self, value, name):
        if not isinstance(value, tuple):
            raise InvariantViolation(f"{name}: expected tuple of RevokedEntry")
        for entry in value:
            if not isinstance(entry, RevokedEntry):
                raise InvariantViolation(f"{name}: expected RevokedEntry, got {entry!r}")
            U64.check(entry.serial, name)
            U64.check(entry.revoked_at, name)
            if entry.reason not in Reason.__members__.values():
                raise InvariantViolation(f"{name}: unknown reason {entry.reason!r}")
        serials = [e.serial for e in value]
        if any(a >= b for a, b in zip(serials, serials[1:])):
            raise InvariantViolation(f"{name}: entries must be strictly ascending by serial")

    def encode(self, value):
        return b"".join(
            e.serial.to_bytes(8, "big") + e.revoked_at.to_bytes(8, "big") + bytes([e.reason])
            for e in value
        )

    def decode(self, raw):
        if len(raw) % self.SIZE:
            raise Malformed(f"revoked entries: {len(raw)} bytes is not a multiple of {self.SIZE}")
        entries = []
        for pos in range(0, len(raw), self.SIZE):
            rec = raw[pos:pos + self.SIZE]
            try:
                reason = Reason(rec[16])
            except ValueError:
                raise Malformed(f"unknown revocation reason {rec[16]}") from None
            entries.append(RevokedEntry(int.from_bytes(rec[:8], "big"),
                                        int.from_bytes(rec[8:16], "big"), reason))
        return tuple(entries)


@codec.register
@dataclass(frozen=True, kw_only=True)
class RevocationList(profiles._Signed):
    KIND = 0x07
    FIELDS = (
        Field(0x04, "issuer", Text(min_bytes=1)),
        Field(0x20, "signature", SIGNATURE),
        Field(0x40, "entries", _RevokedEntries()),
        Field(0x41, "this_update", TIME),
        Field(0x42, "next_update", TIME),
    )

    issuer: str
    this_update: int
    next_update: int
    entries: tuple[RevokedEntry, ...]
    signature: SignatureValue

    def check_invariants(self):
        if self.this_update >= self.next_update:
            raise InvariantViolation("this_update must precede next_update")

    def serials(self) -> frozenset[int]:
        return frozenset(e.serial for e in self.entries)

    def lookup(self, serial: int) -> Optional[RevokedEntry]:
        for entry in self.entries:
            if entry.serial == serial:
                return entry
        return None


@codec.register
@dataclass(frozen=True)
class RevokeCommand(codec.Entity):
    """Operator command: revoke ``serial``, or (no serial) publish a fresh CRL."""

    KIND = 0x0B
    FIELDS = (
        Field(0x02, "serial", U64, True),
        Field(0x43, "reason", U8, True),
    )

    serial: Optional[int] = None
    reason: Optional[int] = None


@dataclass
class RegistrationRecord:
    username: str
    password_derivative: bytes
    random_code: str
    device_id: str
    consumed: bool = False


@dataclass
class IssuedEntry:
    serial: int
    subject: str
    cert_url: str
    revoked_at: Optional[int] = None
    reason: Optional[Reason] = None


@dataclass
class CAConfig:
    state_dir: Path
    name: str = "WPKI Root CA"
    curve_id: int = crypto.CURVE_160
    cert_lifetime_s: int = DEFAULT_CERT_LIFETIME
    crl_validity_s: int = DEFAULT_CRL_VALIDITY
    repo_state_dir: Optional[Path] = None
    repo_address: net.Address = ("127.0.0.1", 7002)
    ocsp_address: net.Address = ("127.0.0.1", 7003)
    policy: str = profiles.DEFAULT_POLICY

    def __post_init__(self):
        self.state_dir = Path(self.state_dir)
        if self.repo_state_dir is None:
            self.repo_state_dir = self.state_dir
        self.repo_state_dir = Path(self.repo_state_dir)


def _now(now: Optional[int]) -> int:
    return int(time.time()) if now is None else int(now)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class CAStore:
    """Registration records and the issuance ledger.

    Both files are append-only JSON lines. Every mutation takes the thread
    lock plus an exclusive ``flock`` and first replays whatever other
    processes appended, so there is a single writer at a time.
    """

    def __init__(self, ca_dir: Path):
        self.ca_dir = ca_dir
        self.ledger_path = ca_dir / "ledger"
        self.registrations_path = ca_dir / "registrations"
        self._lock_path = ca_dir / "lock"
        self._mutex = threading.RLock()
        self._depth = 0
        self._offsets = {self.ledger_path: 0, self.registrations_path: 0}
        self.registrations: dict[str, RegistrationRecord] = {}
        self.issued: dict[int, IssuedEntry] = {}
        self._registration_count = 0
        for path in self._offsets:
            path.touch(exist_ok=True)
        self._lock_path.touch(exist_ok=True)
        with self.locked():
            pass

    @contextmanager
    def locked(self):
        with self._mutex:
            if self._depth:
                self._depth += 1
                try:
                    yield self
                finally:
                    self._depth -= 1
                return
            self._depth = 1
            try:
                with self._flocked():
                    self._replay()
                    yield self
            finally:
                self._depth = 0

    @contextmanager
    def _flocked(self):
        with open(self._lock_path, "rb") as lockf:
            fcntl.flock(lockf, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(lockf, fcntl.LOCK_UN)

    def _replay(self) -> None:
        for path, offset in self._offsets.items():
            with open(path, "rb") as f:
                f.seek(offset)
                data = f.read()
            if not data:
                continue
            if not data.endswith(b"\n"):
                raise CorruptState(f"{path.name}: truncated final record")
            for line in data.splitlines():
                try:
                    self._apply(path, json.loads(line))
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptState(f"{path.name}: bad record {line[:60]!r}: {exc}") from None
            self._offsets[path] = offset + len(data)

    def _apply(self, path: Path, rec: dict) -> None:
        op = rec["op"]
        if path == self.registrations_path:
            if op == "register":
                self.registrations[rec["username"]] = RegistrationRecord(
                    rec["username"], bytes.fromhex(rec["key"]), rec["random_code"], rec["device_id"]
                )
                self._registration_count += 1
            elif op == "consume":
                self.registrations[rec["username"]].consumed = True
            else:
                raise ValueError(f"unknown op {op!r}")
        else:
            if op == "issue":
                self.issued[rec["serial"]] = IssuedEntry(rec["serial"], rec["subject"], rec["url"])
            elif op == "revoke":
                entry = self.issued[rec["serial"]]
                entry.revoked_at = rec["at"]
                entry.reason = Reason(rec["reason"])
            else:
                raise ValueError(f"unknown op {op!r}")

    def _append(self, path: Path, rec: dict) -> None:
        line = (json.dumps(rec, sort_keys=True) + "\n").encode()
        try:
            with open(path, "ab") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
        except OSError as exc:
            raise StorageFailure(str(exc)) from None
        self._apply(path, rec)
        self._offsets[path] += len(line)

    # callers hold locked()

    def next_username(self) -> str:
        return f"u{self._registration_count + 1:08d}"

    def add_registration(self, record: RegistrationRecord) -> None:
        if record.username in self.registrations:
            raise StorageFailure(f"username {record.username} exists")
        self._append(self.registrations_path, {
            "op": "register", "username": record.username,
            "key": record.password_derivative.hex(), "random_code": record.random_code,
            "device_id": record.device_id,
        })

    def consume_registration(self, username: str) -> None:
        self._append(self.registrations_path, {"op": "consume", "username": username})

    def record_issue(self, serial: int, subject: str, url: str) -> None:
        self._append(self.ledger_path, {"op": "issue", "serial": serial, "subject": subject, "url": url})

    def record_revoke(self, serial: int, at: int, reason: Reason) -> None:
        self._append(self.ledger_path, {"op": "revoke", "serial": serial, "at": at, "reason": int(reason)})


_CODE_ALPHABET = string.ascii_uppercase + string.digits
_PASSWORD_ALPHABET = string.ascii_letters + string.digits


def random_text(alphabet: str, length: int = 16) -> str:
    return "".join(secrets.choice(alphabet) for _ in range(length))


class CertificationAuthority:
    """A loaded CA: key, self-signed certificate, store and repository."""

    def __init__(self, config: CAConfig, keypair: KeyPair, certificate: WirelessCertificate,
                 store: CAStore, repository: Repository):
        self.config = config
        self.keypair = keypair
        self.certificate = certificate
        self.store = store
        self.repository = repository
        repo_host, repo_port = config.repo_address
        ocsp_host, ocsp_port = config.ocsp_address
        self.identity = CAIdentity(
            name=config.name,
            keypair=keypair,
            crl_url=crl_url(repo_host, repo_port),
            aia_url=f"wpki://{ocsp_host}:{ocsp_port}/ocsp",
            policy=config.policy,
            alt_names=(config.name,),
        )

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    # -- issuance --

    def default_template(self, subject: str, **extensions) -> CertificateTemplate:
        ext = {
            "issuer_alt_names": self.identity.alt_names,
            "extended_key_usage": profiles.EKU_CLIENT_AUTH | profiles.EKU_SERVER_AUTH,
        }
        ext.update(extensions)
        return CertificateTemplate(subject, self.config.cert_lifetime_s, ext)

    def issue(self, template: CertificateTemplate, subject_key: PublicKeyInfo,
              now: Optional[int] = None, on_stored=None) -> tuple[WirelessCertificate, str]:
        """Build, store and record a certificate; returns it with its URL.

        ``on_stored`` runs under the store lock after the certificate is in the
        repository and the ledger, for bookkeeping that must be atomic with it.
        """
        with self.store.locked() as store:
            serial = max([CA_SERIAL, *store.issued, *self.repository.serials()]) + 1
            cert = profiles.build_certificate(template, subject_key, self.identity, serial, now)
            try:
                url = self.repository.store_certificate(cert)
            except StorageFailure as exc:
                raise RepositoryUnavailable(str(exc)) from None
            store.record_issue(serial, cert.subject, url)
            if on_stored is not None:
                on_stored(store)
        return cert, url

    def issue_service_certificate(self, subject: str, subject_key: PublicKeyInfo,
                                  extended_key_usage: int, now: Optional[int] = None):
        template = self.default_template(subject, extended_key_usage=extended_key_usage)
        return self.issue(template, subject_key, now)

    def issue_short_lived(self, subject: str, ecdh_public: PublicKeyInfo,
                          lifetime_s: int = profiles.DEFAULT_SHORT_LIVED_LIFETIME,
                          now: Optional[int] = None,
                          max_lifetime_s: int = profiles.SHORT_LIVED_MAX):
        return profiles.build_short_lived(subject, ecdh_public, lifetime_s, self.identity,
                                          now, max_lifetime_s)

    # -- revocation --

    def revoke(self, serial: int, reason: Reason = Reason.UNSPECIFIED,
               now: Optional[int] = None) -> None:
        with self.store.locked() as store:
            entry = store.issued.get(serial)
            if entry is None:
                raise UnknownSerial(f"serial {serial} was never issued")
            if entry.revoked_at is not None:
                raise AlreadyRevoked(f"serial {serial} revoked at {entry.revoked_at}")
            store.record_revoke(serial, _now(now), Reason(reason))

    def revoked_entries(self) -> tuple[RevokedEntry, ...]:
        with self.store.locked() as store:
            return tuple(
                RevokedEntry(e.serial, e.revoked_at, e.reason)
                for e in sorted(store.issued.values(), key=lambda e: e.serial)
                if e.revoked_at is not None
            )

    def generate_crl(self, now: Optional[int] = None,
                     validity_s: Optional[int] = None) -> RevocationList:
        now = _now(now)
        validity_s = self.config.crl_validity_s if validity_s is None else validity_s
        unsigned = RevocationList(
            issuer=self.config.name,
            this_update=now,
            next_update=now + validity_s,
            entries=self.revoked_entries(),
            signature=SignatureValue(crypto.ECDSA_SHA256, b""),
        )
        crl = profiles.sign_entity(unsigned, self.keypair)
        try:
            self.repository.publish_crl(crl)
        except StorageFailure as exc:
            raise RepositoryUnavailable(str(exc)) from None
        return crl

    # -- service --

    def dispatch(self, kind: int, payload: bytes):
        from . import enrollment

        if kind == enrollment.RegistrationRequest.KIND:
            req = codec.decode_entity(payload, enrollment.RegistrationRequest)
            return enrollment.ca_handle_registration(self, req)
        if kind == enrollment.CertificateRequest.KIND:
            req = codec.decode_entity(payload, enrollment.CertificateRequest)
            return enrollment.ca_issue(self, enrollment.ca_verify_request(self, req))
        if kind == RevokeCommand.KIND:
            cmd = codec.decode_entity(payload, RevokeCommand)
            if cmd.serial is None:
                return self.generate_crl()
            self.revoke(cmd.serial, Reason(cmd.reason or 0))
            return cmd
        raise KindMismatch(f"the CA does not handle {codec.KINDS[kind]}")

    def serve(self, address: net.Address = ("127.0.0.1", DEFAULT_PORT)) -> net.FramedServer:
        return net.FramedServer(address, self.dispatch, name="ca")


def _load_key(path: Path) -> KeyPair:
    data = path.read_bytes()
    if len(data) < 2:
        raise CorruptState(f"{path}: too short")
    try:
        keypair = crypto.keypair_from_private(data[0], data[1:])
    except WpkiError as exc:
        raise CorruptState(f"{path}: {exc}") from None
    return keypair


def init_ca(config: CAConfig, now: Optional[int] = None) -> CertificationAuthority:
    """Create a CA under ``config.state_dir``, or resume the one already there."""
    ca_dir = config.state_dir / "ca"
    key_path, cert_path = ca_dir / "key", ca_dir / "cert"
    if key_path.exists():
        return _resume(config, key_path, cert_path)
    if cert_path.exists() or (ca_dir / "ledger").exists():
        raise CorruptState(f"{ca_dir}: state present but key missing")
    ca_dir.mkdir(parents=True, exist_ok=True)

    keypair = crypto.generate_keypair(config.curve_id)
    repository = Repository(config.repo_state_dir, keypair.public_key, *config.repo_address)
    store = CAStore(ca_dir)
    ca = CertificationAuthority(config, keypair, None, store, repository)  # type: ignore[arg-type]
    template = ca.default_template(
        config.name,
        key_usage=profiles.KU_DIGITAL_SIGNATURE | profiles.KU_KEY_CERT_SIGN | profiles.KU_CRL_SIGN,
        extended_key_usage=0,
    )
    template = CertificateTemplate(template.subject, CA_CERT_LIFETIME, template.extensions)
    cert = profiles.build_certificate(template, keypair.public_info, ca.identity, CA_SERIAL, now)
    with store.locked():
        url = repository.store_certificate(cert)
        store.record_issue(CA_SERIAL, cert.subject, url)
    _atomic_write(cert_path, codec.encode_entity(cert))
    # the key file is written last: its presence marks a complete init
    _atomic_write(key_path, bytes([keypair.curve_id]) + keypair.private_key)
    ca.certificate = cert
    log.info("initialized CA %r in %s", config.name, ca_dir)
    return ca


def _resume(config: CAConfig, key_path: Path, cert_path: Path) -> CertificationAuthority:
    keypair = _load_key(key_path)
    try:
        cert = codec.decode_entity(cert_path.read_bytes(), WirelessCertificate)
    except FileNotFoundError:
        raise CorruptState(f"{cert_path}: missing") from None
    except WpkiError as exc:
        raise CorruptState(f"{cert_path}: {exc}") from None
    if cert.public_key_info.point != keypair.public_key:
        raise CorruptState("CA certificate does not match CA key")
    if not profiles.verify_signature(cert, keypair.public_key):
        raise CorruptState("CA certificate signature is invalid")
    store = CAStore(key_path.parent)
    repository = Repository(config.repo_state_dir, keypair.public_key, *config.repo_address)
    with store.locked():
        # adopt certificates stored before a crash cut off their ledger entry
        for serial in repository.serials():
            if serial not in store.issued:
                try:
                    orphan = repository.fetch_by_serial(serial)
                except WpkiError as exc:
                    raise CorruptState(f"repository serial {serial}: {exc}") from None
                store.record_issue(serial, orphan.subject, repository.url_for(serial))
    return CertificationAuthority(config, keypair, cert, store, repository)

