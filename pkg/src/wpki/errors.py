"""Exception hierarchy shared by every wpki component.

Each error class carries a stable numeric ``code`` so that a failure raised
inside a service can travel to the peer in an ErrorReply frame and be raised
again there as the same class (see :func:`error_for_code`).
"""

from __future__ import annotations


class WpkiError(Exception):
    code = 0x7E
    slug = "internal"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.slug)
        self.detail = detail


# -- codec --------------------------------------------------------------------

class CodecError(WpkiError):
    code = 0x01
    slug = "malformed"


class Malformed(CodecError):
    code = 0x01
    slug = "malformed"


class UnknownTag(CodecError):
    code = 0x02
    slug = "unknown-tag"


class NonCanonical(CodecError):
    code = 0x03
    slug = "non-canonical"


class KindMismatch(CodecError):
    code = 0x04
    slug = "kind-mismatch"


class InvariantViolation(CodecError):
    code = 0x05
    slug = "invariant-violation"


class FieldTooLarge(CodecError):
    code = 0x06
    slug = "field-too-large"


class PayloadTooLarge(CodecError):
    code = 0x07
    slug = "payload-too-large"


class Truncated(CodecError):
    code = 0x08
    slug = "truncated"


class UnknownKind(CodecError):
    code = 0x09
    slug = "unknown-kind"


# -- crypto -------------------------------------------------------------------

class CryptoError(WpkiError):
    code = 0x10
    slug = "crypto"


class UnsupportedCurve(CryptoError):
    code = 0x11
    slug = "unsupported-curve"


class InvalidKey(CryptoError):
    code = 0x12
    slug = "invalid-key"


class MalformedSignature(CryptoError):
    code = 0x13
    slug = "malformed-signature"


class MalformedKey(CryptoError):
    code = 0x14
    slug = "malformed-key"


class EmptyCredential(CryptoError):
    code = 0x15
    slug = "empty-credential"


class BadKeyLength(CryptoError):
    code = 0x16
    slug = "bad-key-length"


class SigningFailure(CryptoError):
    code = 0x17
    slug = "signing-failure"


# -- profiles -----------------------------------------------------------------

class ProfileError(WpkiError):
    code = 0x20
    slug = "profile"


class NonConformantTemplate(ProfileError):
    code = 0x21
    slug = "non-conformant-template"

    def __init__(self, report=None, detail: str = ""):
        self.report = report
        if report is not None and not detail:
            detail = "; ".join(f"{v.field}:{v.rule}" for v in report.violations)
        super().__init__(detail)


class LifetimeTooLong(ProfileError):
    code = 0x22
    slug = "lifetime-too-long"


# -- enrollment ---------------------------------------------------------------

class EnrollmentError(WpkiError):
    code = 0x30
    slug = "enrollment"


class EmptyDeviceId(EnrollmentError):
    code = 0x31
    slug = "bad-device-id"


class UnknownReference(EnrollmentError):
    code = 0x32
    slug = "unknown-reference"


class MacMismatch(EnrollmentError):
    code = 0x33
    slug = "mac-mismatch"


class PopFailure(EnrollmentError):
    code = 0x34
    slug = "pop-failure"


class InvalidKeypair(EnrollmentError):
    code = 0x35
    slug = "invalid-keypair"


class KeyMismatch(EnrollmentError):
    code = 0x36
    slug = "key-mismatch"


class NonConformant(EnrollmentError):
    code = 0x37
    slug = "non-conformant"


class Expired(EnrollmentError):
    code = 0x38
    slug = "expired"


# -- authority ----------------------------------------------------------------

class AuthorityError(WpkiError):
    code = 0x40
    slug = "authority"


class UnknownSerial(AuthorityError):
    code = 0x41
    slug = "unknown-serial"


class AlreadyRevoked(AuthorityError):
    code = 0x42
    slug = "already-revoked"


class CorruptState(AuthorityError):
    code = 0x43
    slug = "corrupt-state"


class StorageFailure(AuthorityError):
    code = 0x44
    slug = "storage-failure"


class BindFailure(AuthorityError):
    code = 0x45
    slug = "bind-failure"


# -- repository ---------------------------------------------------------------

class RepositoryError(WpkiError):
    code = 0x50
    slug = "repository"


class NotFound(RepositoryError):
    code = 0x51
    slug = "not-found"


class BadUrl(RepositoryError):
    code = 0x52
    slug = "bad-url"


class DuplicateSerial(RepositoryError):
    code = 0x53
    slug = "duplicate-serial"


class BadSignature(RepositoryError):
    code = 0x54
    slug = "bad-signature"


class NoCrlYet(RepositoryError):
    code = 0x55
    slug = "no-crl-yet"


class RepositoryUnavailable(RepositoryError):
    code = 0x56
    slug = "repository-unavailable"


# -- ocsp ---------------------------------------------------------------------

class OcspError(WpkiError):
    code = 0x60
    slug = "ocsp"


class CrlUnavailable(OcspError):
    code = 0x61
    slug = "crl-unavailable"


class RepositoryUnreachable(OcspError):
    code = 0x62
    slug = "repository-unreachable"


# -- client -------------------------------------------------------------------

class ClientError(WpkiError):
    code = 0x70
    slug = "client"


class TransportError(ClientError):
    code = 0x71
    slug = "transport"


class PeerUnreachable(TransportError):
    code = 0x72
    slug = "peer-unreachable"


class OcspUnreachable(TransportError):
    code = 0x73
    slug = "ocsp-unreachable"


class ValidationFailed(ClientError):
    code = 0x74
    slug = "validation-failed"

    def __init__(self, detail: str = "", status=None):
        super().__init__(detail)
        self.status = status


class PeerRejected(ClientError):
    code = 0x75
    slug = "peer-rejected"


class ConfigError(WpkiError):
    code = 0x7D
    slug = "config"


class RemoteError(WpkiError):
    """An ErrorReply whose code has no local class."""


def _all_subclasses(cls):
    for sub in cls.__subclasses__():
        yield sub
        yield from _all_subclasses(sub)


_BY_CODE: dict[int, type[WpkiError]] = {}
for _cls in _all_subclasses(WpkiError):
    if _cls is RemoteError:
        continue
    # first (most general) registration wins for shared codes such as 0x01
    _BY_CODE.setdefault(_cls.code, _cls)
_BY_CODE[Malformed.code] = Malformed


def error_for_code(code: int, detail: str = "") -> WpkiError:
    cls = _BY_CODE.get(code)
    if cls is None:
        err = RemoteError(detail)
        err.code = code
        return err
    if cls is NonConformantTemplate:
        return cls(None, detail)
    return cls(detail)
