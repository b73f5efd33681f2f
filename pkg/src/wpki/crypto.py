"""Keys, hashing, ECDSA signatures and the enrollment MAC.

Curve registry (frozen):

====  =====================  ==================  ==========
id    curve                  compressed point    scalar
====  =====================  ==================  ==========
1     secp160r1              21 bytes            21 bytes
2     NIST P-256             33 bytes            32 bytes
0xFF  RSA-1024 placeholder   131 bytes           (none)
====  =====================  ==================  ==========

Curve 1 is the ~80-bit-security class of key the constrained client uses.
The placeholder id exists only so that a certificate can be encoded with an
RSA-1024-sized key blob for size comparison; it can neither sign nor verify.

Signature-algorithm registry: 1 = ECDSA with SHA-256, signature bytes are
the fixed-width big-endian concatenation ``r || s``.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import ecdsa
from ecdsa.errors import MalformedPointError
from ecdsa.keys import BadSignatureError
from ecdsa.util import sigdecode_string, sigencode_string

from . import codec
from .errors import (
    BadKeyLength,
    EmptyCredential,
    InvalidKey,
    InvariantViolation,
    Malformed,
    MalformedKey,
    MalformedSignature,
    UnsupportedCurve,
)

CURVE_160 = 1
CURVE_P256 = 2
RSA1024_PLACEHOLDER = 0xFF

ECDSA_SHA256 = 1

# RSA-1024 public key: 128-byte modulus plus 3-byte exponent.
RSA1024_PLACEHOLDER_SIZE = 131

KDF_ITERATIONS = 10000
KDF_LENGTH = 32
MAC_LENGTH = 32
KEY_ID_LENGTH = 20

_CURVES = {
    CURVE_160: ecdsa.SECP160r1,
    CURVE_P256: ecdsa.NIST256p,
}

CURVE_NAMES = {
    CURVE_160: "secp160r1",
    CURVE_P256: "P-256",
    RSA1024_PLACEHOLDER: "rsa1024-placeholder",
}


def _curve(curve_id: int) -> ecdsa.curves.Curve:
    try:
        return _CURVES[curve_id]
    except KeyError:
        raise UnsupportedCurve(f"curve id {curve_id!r}") from None


def public_key_length(curve_id: int) -> int:
    if curve_id == RSA1024_PLACEHOLDER:
        return RSA1024_PLACEHOLDER_SIZE
    return (_curve(curve_id).curve.p().bit_length() + 7) // 8 + 1


def signature_length(curve_id: int) -> int:
    return 2 * _curve(curve_id).baselen


def curve_for_point(point: bytes) -> int:
    for curve_id in _CURVES:
        if len(point) == public_key_length(curve_id):
            return curve_id
    raise MalformedKey(f"no registered curve has {len(point)}-byte compressed points")


class PublicKeyInfo(NamedTuple):
    curve_id: int
    point: bytes


@dataclass(frozen=True)
class SignatureValue:
    algorithm_id: int
    value: bytes


@dataclass(frozen=True)
class KeyPair:
    curve_id: int
    public_key: bytes
    private_key: bytes = field(repr=False)

    @property
    def public_info(self) -> PublicKeyInfo:
        return PublicKeyInfo(self.curve_id, self.public_key)


def generate_keypair(curve_id: int = CURVE_160) -> KeyPair:
    curve = _curve(curve_id)
    sk = ecdsa.SigningKey.generate(curve=curve)
    return KeyPair(curve_id, sk.get_verifying_key().to_string("compressed"), sk.to_string())


def keypair_from_private(curve_id: int, private_key: bytes) -> KeyPair:
    """Rebuild a key pair from its scalar, re-deriving the public point."""
    curve = _curve(curve_id)
    try:
        sk = ecdsa.SigningKey.from_string(private_key, curve=curve)
    except (ValueError, MalformedPointError) as exc:
        raise InvalidKey(str(exc)) from None
    return KeyPair(curve_id, sk.get_verifying_key().to_string("compressed"), bytes(private_key))


def check_keypair(key: KeyPair) -> None:
    if keypair_from_private(key.curve_id, key.private_key).public_key != key.public_key:
        raise InvalidKey("public key does not match private scalar")


def hash(message: bytes) -> bytes:  # noqa: A001 - mirrors the operation name
    return hashlib.sha256(message).digest()


def key_id(public_key: bytes) -> bytes:
    """20-byte key identifier used for authority/subject key ids."""
    return hashlib.sha256(public_key).digest()[:KEY_ID_LENGTH]


def sign(message: bytes, key: KeyPair) -> SignatureValue:
    try:
        sk = ecdsa.SigningKey.from_string(key.private_key, curve=_curve(key.curve_id))
    except UnsupportedCurve:
        raise InvalidKey(f"curve {key.curve_id!r} cannot sign") from None
    except (ValueError, MalformedPointError) as exc:
        raise InvalidKey(str(exc)) from None
    raw = sk.sign(message, hashfunc=hashlib.sha256, sigencode=sigencode_string)
    return SignatureValue(ECDSA_SHA256, raw)


def _verifying_key(public_key: Union[bytes, PublicKeyInfo]):
    if isinstance(public_key, PublicKeyInfo):
        curve_id, point = public_key
    else:
        point = bytes(public_key)
        curve_id = curve_for_point(point)
    if curve_id not in _CURVES:
        raise MalformedKey(f"curve id {curve_id!r} has no verification key")
    if len(point) != public_key_length(curve_id):
        raise MalformedKey(f"{len(point)}-byte point for curve {curve_id}")
    try:
        return curve_id, ecdsa.VerifyingKey.from_string(point, curve=_curve(curve_id))
    except (MalformedPointError, ValueError) as exc:
        raise MalformedKey(str(exc)) from None


def verify(message: bytes, sig: SignatureValue, public_key: Union[bytes, PublicKeyInfo]) -> bool:
    """True iff ``sig`` is a valid signature over ``message``.

    Raises MalformedKey / MalformedSignature for inputs that cannot be
    interpreted at all, so that garbage is distinguishable from a clean
    mismatch.
    """
    curve_id, vk = _verifying_key(public_key)
    if sig.algorithm_id != ECDSA_SHA256:
        raise MalformedSignature(f"unregistered algorithm id {sig.algorithm_id}")
    if len(sig.value) != signature_length(curve_id):
        raise MalformedSignature(
            f"{len(sig.value)}-byte signature for curve {curve_id}"
        )
    try:
        return vk.verify(sig.value, message, hashfunc=hashlib.sha256, sigdecode=sigdecode_string)
    except BadSignatureError:
        return False


def verify_quiet(message: bytes, sig: SignatureValue, public_key) -> bool:
    """Like :func:`verify` but folds malformed inputs into False."""
    try:
        return verify(message, sig, public_key)
    except (MalformedKey, MalformedSignature):
        return False


def derive_mac_key(username: str, password: str, random_code: str) -> bytes:
    """PBKDF2-HMAC-SHA256 over ``username NUL password``, salted with the random code."""
    if not username or not password or not random_code:
        raise EmptyCredential("username, password and random code are all required")
    secret = username.encode("utf-8") + b"\x00" + password.encode("utf-8")
    return hashlib.pbkdf2_hmac(
        "sha256", secret, random_code.encode("utf-8"), KDF_ITERATIONS, KDF_LENGTH
    )


def mac(key: bytes, message: bytes) -> bytes:
    if len(key) != KDF_LENGTH:
        raise BadKeyLength(f"{len(key)}-byte MAC key")
    return hmac.new(key, message, hashlib.sha256).digest()


def mac_verify(key: bytes, message: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, message), bytes(tag))


# -- TLV value codecs for key material ---------------------------------------

class KeyInfoCodec(codec.ValueCodec):
    """``curve_id(1) || point``; the point length must match the curve."""

    def check(self, value, name):
        if not isinstance(value, PublicKeyInfo):
            raise InvariantViolation(f"{name}: expected PublicKeyInfo")
        try:
            expected = public_key_length(value.curve_id)
        except UnsupportedCurve:
            raise InvariantViolation(f"{name}: unregistered curve {value.curve_id!r}") from None
        if not isinstance(value.point, bytes) or len(value.point) != expected:
            raise InvariantViolation(f"{name}: point must be {expected} bytes")

    def encode(self, value):
        return bytes([value.curve_id]) + value.point

    def decode(self, raw):
        if not raw:
            raise Malformed("empty public key info")
        info = PublicKeyInfo(raw[0], bytes(raw[1:]))
        try:
            self.check(info, "public-key-info")
        except InvariantViolation as exc:
            raise Malformed(str(exc)) from None
        return info


class SignatureCodec(codec.ValueCodec):
    """``algorithm_id(1) || signature bytes``."""

    def check(self, value, name):
        if not isinstance(value, SignatureValue) or not isinstance(value.value, bytes):
            raise InvariantViolation(f"{name}: expected SignatureValue")
        codec.U8.check(value.algorithm_id, name)

    def encode(self, value):
        return bytes([value.algorithm_id]) + value.value

    def decode(self, raw):
        if not raw:
            raise Malformed("empty signature value")
        return SignatureValue(raw[0], bytes(raw[1:]))


KEY_INFO = KeyInfoCodec()
SIGNATURE = SignatureCodec()
MAC_TAG = codec.Blob(size=MAC_LENGTH)
