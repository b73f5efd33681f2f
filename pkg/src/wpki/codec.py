"""Canonical TLV encoding for protocol entities, and stream framing.

Every entity is a flat sequence of ``tag(1) | length(2, big-endian) | value``
records, emitted in strictly ascending tag order with absent optional fields
omitted. Exactly one byte string decodes to any given entity; the decoder
rejects out-of-order or duplicate tags, unknown tags and trailing garbage.

Frames on the wire are ``length(4, big-endian) | kind(1) | payload`` where
the length covers the kind byte plus the payload.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Any, BinaryIO, ClassVar, Iterable, Union

from .errors import (
    FieldTooLarge,
    InvariantViolation,
    KindMismatch,
    Malformed,
    NonCanonical,
    PayloadTooLarge,
    Truncated,
    UnknownKind,
    UnknownTag,
)

MAX_VALUE = 0xFFFF
MAX_TEXT = 255
DEFAULT_MAX_PAYLOAD = 1 << 20

# Registered tag table. 0x35, 0x43, 0x54 and 0x60 extend the base table for
# values no base tag can carry (see README, "Wire format").
TAGS: dict[int, str] = {
    0x01: "version",
    0x02: "serial",
    0x03: "signature-algorithm-id",
    0x04: "issuer",
    0x05: "valid-not-before",
    0x06: "valid-not-after",
    0x07: "subject",
    0x08: "public-key-info",
    0x10: "authority-key-id",
    0x11: "subject-key-id",
    0x12: "key-usage",
    0x13: "certificate-policy",
    0x14: "subject-alt-names",
    0x15: "issuer-alt-names",
    0x16: "extended-key-usage",
    0x17: "crl-distribution-points",
    0x18: "domain-information",
    0x19: "authority-info-access",
    0x20: "signature-value",
    0x21: "public-key-type",
    0x22: "parameter-specifier",
    0x30: "reference-number",
    0x31: "pop-signature",
    0x32: "request-mac",
    0x33: "device-id",
    0x34: "random-code",
    0x35: "password",
    0x40: "revoked-entry",
    0x41: "this-update",
    0x42: "next-update",
    0x43: "revocation-reason",
    0x50: "cert-url",
    0x51: "status-code",
    0x52: "produced-at",
    0x53: "nonce",
    0x54: "failure-detail",
    0x60: "private-key",
}

KINDS: dict[int, str] = {
    0x01: "RegistrationRequest",
    0x02: "Credentials",
    0x03: "CertificateRequest",
    0x04: "CertificateResponse",
    0x05: "WirelessCertificate",
    0x06: "ShortLivedCertificate",
    0x07: "RevocationList",
    0x08: "StatusRequest",
    0x09: "StatusResponse",
    0x0A: "ErrorReply",
    0x0B: "RevokeCommand",
    0x0C: "FetchCommand",
}

_HEADER = struct.Struct(">BH")
_FRAME_HEADER = struct.Struct(">I")


# -- value codecs -------------------------------------------------------------

class ValueCodec:
    """Converts one field value to and from its TLV value bytes."""

    def check(self, value: Any, name: str) -> None:
        raise NotImplementedError

    def encode(self, value: Any) -> bytes:
        raise NotImplementedError

    def decode(self, raw: bytes) -> Any:
        raise NotImplementedError


class UInt(ValueCodec):
    def __init__(self, width: int):
        self.width = width
        self.limit = 1 << (8 * width)

    def check(self, value, name):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < self.limit:
            raise InvariantViolation(f"{name}: expected unsigned {8 * self.width}-bit integer")

    def encode(self, value):
        return value.to_bytes(self.width, "big")

    def decode(self, raw):
        if len(raw) != self.width:
            raise Malformed(f"expected {self.width}-byte integer, got {len(raw)}")
        return int.from_bytes(raw, "big")


class Text(ValueCodec):
    def __init__(self, max_bytes: int = MAX_TEXT, min_bytes: int = 0):
        self.max_bytes = max_bytes
        self.min_bytes = min_bytes

    def check(self, value, name):
        if not isinstance(value, str):
            raise InvariantViolation(f"{name}: expected text")
        n = len(value.encode("utf-8"))
        if n > self.max_bytes:
            raise InvariantViolation(f"{name}: {n} bytes exceeds {self.max_bytes}")
        if n < self.min_bytes:
            raise InvariantViolation(f"{name}: empty")

    def encode(self, value):
        return value.encode("utf-8")

    def decode(self, raw):
        if len(raw) > self.max_bytes or len(raw) < self.min_bytes:
            raise Malformed(f"text length {len(raw)} out of range")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise Malformed(f"invalid UTF-8: {exc}") from None


class TextList(ValueCodec):
    """Non-empty tuple of texts, each prefixed by a one-byte length."""

    def check(self, value, name):
        if not isinstance(value, tuple) or not value:
            raise InvariantViolation(f"{name}: expected non-empty tuple of text")
        for item in value:
            Text(MAX_TEXT).check(item, name)

    def encode(self, value):
        out = bytearray()
        for item in value:
            b = item.encode("utf-8")
            out.append(len(b))
            out += b
        return bytes(out)

    def decode(self, raw):
        items = []
        pos = 0
        while pos < len(raw):
            n = raw[pos]
            pos += 1
            if pos + n > len(raw):
                raise Malformed("text list item overruns value")
            items.append(Text().decode(raw[pos:pos + n]))
            pos += n
        if not items:
            raise Malformed("empty text list")
        return tuple(items)


class Blob(ValueCodec):
    def __init__(self, size: int | None = None, max_bytes: int = MAX_VALUE):
        self.size = size
        self.max_bytes = max_bytes

    def check(self, value, name):
        if not isinstance(value, bytes):
            raise InvariantViolation(f"{name}: expected bytes")
        if self.size is not None and len(value) != self.size:
            raise InvariantViolation(f"{name}: expected {self.size} bytes, got {len(value)}")
        if len(value) > self.max_bytes:
            raise FieldTooLarge(f"{name}: {len(value)} bytes")

    def encode(self, value):
        return value

    def decode(self, raw):
        if self.size is not None and len(raw) != self.size:
            raise Malformed(f"expected {self.size} bytes, got {len(raw)}")
        if len(raw) > self.max_bytes:
            raise Malformed(f"value of {len(raw)} bytes exceeds {self.max_bytes}")
        return bytes(raw)


U8 = UInt(1)
U64 = UInt(8)
TIME = U64


@dataclass(frozen=True)
class Field:
    tag: int
    name: str
    codec: ValueCodec
    optional: bool = False


# -- entities -----------------------------------------------------------------

class Entity:
    """Mixin for frozen dataclasses that travel as TLV records.

    Subclasses set ``KIND`` (a key of :data:`KINDS`, or ``None`` for
    records that never appear in a frame) and ``FIELDS``. Invariants are
    enforced at construction, so an instance that exists is encodable.
    """

    KIND: ClassVar[int | None] = None
    FIELDS: ClassVar[tuple[Field, ...]] = ()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in self.FIELDS:
            value = getattr(self, f.name)
            if value is None:
                if not f.optional:
                    raise InvariantViolation(f"{type(self).__name__}.{f.name} is mandatory")
                continue
            f.codec.check(value, f.name)
        self.check_invariants()

    def check_invariants(self) -> None:
        """Cross-field invariants; override where a type has any."""

    def tlv_fields(self) -> list[tuple[int, bytes]]:
        return [
            (f.tag, f.codec.encode(getattr(self, f.name)))
            for f in self.FIELDS
            if getattr(self, f.name) is not None
        ]

    @classmethod
    def allowed_tags(cls) -> frozenset[int]:
        # FIELDS is fixed per class, so the set is built once
        tags = cls.__dict__.get("_allowed_tags")
        if tags is None:
            tags = frozenset(f.tag for f in cls.FIELDS)
            cls._allowed_tags = tags
        return tags

    @classmethod
    def from_tlv(cls, values: dict[int, bytes]):
        kwargs = {}
        for f in cls.FIELDS:
            raw = values.get(f.tag)
            if raw is None:
                if not f.optional:
                    raise Malformed(f"{cls.__name__}: missing {TAGS[f.tag]}")
                kwargs[f.name] = None
            else:
                kwargs[f.name] = f.codec.decode(raw)
        return cls(**kwargs)


_REGISTRY: dict[int, type[Entity]] = {}


def register(cls):
    """Class decorator binding an entity class to its frame kind."""
    if cls.KIND not in KINDS:
        raise ValueError(f"unregistered entity kind {cls.KIND!r}")
    for tag in cls.allowed_tags():
        if tag not in TAGS:
            raise ValueError(f"{cls.__name__} uses unregistered tag {tag:#04x}")
    _REGISTRY[cls.KIND] = cls
    return cls


def entity_class(kind: int) -> type[Entity]:
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise UnknownKind(f"kind {kind:#04x}") from None


def kind_of(entity: Entity) -> int:
    return entity.KIND


def encode_tlv(pairs: Iterable[tuple[int, bytes]]) -> bytes:
    """Emit (tag, value) pairs in canonical order."""
    out = bytearray()
    last = -1
    for tag, value in sorted(pairs, key=lambda p: p[0]):
        if tag == last:
            raise InvariantViolation(f"tag {tag:#04x} appears twice")
        if tag not in TAGS:
            raise InvariantViolation(f"tag {tag:#04x} is not registered")
        if len(value) > MAX_VALUE:
            raise FieldTooLarge(f"{TAGS[tag]}: {len(value)} bytes")
        out += _HEADER.pack(tag, len(value))
        out += value
        last = tag
    return bytes(out)


def decode_tlv(data: bytes) -> dict[int, bytes]:
    """Parse a canonical TLV sequence into a tag -> value mapping."""
    data = bytes(data)
    values: dict[int, bytes] = {}
    pos = 0
    last = -1
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise Malformed(f"truncated field header at offset {pos}")
        tag, length = _HEADER.unpack_from(data, pos)
        pos += _HEADER.size
        if tag not in TAGS:
            raise UnknownTag(f"tag {tag:#04x} at offset {pos - 3}")
        if tag <= last:
            raise NonCanonical(f"tag {tag:#04x} out of order or duplicated")
        if pos + length > len(data):
            raise Malformed(f"{TAGS[tag]}: declared length {length} overruns input")
        values[tag] = data[pos:pos + length]
        pos += length
        last = tag
    return values


def encode_record(entity: Entity) -> bytes:
    """Canonical TLV bytes of any entity, framed kind or local record."""
    entity.validate()
    return encode_tlv(entity.tlv_fields())


def decode_record(data: bytes, cls: type[Entity]):
    values = decode_tlv(data)
    extra = set(values) - cls.allowed_tags()
    if extra:
        raise UnknownTag(
            f"{cls.__name__} does not carry "
            + ", ".join(f"{t:#04x}" for t in sorted(extra))
        )
    return cls.from_tlv(values)


def encode_entity(entity: Entity) -> bytes:
    if type(entity).KIND not in _REGISTRY or _REGISTRY[entity.KIND] is not type(entity):
        raise InvariantViolation(f"{type(entity).__name__} is not a registered entity")
    return encode_record(entity)


def decode_entity(data: bytes, expected: Union[int, type[Entity]], *, kind: int | None = None):
    """Decode ``data`` as an entity of the ``expected`` kind.

    ``kind`` is the kind byte the data arrived under, if any; a mismatch with
    ``expected`` raises :class:`KindMismatch` before any parsing.
    """
    expected_kind = expected if isinstance(expected, int) else expected.KIND
    cls = entity_class(expected_kind)
    if kind is not None and kind != expected_kind:
        raise KindMismatch(
            f"expected {KINDS[expected_kind]}, got {KINDS.get(kind, hex(kind))}"
        )
    return decode_record(data, cls)


# -- framing ------------------------------------------------------------------

def frame(kind: int, payload: bytes, max_payload: int | None = None) -> bytes:
    if kind not in KINDS:
        raise UnknownKind(f"kind {kind:#04x}")
    body_len = len(payload) + 1
    if body_len >= 1 << 32 or (max_payload is not None and len(payload) > max_payload):
        raise PayloadTooLarge(f"payload of {len(payload)} bytes")
    return _FRAME_HEADER.pack(body_len) + bytes([kind]) + bytes(payload)


def _read_exactly(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def deframe(stream: Union[bytes, bytearray, memoryview, BinaryIO],
            max_payload: int = DEFAULT_MAX_PAYLOAD) -> tuple[int, bytes]:
    """Read exactly one frame, leaving anything after it unread.

    Accepts a readable binary stream or a bytes-like object (in which case
    trailing bytes are simply ignored).
    """
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = io.BytesIO(bytes(stream))
    header = _read_exactly(stream, _FRAME_HEADER.size)
    if len(header) < _FRAME_HEADER.size:
        raise Truncated(f"frame header: got {len(header)} of 4 bytes")
    (body_len,) = _FRAME_HEADER.unpack(header)
    if body_len == 0:
        raise Malformed("frame without kind byte")
    if body_len - 1 > max_payload:
        raise PayloadTooLarge(f"declared payload {body_len - 1} exceeds {max_payload}")
    body = _read_exactly(stream, body_len)
    if len(body) < body_len:
        raise Truncated(f"frame body: got {len(body)} of {body_len} bytes")
    return body[0], body[1:]


def frame_entity(entity: Entity) -> bytes:
    return frame(entity.KIND, encode_entity(entity))


def encoded_size(entity: Entity) -> int:
    return len(encode_record(entity))

