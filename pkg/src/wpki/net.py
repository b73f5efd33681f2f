"""Framed request/response transport shared by the CA, repository, OCSP
responder and the scripted server peer.

A connection carries any number of request frames, each answered by exactly
one reply frame. A failure while handling a request becomes an ErrorReply
frame; the connection stays usable afterwards.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec
from .codec import Field, Text, U8
from .errors import (
    BindFailure,
    CodecError,
    KindMismatch,
    PayloadTooLarge,
    TransportError,
    Truncated,
    UnknownKind,
    WpkiError,
    error_for_code,
)

log = logging.getLogger(__name__)

OK = 0x00
INTERNAL = 0x7E
DEFAULT_TIMEOUT = 10.0

Address = tuple[str, int]


@codec.register
@dataclass(frozen=True)
class ErrorReply(codec.Entity):
    """Failure (or bare acknowledgement, code 0) sent in place of a reply."""

    KIND = 0x0A
    FIELDS = (
        Field(0x51, "code", U8),
        Field(0x54, "detail", Text(), True),
    )

    code: int
    detail: Optional[str] = None

    @classmethod
    def from_exception(cls, exc: WpkiError) -> "ErrorReply":
        detail = (exc.detail or exc.slug).encode("utf-8")[:codec.MAX_TEXT]
        return cls(exc.code, detail.decode("utf-8", "ignore"))

    def to_exception(self) -> WpkiError:
        return error_for_code(self.code, self.detail or "")


Reply = tuple[int, bytes]
Dispatch = Callable[[int, bytes], "codec.Entity | Reply"]


def parse_address(text: str, default_port: int | None = None) -> Address:
    host, sep, port = text.rpartition(":")
    if not sep:
        if default_port is None:
            raise ValueError(f"address {text!r} lacks a port")
        return text, default_port
    return host or "127.0.0.1", int(port)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: FramedServer = self.server  # type: ignore[assignment]
        while True:
            try:
                if not self.rfile.peek(1):
                    return
                kind, payload = codec.deframe(self.rfile, server.max_payload)
            except (PayloadTooLarge, Truncated, CodecError) as exc:
                # framing is lost; report and drop the connection
                self._send(ErrorReply.from_exception(exc))
                return
            except OSError:
                return
            reply = server.handle_frame(kind, payload)
            if not self._send(reply):
                return

    def _send(self, reply) -> bool:
        if isinstance(reply, codec.Entity):
            data = codec.frame_entity(reply)
        else:
            data = codec.frame(*reply)
        try:
            self.wfile.write(data)
            self.wfile.flush()
        except OSError:
            return False
        return True


POLL_INTERVAL = 0.05


class FramedServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: Address, dispatch: Dispatch, name: str = "service",
                 max_payload: int = codec.DEFAULT_MAX_PAYLOAD):
        self.dispatch = dispatch
        self.name = name
        self.max_payload = max_payload
        self._thread: Optional[threading.Thread] = None
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"{name} cannot bind {address[0]}:{address[1]}: {exc}") from None

    @property
    def address(self) -> Address:
        host, port = self.server_address[:2]
        return host, port

    def handle_frame(self, kind: int, payload: bytes):
        try:
            if kind not in codec.KINDS:
                raise UnknownKind(f"kind {kind:#04x}")
            return self.dispatch(kind, payload)
        except WpkiError as exc:
            log.debug("%s: request kind %#04x failed: %s", self.name, kind, exc)
            return ErrorReply.from_exception(exc)
        except Exception:  # a bug must not take the connection down
            log.exception("%s: unhandled error", self.name)
            return ErrorReply(INTERNAL, "internal error")

    def start(self) -> "FramedServer":
        self._thread = threading.Thread(target=self.serve_forever, args=(POLL_INTERVAL,),
                                        name=self.name, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        # shutdown() waits for serve_forever, so only call it on a started server
        if self._thread is not None:
            self.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


@dataclass
class TrafficMeter:
    """Byte counters, measured on whole frames (header included)."""

    sent: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    received: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    received_crl_bytes: int = 0
    sent_kinds: dict[str, list[int]] = field(default_factory=lambda: defaultdict(list))
    received_kinds: dict[str, list[int]] = field(default_factory=lambda: defaultdict(list))

    def on_send(self, peer: str, kind: int, size: int) -> None:
        self.sent[peer] += size
        self.sent_kinds[peer].append(kind)

    def on_receive(self, peer: str, kind: int, size: int) -> None:
        self.received[peer] += size
        self.received_kinds[peer].append(kind)
        if kind == 0x07:
            self.received_crl_bytes += size


class Connection:
    """Client end of a framed connection, optionally metered."""

    def __init__(self, address: Address, *, peer: str | None = None,
                 meter: TrafficMeter | None = None, timeout: float = DEFAULT_TIMEOUT,
                 error: type[TransportError] = TransportError,
                 max_payload: int = codec.DEFAULT_MAX_PAYLOAD):
        self.address = address
        self.peer = peer or f"{address[0]}:{address[1]}"
        self.meter = meter
        self.max_payload = max_payload
        self._error = error
        try:
            self._sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise error(f"cannot reach {self.peer}: {exc}") from None
        self._rfile = self._sock.makefile("rb")

    def send(self, entity: codec.Entity) -> None:
        data = codec.frame_entity(entity)
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise self._error(f"send to {self.peer} failed: {exc}") from None
        if self.meter is not None:
            self.meter.on_send(self.peer, entity.KIND, len(data))

    def receive(self) -> tuple[int, bytes]:
        try:
            kind, payload = codec.deframe(self._rfile, self.max_payload)
        except Truncated as exc:
            raise self._error(f"{self.peer} closed the connection: {exc}") from None
        except OSError as exc:
            raise self._error(f"receive from {self.peer} failed: {exc}") from None
        if self.meter is not None:
            self.meter.on_receive(self.peer, kind, 5 + len(payload))
        return kind, payload

    def receive_entity(self, *expected: type[codec.Entity]):
        """Next reply, decoded as one of ``expected``.

        An ErrorReply is raised as its exception unless it is a bare
        acknowledgement (code 0) and ErrorReply is among ``expected``.
        """
        kind, payload = self.receive()
        if kind == ErrorReply.KIND:
            reply = codec.decode_entity(payload, ErrorReply)
            if reply.code != OK or ErrorReply not in expected:
                raise reply.to_exception()
            return reply
        for cls in expected:
            if kind == cls.KIND:
                return codec.decode_entity(payload, cls)
        raise KindMismatch(f"unexpected reply kind {kind:#04x} from {self.peer}")

    def call(self, entity: codec.Entity, *expected: type[codec.Entity]):
        self.send(entity)
        return self.receive_entity(*expected)

    def close(self) -> None:
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
