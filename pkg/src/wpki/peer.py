"""Scripted server peer for the transaction flow.

The peer hands out its certificate on request (a FetchCommand with no
serial), then accepts a client's certificate URL carried in a StatusRequest
and validates it through the OCSP responder, mirroring what the client did
with the peer's certificate. No application payload follows.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Optional, Union

from . import codec, net, ocsp
from .errors import KindMismatch, PeerRejected, WpkiError
from .ocsp import StatusRequest
from .profiles import ShortLivedCertificate, WirelessCertificate
from .repository import FetchCommand

log = logging.getLogger(__name__)

DEFAULT_PORT = 7004


class ServerPeer:
    def __init__(self, certificate: Union[WirelessCertificate, ShortLivedCertificate],
                 ocsp_address: net.Address, ocsp_public_key: bytes, *,
                 freshness_s: int = ocsp.DEFAULT_FRESHNESS, clock=time.time,
                 timeout: float = net.DEFAULT_TIMEOUT):
        self.certificate = certificate
        self.ocsp_address = ocsp_address
        self.ocsp_public_key = ocsp_public_key
        self.freshness_s = freshness_s
        self.clock = clock
        self.timeout = timeout
        # (client cert URL, verdict reason) per presented URL, for inspection
        self.seen: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def check_client(self, url: str) -> ocsp.Verdict:
        resp, nonce = ocsp.query(self.ocsp_address, url, timeout=self.timeout)
        verdict = ocsp.client_validate(resp, nonce, self.ocsp_public_key,
                                       int(self.clock()), self.freshness_s)
        with self._lock:
            self.seen.append((url, verdict.reason))
        return verdict

    def dispatch(self, kind: int, payload: bytes):
        if kind == FetchCommand.KIND:
            cmd = codec.decode_entity(payload, FetchCommand)
            if cmd.serial is not None:
                raise KindMismatch("the peer only serves its own certificate")
            return self.certificate
        if kind == StatusRequest.KIND:
            req = codec.decode_entity(payload, StatusRequest)
            if not isinstance(req.target, str):
                raise PeerRejected("expected a certificate URL, not a certificate")
            try:
                verdict = self.check_client(req.target)
            except WpkiError as exc:
                raise PeerRejected(f"could not validate client: {exc}") from None
            if not verdict:
                raise PeerRejected(verdict.reason)
            return net.ErrorReply(net.OK, "accepted")
        raise KindMismatch(f"the peer does not handle {codec.KINDS[kind]}")

    def serve(self, address: net.Address = ("127.0.0.1", DEFAULT_PORT)) -> net.FramedServer:
        return net.FramedServer(address, self.dispatch, name="peer")
