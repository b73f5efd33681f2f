"""wpki: a compact wireless PKI.

Canonical TLV codec, ECDSA keys, compact certificate profiles, a CA with
URL-based certificate delivery, and an OCSP responder to which constrained
clients delegate certificate validation.
"""

from . import codec, crypto, profiles, net, repository, authority, enrollment, ocsp, peer, client

__version__ = "0.1.0"
