"""How much an elliptic-curve key saves on the wire.

Builds the same certificate three times: with a curve-1 key, a curve-2 key and a
131-byte RSA-1024 placeholder, then prints the encoded sizes side by side.
"""

import os
import time

from wpki import codec, crypto, profiles
from wpki.crypto import PublicKeyInfo
from wpki.profiles import CAIdentity, CertificateTemplate


def main():
    now = int(time.time())
    ca_key = crypto.generate_keypair(crypto.CURVE_160)
    ca = CAIdentity(name="Demo CA", keypair=ca_key, crl_url="wpki://127.0.0.1:7002/crl/latest",
                    aia_url="wpki://127.0.0.1:7003/ocsp", alt_names=("Demo CA",))
    template = CertificateTemplate("mobile-0001", 30 * 86400)

    subjects = {
        "secp160r1 (curve 1)": crypto.generate_keypair(crypto.CURVE_160).public_info,
        "P-256 (curve 2)": crypto.generate_keypair(crypto.CURVE_P256).public_info,
        "RSA-1024 placeholder": PublicKeyInfo(crypto.RSA1024_PLACEHOLDER, os.urandom(131)),
    }
    rsa_size = None
    rows = []
    for label, key in subjects.items():
        cert = profiles.build_certificate(template, key, ca, 1, now)
        size = len(codec.encode_entity(cert))
        rows.append((label, len(key.point), size))
        if key.curve_id == crypto.RSA1024_PLACEHOLDER:
            rsa_size = size

    print(f"{'subject key':24} {'key bytes':>9} {'cert bytes':>10} {'saved':>6}")
    for label, key_len, size in rows:
        print(f"{label:24} {key_len:9} {size:10} {rsa_size - size:6}")


if __name__ == "__main__":
    main()
