"""The certificate profile table, and what the two checkers make of real certificates.

A full wireless certificate, a bare one built from a stripped template, and a
short-lived server certificate go through generation and process checks.
"""

import time

from wpki import codec, crypto, profiles
from wpki.errors import NonConformantTemplate
from wpki.profiles import CAIdentity, CertificateTemplate


def show_table():
    print(f"{'field':30} gen  proc")
    for rule in profiles.PROFILE_RULES:
        print(f"{rule.field:30} {rule.generation:3}  {rule.process}")


def describe(label, cert):
    gen = profiles.check_generation(cert)
    proc = profiles.check_process(cert)
    print(f"\n{label}: {len(codec.encode_entity(cert))} bytes")
    for report in (gen, proc):
        if report:
            print(f"  {report.mode}: conformant")
        for v in report.violations:
            print(f"  {report.mode}: {v.field} {v.rule}")


def main():
    now = int(time.time())
    ca = CAIdentity(name="Demo CA", keypair=crypto.generate_keypair(),
                    crl_url="wpki://127.0.0.1:7002/crl/latest",
                    aia_url="wpki://127.0.0.1:7003/ocsp", alt_names=("Demo CA",))
    key = crypto.generate_keypair().public_info
    show_table()

    full = profiles.build_certificate(
        CertificateTemplate("mobile-0001", 86400,
                            {"extended_key_usage": profiles.EKU_CLIENT_AUTH,
                             "issuer_alt_names": ca.alt_names}),
        key, ca, 17, now)
    describe("wireless certificate with every process-mandatory field", full)

    plain = profiles.build_certificate(CertificateTemplate("mobile-0002", 86400), key, ca, 18, now)
    describe("generation-conformant certificate without the optional fields", plain)

    try:
        profiles.build_certificate(CertificateTemplate("x", 86400, {"key_usage": None}), key, ca, 19, now)
    except NonConformantTemplate as exc:
        print(f"\nbuilder refused a template without key_usage: {exc}")

    short = profiles.build_short_lived("shop.example", key, 3600, ca, now)
    print(f"\nshort-lived server certificate: {len(codec.encode_entity(short))} bytes, "
          f"signature valid: {profiles.verify_signature(short, ca.keypair.public_key)}")


if __name__ == "__main__":
    main()
