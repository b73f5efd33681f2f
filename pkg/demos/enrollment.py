"""Enroll a handset against a loopback CA and look at what it keeps.

Also replays the certificate request and tampers with the password, to show
the CA turning both away.
"""

import sys
import tempfile

from wpki import crypto, net
from wpki.enrollment import CertificateResponse, Credentials, RegistrationRequest, client_build_request
from wpki.errors import MacMismatch, UnknownReference
from wpki.scenario import LoopbackPKI


def main():
    with tempfile.TemporaryDirectory() as tmp, LoopbackPKI(tmp) as pki:
        client = pki.client()
        state, report = client.run_enrollment(pki.ca_address, pki.repo_address,
                                              device_id="IMEI-490154203237518",
                                              subject="mobile-0001")
        print(f"username {state.credentials.username}, certificate at {state.cert_url}")
        print(report.to_text())
        print(f"state file: {client.state_path} ({client.persisted_bytes()} bytes)")

        # by hand this time, to misbehave
        key = crypto.generate_keypair()
        with net.Connection(pki.ca_address) as conn:
            creds = conn.call(RegistrationRequest("IMEI-356938035643809"), Credentials)
            forged = Credentials(creds.username, "guessed-password", creds.random_code)
            try:
                conn.call(client_build_request(forged, key, "mobile-0002"), CertificateResponse)
            except MacMismatch as exc:
                print(f"wrong password: {type(exc).__name__}")
            request = client_build_request(creds, key, "mobile-0002")
            response = conn.call(request, CertificateResponse)
            print(f"second handset issued: {response.cert_url}")
            try:
                conn.call(request, CertificateResponse)
            except UnknownReference as exc:
                print(f"replayed request: {type(exc).__name__}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
