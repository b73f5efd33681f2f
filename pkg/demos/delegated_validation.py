"""A handset talks to two servers and lets the OCSP responder judge them.

Runs the same scenario as ``wpki demo``, then prints each traffic report so the
absence of CRL bytes on the handset is visible line by line.
"""

import sys
import tempfile

from wpki.scenario import run_demo


def main():
    with tempfile.TemporaryDirectory() as tmp:
        result = run_demo(tmp)
    for name, report in result.reports():
        print(f"\n[{name}]")
        print(report.to_text())
    print("\nall checks passed" if result.ok else "\n".join(result.failures))
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
