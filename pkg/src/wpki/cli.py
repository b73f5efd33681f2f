"""Command line: run each service, drive the client flows, and the demo.

Settings come from built-in defaults, then a ``key=value`` config file
(``--config`` or ``$WPKI_CONFIG``), then flags; later sources win.

Exit status: 0 success, 1 scenario failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import codec, crypto, net, ocsp, profiles
from .authority import CAConfig, Reason, RevocationList, RevokeCommand, init_ca
from .client import Client
from .errors import BindFailure, ConfigError, WpkiError
from .ocsp import Responder
from .peer import ServerPeer
from .repository import RemoteRepository, Repository
from .scenario import SuiteOptions, run_demo

log = logging.getLogger("wpki")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


@dataclass
class SuiteConfig:
    state_dir: Path = Path("wpki-state")
    host: str = "127.0.0.1"
    ca_port: int = 7001
    repo_port: int = 7002
    ocsp_port: int = 7003
    peer_port: int = 7004
    curve_id: int = crypto.CURVE_160
    cert_lifetime_s: int = 30 * 86400
    short_lived_lifetime_s: int = profiles.DEFAULT_SHORT_LIVED_LIFETIME
    short_lived_max_s: int = profiles.SHORT_LIVED_MAX
    crl_validity_s: int = 300
    crl_refresh_s: int = 0
    freshness_s: int = ocsp.DEFAULT_FRESHNESS
    ca_name: str = "WPKI Root CA"
    device_id: str = "device-0001"
    subject: str = ""
    peer_kind: str = "short"

    def validate(self) -> "SuiteConfig":
        ports = {"ca_port": self.ca_port, "repo_port": self.repo_port,
                 "ocsp_port": self.ocsp_port, "peer_port": self.peer_port}
        for name, port in ports.items():
            if not 0 <= port < 65536:
                raise ConfigError(f"{name}={port} is not a TCP port")
        seen: dict[int, str] = {}
        for name, port in ports.items():
            # 0 asks the kernel for a free port, so it may repeat
            if port and port in seen:
                raise ConfigError(f"{seen[port]} and {name} are both {port}")
            seen[port] = name
        for name in ("cert_lifetime_s", "short_lived_lifetime_s", "short_lived_max_s",
                     "crl_validity_s", "freshness_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.crl_refresh_s < 0:
            raise ConfigError("crl_refresh_s must not be negative")
        if self.short_lived_max_s > profiles.SHORT_LIVED_MAX:
            raise ConfigError(f"short_lived_max_s cannot exceed {profiles.SHORT_LIVED_MAX}")
        if self.short_lived_lifetime_s > self.short_lived_max_s:
            raise ConfigError("short_lived_lifetime_s exceeds short_lived_max_s")
        if self.curve_id not in (crypto.CURVE_160, crypto.CURVE_P256):
            raise ConfigError(f"unsupported curve id {self.curve_id}")
        if self.peer_kind not in ("short", "wireless"):
            raise ConfigError("peer_kind must be 'short' or 'wireless'")
        return self

    def address(self, service: str) -> net.Address:
        return self.host, getattr(self, f"{service}_port")

    def ca_config(self) -> CAConfig:
        return CAConfig(
            state_dir=self.state_dir,
            name=self.ca_name,
            curve_id=self.curve_id,
            cert_lifetime_s=self.cert_lifetime_s,
            crl_validity_s=self.crl_validity_s,
            repo_address=self.address("repo"),
            ocsp_address=self.address("ocsp"),
        )

    def suite_options(self) -> SuiteOptions:
        names = {f.name for f in dataclasses.fields(SuiteOptions)}
        return SuiteOptions(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


_CURVE_ALIASES = {"secp160r1": crypto.CURVE_160, "p256": crypto.CURVE_P256,
                  "p-256": crypto.CURVE_P256}


def parse_curve(text: str) -> int:
    text = text.strip().lower()
    if text in _CURVE_ALIASES:
        return _CURVE_ALIASES[text]
    try:
        return int(text, 0)
    except ValueError:
        raise ConfigError(f"unknown curve {text!r}") from None


_ALIASES = {"curve": "curve_id"}


def setting_name(key: str) -> str:
    """``ca.port`` -> ``ca_port``; ``ca.crl_validity_s`` -> ``crl_validity_s``."""
    fields = {f.name for f in dataclasses.fields(SuiteConfig)}
    key = key.strip().replace("-", "_")
    key = _ALIASES.get(key, key)
    service, dot, rest = key.partition(".")
    if dot:
        for candidate in (f"{service}_{rest}", rest):
            if candidate in fields:
                return candidate
    if key in fields:
        return key
    raise ConfigError(f"unknown setting {key!r}")


def _convert(name: str, raw: str):
    default = getattr(SuiteConfig, name)
    if name == "curve_id":
        return parse_curve(raw)
    if isinstance(default, Path):
        return Path(raw)
    if isinstance(default, int):
        try:
            return int(raw, 0)
        except ValueError:
            raise ConfigError(f"{name}: {raw!r} is not an integer") from None
    return raw


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        name = setting_name(key)
        values[name] = _convert(name, value.strip())
    return values


_PORT_FOR = {"ca-serve": "ca_port", "repo-serve": "repo_port", "ocsp-serve": "ocsp_port",
             "peer-serve": "peer_port", "client-enroll": "ca_port", "revoke": "ca_port",
             "crl-publish": "ca_port", "client-transact": "peer_port"}


def load_config(args: argparse.Namespace, environ=os.environ) -> SuiteConfig:
    values: dict = {}
    path = args.config or environ.get("WPKI_CONFIG")
    if path:
        values.update(read_config_file(path))
    if args.state_dir is not None:
        values["state_dir"] = Path(args.state_dir)
    if args.curve is not None:
        values["curve_id"] = parse_curve(args.curve)
    if args.port is not None:
        key = _PORT_FOR.get(args.command)
        if key is None:
            raise ConfigError(f"--port does not apply to {args.command}")
        values[key] = args.port
    return SuiteConfig(**values).validate()


# -- commands -----------------------------------------------------------------

def _serve(server: net.FramedServer, label: str) -> int:
    host, port = server.address
    print(f"{label} listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _existing_ca(cfg: SuiteConfig):
    if not (cfg.state_dir / "ca" / "key").exists():
        raise ConfigError(f"no CA in {cfg.state_dir}; run ca-init first")
    return init_ca(cfg.ca_config())


def _ca_public_key(cfg: SuiteConfig) -> bytes:
    try:
        cert = codec.decode_entity((cfg.state_dir / "ca" / "cert").read_bytes(),
                                   profiles.WirelessCertificate)
    except FileNotFoundError:
        raise ConfigError(f"no CA certificate in {cfg.state_dir}; run ca-init first") from None
    return cert.public_key_info.point


def cmd_ca_init(cfg: SuiteConfig, args) -> int:
    ca = init_ca(cfg.ca_config())
    _, ocsp_cert = ocsp.provision_responder(ca, cfg.state_dir)
    crl = ca.generate_crl()
    print(f"CA {ca.config.name!r} ready in {cfg.state_dir}")
    print(f"CA certificate: {ca.repository.url_for(ca.certificate.serial)}")
    print(f"OCSP responder certificate: serial {ocsp_cert.serial}")
    print(f"CRL published, next update at {crl.next_update}")
    return EXIT_OK


def cmd_ca_serve(cfg: SuiteConfig, args) -> int:
    ca = _existing_ca(cfg)
    stop = threading.Event()

    def keep_crl_fresh():
        # republish well before next_update so the responder never runs dry
        while not stop.wait(max(1, cfg.crl_validity_s // 2)):
            try:
                ca.generate_crl()
            except WpkiError as exc:
                log.warning("CRL republish failed: %s", exc)

    ca.generate_crl()
    threading.Thread(target=keep_crl_fresh, daemon=True).start()
    try:
        return _serve(ca.serve(cfg.address("ca")), "CA")
    finally:
        stop.set()


def cmd_repo_serve(cfg: SuiteConfig, args) -> int:
    repo = Repository(cfg.state_dir, _ca_public_key(cfg), *cfg.address("repo"))
    return _serve(repo.serve(cfg.address("repo")), "repository")


def cmd_ocsp_serve(cfg: SuiteConfig, args) -> int:
    keypair, cert = ocsp.load_identity(cfg.state_dir)
    responder = Responder(keypair, cert, _ca_public_key(cfg),
                          RemoteRepository(cfg.address("repo")),
                          crl_refresh_s=cfg.crl_refresh_s,
                          short_lived_max_s=cfg.short_lived_max_s)
    return _serve(responder.serve(cfg.address("ocsp")), "OCSP responder")


def cmd_peer_serve(cfg: SuiteConfig, args) -> int:
    ca = _existing_ca(cfg)
    key = crypto.generate_keypair(cfg.curve_id)
    subject = cfg.subject or "server.example"
    if cfg.peer_kind == "short":
        cert = ca.issue_short_lived(subject, key.public_info, cfg.short_lived_lifetime_s,
                                    max_lifetime_s=cfg.short_lived_max_s)
        print(f"peer holds a short-lived certificate for {subject!r}")
    else:
        cert, url = ca.issue_service_certificate(subject, key.public_info,
                                                 profiles.EKU_SERVER_AUTH)
        print(f"peer holds certificate serial {cert.serial} ({url})")
    ocsp_key, _ = ocsp.load_identity(cfg.state_dir)
    peer = ServerPeer(cert, cfg.address("ocsp"), ocsp_key.public_key,
                      freshness_s=cfg.freshness_s)
    return _serve(peer.serve(cfg.address("peer")), "peer")


def _client(cfg: SuiteConfig) -> Client:
    ocsp_key = None
    if (cfg.state_dir / "ocsp" / "cert").exists():
        _, ocsp_cert = ocsp.load_identity(cfg.state_dir)
        ocsp_key = ocsp_cert.public_key_info.point
    return Client(cfg.state_dir, ocsp_key, freshness_s=cfg.freshness_s)


def cmd_client_enroll(cfg: SuiteConfig, args) -> int:
    client = _client(cfg)
    state, report = client.run_enrollment(cfg.address("ca"), cfg.address("repo"), cfg.curve_id,
                                          device_id=cfg.device_id,
                                          subject=cfg.subject or cfg.device_id)
    print(f"enrolled as {state.credentials.username}; certificate at {state.cert_url}")
    print(report.to_text())
    report.write(client.state_path.with_name("enroll-report.json"))
    return EXIT_OK


def cmd_client_transact(cfg: SuiteConfig, args) -> int:
    client = _client(cfg)
    outcome = client.run_transaction(cfg.address("peer"), cfg.address("ocsp"))
    print(f"peer {outcome.peer_subject!r}: status={outcome.peer_status.name.lower()} "
          f"proceeded={outcome.proceeded} peer_accepted={outcome.peer_accepted}")
    print(outcome.report.to_text())
    outcome.report.write(client.state_path.with_name("transaction-report.json"))
    return EXIT_OK if outcome.proceeded and outcome.peer_accepted else EXIT_FAILURE


def cmd_revoke(cfg: SuiteConfig, args) -> int:
    with net.Connection(cfg.address("ca"), peer="ca") as conn:
        conn.call(RevokeCommand(args.serial, int(args.reason)), RevokeCommand)
    print(f"revoked serial {args.serial} ({Reason(args.reason).name.lower()}); "
          "run crl-publish to make it visible")
    return EXIT_OK


def cmd_crl_publish(cfg: SuiteConfig, args) -> int:
    with net.Connection(cfg.address("ca"), peer="ca") as conn:
        crl = conn.call(RevokeCommand(), RevocationList)
    print(f"CRL published: {len(crl.entries)} revoked, next update at {crl.next_update}")
    return EXIT_OK


def cmd_demo(cfg: SuiteConfig, args) -> int:
    # fresh state and kernel-chosen ports, so a demo never collides with running services
    options = dataclasses.replace(cfg.suite_options(), ca_port=0, repo_port=0, ocsp_port=0)
    with tempfile.TemporaryDirectory(prefix="wpki-demo-") as tmp:
        result = run_demo(tmp, options)
    for name, report in result.reports():
        print(f"--- traffic report: {name}")
        print(report.to_text())
    if result.failures:
        for failure in result.failures:
            print(f"FAILED: {failure}")
        return EXIT_FAILURE
    print("demo passed: zero CRL bytes at the client, certificate URL only on the client side")
    return EXIT_OK


COMMANDS = {
    "ca-init": (cmd_ca_init, "create the CA and the OCSP responder identity"),
    "ca-serve": (cmd_ca_serve, "run the CA service"),
    "repo-serve": (cmd_repo_serve, "run the certificate repository service"),
    "ocsp-serve": (cmd_ocsp_serve, "run the OCSP responder"),
    "peer-serve": (cmd_peer_serve, "run a scripted server peer"),
    "client-enroll": (cmd_client_enroll, "enroll a client with the CA"),
    "client-transact": (cmd_client_transact, "validate a peer and present the client URL"),
    "revoke": (cmd_revoke, "revoke a certificate by serial"),
    "crl-publish": (cmd_crl_publish, "sign and publish a fresh CRL"),
    "demo": (cmd_demo, "run the whole scenario on loopback"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file (default: $WPKI_CONFIG)")
    common.add_argument("--port", type=int, help="port of the service this command runs or calls")
    common.add_argument("--state-dir", help="state directory shared by the services")
    common.add_argument("--curve", help="1/secp160r1 or 2/p256")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="wpki", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "revoke":
            p.add_argument("serial", type=int)
            p.add_argument("--reason", type=int, default=int(Reason.UNSPECIFIED),
                           choices=[int(r) for r in Reason])
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"wpki: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = COMMANDS[args.command][0]
    try:
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"wpki: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BindFailure as exc:
        print(f"wpki: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WpkiError as exc:
        print(f"wpki: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None:
            print(report.to_text(), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
