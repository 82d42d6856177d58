"""Operator command line: enrollment, service classification, unlock, log
inspection, the matcher evaluation harness, and the HTTP server.

Each subcommand is a thin wrapper over exactly one module operation.  Exit
codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable

from .authenticators import evaluate_error_rates
from .config import AppConfig, load_config
from .domain import (
    DeviceType,
    LogEvent,
    Sensitivity,
    ServiceDefinition,
    format_timestamp,
)
from .enroll import DeviceSpec, EnrollmentSpec, EnrollmentSummary, enroll_user
from .errors import DomainError
from .kb import KnowledgeBase


def _device_arg(text: str) -> DeviceSpec:
    """Parse 'device_id:device_type', e.g. 'phone-1:smartphone'."""
    device_id, sep, type_text = text.partition(":")
    if not sep or not device_id:
        raise argparse.ArgumentTypeError(
            f"expected device_id:device_type, got {text!r}"
        )
    try:
        device_type = DeviceType(type_text)
    except ValueError:
        choices = ", ".join(t.value for t in DeviceType)
        raise argparse.ArgumentTypeError(
            f"unknown device type {type_text!r} (choose from {choices})"
        ) from None
    return DeviceSpec(device_id=device_id, device_type=device_type)


def _sensitivity_arg(text: str) -> Sensitivity:
    try:
        return Sensitivity(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"sensitivity must be A1 or A2, got {text!r}"
        ) from None


def _event_arg(text: str) -> LogEvent:
    try:
        return LogEvent(text)
    except ValueError:
        choices = ", ".join(e.value for e in LogEvent)
        raise argparse.ArgumentTypeError(
            f"unknown event {text!r} (choose from {choices})"
        ) from None


def _open_store(config: AppConfig, parser: argparse.ArgumentParser) -> KnowledgeBase:
    if config.store_root is None:
        parser.error("this command needs a persistent store; set store_root in config")
    return KnowledgeBase.load(config.store_root)


def _print_summary(summary: EnrollmentSummary, device_count: int) -> None:
    print(f"user={summary.user_id} enrolled devices={device_count}")
    print(f"face_ref={summary.face_template_ref} store=cloud")
    for device_id, ref in summary.fingerprint_refs.items():
        print(f"fp_ref={ref} store=device:{device_id}")


def _specs_from_file(path: Path) -> list[EnrollmentSpec]:
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ValueError("enrollment file must be a JSON array of specs")
    specs = []
    for item in raw:
        specs.append(
            EnrollmentSpec(
                user_id=item["user_id"],
                full_name=item["full_name"],
                pin=item["pin"],
                template_seed=int(item["template_seed"]),
                devices=tuple(
                    DeviceSpec(d["device_id"], DeviceType(d["device_type"]))
                    for d in item.get("devices", [])
                ),
            )
        )
    return specs


# --- subcommand handlers -----------------------------------------------------


def _cmd_enroll(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = load_config(args.config)
    kb = _open_store(config, parser)
    if args.from_file is not None:
        specs = _specs_from_file(args.from_file)
    else:
        if not (args.user_id and args.full_name and args.pin and args.template_seed is not None):
            parser.error("enroll needs --user-id, --full-name, --pin, --template-seed (or --from-file)")
        specs = [
            EnrollmentSpec(
                user_id=args.user_id,
                full_name=args.full_name,
                pin=args.pin,
                template_seed=args.template_seed,
                devices=tuple(args.device or ()),
            )
        ]
    for spec in specs:
        summary = enroll_user(kb, spec)
        _print_summary(summary, len(spec.devices))
    return 0


def _cmd_classify(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = load_config(args.config)
    kb = _open_store(config, parser)
    service = kb.upsert_service(
        ServiceDefinition(
            service_id=args.service_id, name=args.name, sensitivity=args.sensitivity
        )
    )
    print(f"service={service.service_id} sensitivity={service.sensitivity.value}")
    return 0


def _cmd_unlock(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = load_config(args.config)
    kb = _open_store(config, parser)
    record = kb.unlock_user(args.user_id)
    print(f"user={record.user_id} status={record.status.value}")
    return 0


def _cmd_logs(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = load_config(args.config)
    kb = _open_store(config, parser)
    entries = kb.query_logs(
        user_id=args.user_id, session_id=args.session_id, event=args.event
    )
    for e in entries:
        lat = "-" if e.geolocation.latitude is None else repr(e.geolocation.latitude)
        lon = "-" if e.geolocation.longitude is None else repr(e.geolocation.longitude)
        print(
            "\t".join(
                (
                    e.entry_id,
                    format_timestamp(e.timestamp),
                    e.user_id,
                    e.session_id,
                    e.event.value,
                    e.device_type.value,
                    e.auth_method_used.value,
                    lat,
                    lon,
                    e.geolocation.source.value,
                    e.detail or "-",
                )
            )
        )
    return 0


def _cmd_eval_rates(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    rates = evaluate_error_rates(
        population_size=args.population,
        noise_rate=args.noise,
        threshold=args.threshold,
        trials=args.trials,
        seed=args.seed,
    )
    print(f"far={rates.far:.6f} frr={rates.frr:.6f} trials={rates.trials}")
    return 0


def _cmd_serve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    import uvicorn

    from .gateway import create_app

    config = load_config(args.config)
    app = create_app(config)
    uvicorn.run(
        app,
        host=args.host or config.bind_host,
        port=args.port or config.bind_port,
        log_level="warning",
    )
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bankgate",
        description="Two-level banking authentication gateway: operator tools.",
    )
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="config file path (default: $BANKGATE_CONFIG or ./bankgate.json)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_enroll = sub.add_parser("enroll", help="enroll a user with PIN and biometric templates")
    p_enroll.add_argument("--user-id")
    p_enroll.add_argument("--full-name")
    p_enroll.add_argument("--pin", help="4-8 digits; consumed, never stored raw")
    p_enroll.add_argument("--template-seed", type=int)
    p_enroll.add_argument(
        "--device",
        action="append",
        type=_device_arg,
        metavar="DEVICE_ID:DEVICE_TYPE",
        help="repeatable; fingerprint templates go only to smartphone/tablet devices",
    )
    p_enroll.add_argument("--from-file", type=Path, help="JSON array of enrollment specs")
    p_enroll.set_defaults(func=_cmd_enroll)

    p_classify = sub.add_parser("classify", help="set a service's bank-level sensitivity")
    p_classify.add_argument("service_id")
    p_classify.add_argument("name")
    p_classify.add_argument("sensitivity", type=_sensitivity_arg, help="A1 or A2")
    p_classify.set_defaults(func=_cmd_classify)

    p_unlock = sub.add_parser("unlock", help="reactivate a locked user")
    p_unlock.add_argument("user_id")
    p_unlock.set_defaults(func=_cmd_unlock)

    p_logs = sub.add_parser("logs", help="print audit log entries in timestamp order")
    p_logs.add_argument("--user-id")
    p_logs.add_argument("--session-id")
    p_logs.add_argument("--event", type=_event_arg)
    p_logs.set_defaults(func=_cmd_logs)

    p_eval = sub.add_parser("eval-rates", help="measure matcher FAR/FRR on a seeded population")
    p_eval.add_argument("--population", type=int, default=100)
    p_eval.add_argument("--noise", type=float, default=0.1)
    p_eval.add_argument("--threshold", type=float, default=0.25)
    p_eval.add_argument("--trials", type=int, default=10_000)
    p_eval.add_argument("--seed", type=int, default=7)
    p_eval.set_defaults(func=_cmd_eval_rates)

    p_serve = sub.add_parser("serve", help="run the HTTP gateway")
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler: Callable[[argparse.Namespace, argparse.ArgumentParser], int] = args.func
    try:
        return handler(args, parser)
    except DomainError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
