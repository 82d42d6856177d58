"""Runtime configuration for the gateway and the CLI.

Configuration lives in one JSON file.  Lookup order: explicit path argument,
then the BANKGATE_CONFIG environment variable, then ./bankgate.json.  A
missing file yields the documented defaults; unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .authenticators import (
    DEFAULT_CAPTURE_NOISE,
    DEFAULT_FP_THRESHOLD,
    DEFAULT_FR_THRESHOLD,
    PIN_DIGEST_ALGORITHM,
)
from .engine import EngineConfig, SensitiveModeScope

CONFIG_ENV_VAR = "BANKGATE_CONFIG"
DEFAULT_CONFIG_PATH = "bankgate.json"


@dataclass(frozen=True)
class AppConfig:
    bind_host: str = "127.0.0.1"
    bind_port: int = 8940
    # Directory for the TSV store; None keeps everything in memory.
    store_root: str | None = "bankgate-data"
    # Seeds the session/challenge token stream; None means unpredictable tokens.
    run_seed: int | None = None
    admin_token: str = "admin-dev-token"
    session_ttl_seconds: int = 600
    challenge_ttl_seconds: int = 120
    max_a1_failures: int = 3
    max_a2_failures: int = 3
    sensitive_mode_scope: str = SensitiveModeScope.SINGLE_TRANSACTION.value
    fingerprint_threshold: float = DEFAULT_FP_THRESHOLD
    face_threshold: float = DEFAULT_FR_THRESHOLD
    capture_noise: float = DEFAULT_CAPTURE_NOISE
    # Recorded so operators can audit the digest primitive in use.
    pin_digest_algorithm: str = PIN_DIGEST_ALGORITHM
    # The gateway itself speaks plain HTTP; TLS is terminated in front of it.
    tls_termination_expected: bool = True

    def __post_init__(self) -> None:
        SensitiveModeScope(self.sensitive_mode_scope)
        if self.pin_digest_algorithm not in hashlib.algorithms_available:
            raise ValueError(
                f"unknown pin_digest_algorithm {self.pin_digest_algorithm!r}"
            )
        if self.pin_digest_algorithm != PIN_DIGEST_ALGORITHM:
            raise ValueError(
                "pin_digest_algorithm must match the digest used for stored "
                f"credentials ({PIN_DIGEST_ALGORITHM!r})"
            )
        if self.bind_port < 1 or self.bind_port > 65535:
            raise ValueError("bind_port out of range")
        if not 0.0 <= self.capture_noise <= 0.5:
            raise ValueError("capture_noise must lie in [0, 0.5]")

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            session_ttl_seconds=self.session_ttl_seconds,
            challenge_ttl_seconds=self.challenge_ttl_seconds,
            max_a1_failures=self.max_a1_failures,
            max_a2_failures=self.max_a2_failures,
            sensitive_mode_scope=SensitiveModeScope(self.sensitive_mode_scope),
            tau_fp=self.fingerprint_threshold,
            tau_fr=self.face_threshold,
        )


def resolve_config_path(path: str | Path | None = None) -> Path | None:
    """Return the config file to read, or None when only defaults apply."""
    if path is not None:
        return Path(path)
    env = os.environ.get(CONFIG_ENV_VAR)
    if env:
        return Path(env)
    default = Path(DEFAULT_CONFIG_PATH)
    return default if default.exists() else None


def load_config(path: str | Path | None = None) -> AppConfig:
    resolved = resolve_config_path(path)
    if resolved is None:
        return AppConfig()
    raw = json.loads(resolved.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    known = {f.name for f in fields(AppConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return AppConfig(**raw)
