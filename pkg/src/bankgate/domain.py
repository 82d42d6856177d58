"""Shared domain types and the session-status table.

A user's live authentication state is the flag pair (a1, a2); exactly three
pairs are meaningful and each maps to one status label:

    (0, 0) -> S-1  User is Offline
    (1, 0) -> S-2  User is Online
    (1, 1) -> S-3  User is Online and in Sensitive Mode

The fourth pair (0, 1) is rejected at every construction site — second-level
access cannot exist without first-level access.

All types here are immutable values; mutation happens only inside the session
engine and the knowledge base, which swap whole records.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .errors import InvalidFlagPair

TEMPLATE_BITS = 256
TEMPLATE_BYTES = TEMPLATE_BITS // 8

# Opaque identifiers (users, devices, services) share one conservative charset
# so they embed safely in tab-separated records and packed columns.
_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def validate_identifier(value: str, what: str = "identifier") -> str:
    if not _ID_RE.match(value):
        raise ValueError(f"{what} {value!r} must match [A-Za-z0-9_.-]+")
    return value


def format_timestamp(ts: datetime) -> str:
    """RFC 3339 UTC with fixed-width microseconds (lexicographic == chronologic)."""
    if ts.tzinfo is None:
        raise ValueError("timestamps must be timezone-aware")
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)


class DeviceType(str, Enum):
    SMARTPHONE = "smartphone"
    TABLET = "tablet"
    DESKTOP = "desktop"
    LAPTOP = "laptop"


#: Device classes that carry a local fingerprint store.
FINGERPRINT_CAPABLE = frozenset({DeviceType.SMARTPHONE, DeviceType.TABLET})


class TemplateKind(str, Enum):
    FINGERPRINT = "fingerprint"
    FACE = "face"


class Sensitivity(str, Enum):
    A1 = "A1"
    A2 = "A2"


class ClassifiedBy(str, Enum):
    BANK = "bank"
    USER = "user"


class UserStatus(str, Enum):
    ACTIVE = "active"
    LOCKED = "locked"


class AuthMethod(str, Enum):
    PIN = "pin"
    FINGERPRINT = "fingerprint"
    FACE = "face"
    NONE = "none"


class LogEvent(str, Enum):
    A1_GRANTED = "a1_granted"
    A1_DENIED = "a1_denied"
    A2_GRANTED = "a2_granted"
    A2_DENIED = "a2_denied"
    LOGOUT = "logout"
    TIMEOUT = "timeout"
    LOCKOUT = "lockout"
    SERVICE_UPGRADED = "service_upgraded"
    TX_EXECUTED = "tx_executed"
    TX_REFUSED = "tx_refused"


class StatusLabel(str, Enum):
    S1_OFFLINE = "S-1"
    S2_ONLINE = "S-2"
    S3_SENSITIVE = "S-3"

    @property
    def description(self) -> str:
        return _STATUS_DESCRIPTIONS[self]


_STATUS_DESCRIPTIONS = {
    StatusLabel.S1_OFFLINE: "User is Offline",
    StatusLabel.S2_ONLINE: "User is Online",
    StatusLabel.S3_SENSITIVE: "User is Online and in Sensitive Mode",
}

_FLAGS_TO_LABEL = {
    (False, False): StatusLabel.S1_OFFLINE,
    (True, False): StatusLabel.S2_ONLINE,
    (True, True): StatusLabel.S3_SENSITIVE,
}


@dataclass(frozen=True)
class SessionStatus:
    a1: bool
    a2: bool
    label: StatusLabel

    def __post_init__(self) -> None:
        expected = _FLAGS_TO_LABEL.get((self.a1, self.a2))
        if expected is None:
            raise InvalidFlagPair("flag pair (a1=0, a2=1) has no status row")
        if expected is not self.label:
            raise InvalidFlagPair(
                f"label {self.label.value} does not match flags ({int(self.a1)}, {int(self.a2)})"
            )

    @property
    def description(self) -> str:
        return self.label.description


def classify_status(a1: bool, a2: bool) -> SessionStatus:
    """Map an (a1, a2) flag pair to its unique session status.

    Raises :class:`InvalidFlagPair` for (0, 1), which signals a state-machine
    bug upstream rather than a user-facing condition.
    """
    label = _FLAGS_TO_LABEL.get((bool(a1), bool(a2)))
    if label is None:
        raise InvalidFlagPair("flag pair (a1=0, a2=1) has no status row")
    return SessionStatus(a1=bool(a1), a2=bool(a2), label=label)


S1_OFFLINE = classify_status(False, False)
S2_ONLINE = classify_status(True, False)
S3_SENSITIVE = classify_status(True, True)


class GeoSource(str, Enum):
    CLIENT_DECLARED = "client_declared"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Geolocation:
    latitude: float | None = None
    longitude: float | None = None
    source: GeoSource = GeoSource.UNKNOWN

    def __post_init__(self) -> None:
        if self.source is GeoSource.CLIENT_DECLARED:
            if self.latitude is None or self.longitude is None:
                raise ValueError("client-declared geolocation requires both coordinates")
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range [-90, 90]")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range [-180, 180]")


UNKNOWN_LOCATION = Geolocation()


@dataclass(frozen=True)
class BiometricTemplate:
    """Fixed-length bit vector standing in for an extracted biometric feature.

    The 256-bit simulation stand-in is small enough for desk-scale brute
    force while keeping the random-impostor match probability at the default
    thresholds negligible.
    """

    bits: bytes
    kind: TemplateKind

    def __post_init__(self) -> None:
        if len(self.bits) != TEMPLATE_BYTES:
            raise ValueError(f"template must be exactly {TEMPLATE_BITS} bits")

    def to_hex(self) -> str:
        return self.bits.hex()

    @classmethod
    def from_hex(cls, text: str, kind: TemplateKind) -> "BiometricTemplate":
        return cls(bits=bytes.fromhex(text), kind=kind)

    def bit(self, i: int) -> int:
        """Bit i, MSB-first within each byte."""
        return (self.bits[i // 8] >> (7 - i % 8)) & 1

    def complement(self) -> "BiometricTemplate":
        return BiometricTemplate(bytes(b ^ 0xFF for b in self.bits), self.kind)


@dataclass(frozen=True)
class DeviceBinding:
    device_id: str
    device_type: DeviceType
    fingerprint_template_ref: str | None = None

    def __post_init__(self) -> None:
        validate_identifier(self.device_id, "device_id")
        if self.fingerprint_template_ref is not None and self.device_type not in FINGERPRINT_CAPABLE:
            raise ValueError(
                f"{self.device_type.value} devices cannot carry fingerprint credentials"
            )


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    full_name: str
    pin_digest: str
    pin_salt: str
    face_template_ref: str
    enrolled_devices: tuple[DeviceBinding, ...] = ()
    status: UserStatus = UserStatus.ACTIVE

    def __post_init__(self) -> None:
        validate_identifier(self.user_id, "user_id")
        if "\t" in self.full_name or "\n" in self.full_name:
            raise ValueError("full_name must not contain tabs or newlines")

    def device(self, device_id: str) -> DeviceBinding | None:
        for binding in self.enrolled_devices:
            if binding.device_id == device_id:
                return binding
        return None


@dataclass(frozen=True)
class ChallengeToken:
    """Single-use, time-limited credential binding a pending sensitive
    transaction to its required face verification."""

    token: str
    service_id: str
    issued_at: datetime
    ttl_seconds: int
    consumed: bool = False

    def __post_init__(self) -> None:
        if self.ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be positive")

    def expires_at(self) -> datetime:
        from datetime import timedelta

        return self.issued_at + timedelta(seconds=self.ttl_seconds)


@dataclass(frozen=True)
class Session:
    session_id: str
    user_id: str
    status: SessionStatus
    device_type: DeviceType
    a1_method: AuthMethod
    geolocation: Geolocation
    created_at: datetime
    expires_at: datetime
    a1_timestamp: datetime | None = None
    a2_timestamp: datetime | None = None
    pending_challenge: ChallengeToken | None = None

    def __post_init__(self) -> None:
        if (self.a1_timestamp is not None) != self.status.a1:
            raise ValueError("a1_timestamp must be present iff a1 flag is set")
        if (self.a2_timestamp is not None) != self.status.a2:
            raise ValueError("a2_timestamp must be present iff a2 flag is set")
        if self.a1_timestamp is not None and self.a2_timestamp is not None:
            if self.a2_timestamp < self.a1_timestamp:
                raise ValueError("a2_timestamp must not precede a1_timestamp")
        if self.a1_method is AuthMethod.FINGERPRINT and self.device_type not in FINGERPRINT_CAPABLE:
            raise ValueError("fingerprint login is only possible from smartphone/tablet")


@dataclass(frozen=True)
class ServiceDefinition:
    service_id: str
    name: str
    sensitivity: Sensitivity
    classified_by: ClassifiedBy = ClassifiedBy.BANK
    owner_user_id: str | None = None

    def __post_init__(self) -> None:
        validate_identifier(self.service_id, "service_id")
        if "\t" in self.name or "\n" in self.name:
            raise ValueError("service name must not contain tabs or newlines")
        if (self.owner_user_id is not None) != (self.classified_by is ClassifiedBy.USER):
            raise ValueError("owner_user_id is present iff classified_by = user")


@dataclass(frozen=True)
class TransactionRecord:
    transaction_id: str
    session_id: str
    user_id: str
    service_id: str
    executed_at: datetime
    required_level: Sensitivity
    amount_minor: int | None = None  # exact minor currency units, never floats


@dataclass(frozen=True)
class UserLogEntry:
    """One append-only audit record; entries are never updated or deleted."""

    entry_id: str
    session_id: str
    user_id: str
    event: LogEvent
    device_type: DeviceType
    geolocation: Geolocation
    auth_method_used: AuthMethod
    timestamp: datetime
    detail: str = ""

    def __post_init__(self) -> None:
        if self.event is LogEvent.A1_GRANTED and self.auth_method_used not in (
            AuthMethod.PIN,
            AuthMethod.FINGERPRINT,
        ):
            raise ValueError("a1_granted entries must record pin or fingerprint")
        if self.event is LogEvent.A2_GRANTED and self.auth_method_used is not AuthMethod.FACE:
            raise ValueError("a2_granted entries must record face")
        if "\t" in self.detail or "\n" in self.detail:
            raise ValueError("detail must not contain tabs or newlines")


@dataclass(frozen=True)
class StoreLocation:
    """Which side of the storage partition a persisted template lives on."""

    kind: str  # "cloud_kb" | "device_local"
    device_id: str | None = None

    CLOUD = "cloud_kb"
    DEVICE = "device_local"

    def __post_init__(self) -> None:
        if self.kind not in (self.CLOUD, self.DEVICE):
            raise ValueError(f"unknown store kind {self.kind!r}")
        if (self.device_id is not None) != (self.kind == self.DEVICE):
            raise ValueError("device_id is present iff kind = device_local")

    @classmethod
    def cloud(cls) -> "StoreLocation":
        return cls(kind=cls.CLOUD)

    @classmethod
    def device(cls, device_id: str) -> "StoreLocation":
        return cls(kind=cls.DEVICE, device_id=device_id)
