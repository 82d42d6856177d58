"""Domain error hierarchy.

Every error carries a stable machine-readable ``code``; the gateway maps each
code to exactly one HTTP status, and the CLI maps any :class:`DomainError` to
exit code 1.
"""

from __future__ import annotations


class DomainError(Exception):
    """Base class for all domain-level failures."""

    code = "DOMAIN_ERROR"

    def __init__(self, message: str = "", **context: object) -> None:
        super().__init__(message or self.code)
        self.message = message or self.code
        self.context = context


class InvalidFlagPair(DomainError):
    """(a1=0, a2=1) has no status row; reaching this is an upstream bug."""

    code = "INVALID_FLAG_PAIR"


class MalformedPin(DomainError):
    code = "MALFORMED_PIN"


class UserLocked(DomainError):
    code = "USER_LOCKED"


class UnknownUser(DomainError):
    code = "UNKNOWN_USER"


class UnknownDevice(DomainError):
    code = "UNKNOWN_DEVICE"


class UnknownService(DomainError):
    code = "UNKNOWN_SERVICE"


class UnknownSession(DomainError):
    code = "UNKNOWN_SESSION"


class SessionExpired(DomainError):
    code = "SESSION_EXPIRED"


class NotAuthenticated(DomainError):
    code = "NOT_AUTHENTICATED"


class DeviceMethodViolation(DomainError):
    """Fingerprint login attempted from a device class that cannot carry one."""

    code = "DEVICE_METHOD_VIOLATION"


class KindMismatch(DomainError):
    code = "KIND_MISMATCH"


class LengthMismatch(DomainError):
    code = "LENGTH_MISMATCH"


class InvalidNoiseRate(DomainError):
    code = "INVALID_NOISE_RATE"


class InvalidThreshold(DomainError):
    code = "INVALID_THRESHOLD"


class ChallengePending(DomainError):
    code = "CHALLENGE_PENDING"


class ChallengeExpired(DomainError):
    code = "CHALLENGE_EXPIRED"


class ChallengeConsumed(DomainError):
    code = "CHALLENGE_CONSUMED"


class ChallengeMismatch(DomainError):
    code = "CHALLENGE_MISMATCH"


class AlreadyA2(DomainError):
    code = "ALREADY_A2"


class SensitivityDowngrade(DomainError):
    """No operation may lower a service below its current sensitivity."""

    code = "SENSITIVITY_DOWNGRADE"


class PartitionViolation(DomainError):
    """A template was routed to the wrong side of the storage partition."""

    code = "PARTITION_VIOLATION"


class TemplateNotFound(DomainError):
    code = "TEMPLATE_NOT_FOUND"


class IntegrityViolation(DomainError):
    code = "INTEGRITY_VIOLATION"


class DuplicateUser(DomainError):
    code = "DUPLICATE_USER"
