"""Two-level banking-portal authentication gateway.

First-level access (A1) by PIN or device-local fingerprint match; second-level
access (A2) by a face-match step-up challenge bound to a single sensitive
transaction.  Session state, the audit trail, the partitioned template stores,
an HTTP gateway, and an operator CLI.
"""

from .authenticators import (
    DEFAULT_CAPTURE_NOISE,
    DEFAULT_FP_THRESHOLD,
    DEFAULT_FR_THRESHOLD,
    ErrorRates,
    MatchResult,
    capture_sample,
    evaluate_error_rates,
    generate_template,
    hash_pin,
    match_templates,
    verify_pin,
)
from .config import AppConfig, load_config
from .domain import (
    AuthMethod,
    BiometricTemplate,
    ChallengeToken,
    DeviceBinding,
    DeviceType,
    Geolocation,
    LogEvent,
    Sensitivity,
    ServiceDefinition,
    Session,
    SessionStatus,
    StatusLabel,
    StoreLocation,
    TemplateKind,
    TransactionRecord,
    UserLogEntry,
    UserRecord,
    classify_status,
)
from .engine import (
    Denied,
    EngineConfig,
    Executed,
    LoginRequest,
    ManualClock,
    SensitiveModeScope,
    SessionEngine,
    StepUpChallenge,
    SystemClock,
)
from .enroll import (
    DeviceSpec,
    EnrollmentSpec,
    EnrollmentSummary,
    derive_salt,
    enroll_user,
    enrolled_face,
    enrolled_fingerprint,
)
from .errors import DomainError
from .gateway import create_app, detect_device
from .kb import KnowledgeBase
from .rng import SplitMix64, TokenSource, derive_seed

__version__ = "1.0.0"

__all__ = [
    "AppConfig",
    "AuthMethod",
    "BiometricTemplate",
    "ChallengeToken",
    "DEFAULT_CAPTURE_NOISE",
    "DEFAULT_FP_THRESHOLD",
    "DEFAULT_FR_THRESHOLD",
    "Denied",
    "DeviceBinding",
    "DeviceSpec",
    "DeviceType",
    "DomainError",
    "EngineConfig",
    "EnrollmentSpec",
    "EnrollmentSummary",
    "ErrorRates",
    "Executed",
    "Geolocation",
    "KnowledgeBase",
    "LogEvent",
    "LoginRequest",
    "ManualClock",
    "MatchResult",
    "SensitiveModeScope",
    "Sensitivity",
    "ServiceDefinition",
    "Session",
    "SessionEngine",
    "SessionStatus",
    "SplitMix64",
    "StatusLabel",
    "StepUpChallenge",
    "StoreLocation",
    "SystemClock",
    "TemplateKind",
    "TokenSource",
    "TransactionRecord",
    "UserLogEntry",
    "UserRecord",
    "capture_sample",
    "classify_status",
    "create_app",
    "derive_seed",
    "detect_device",
    "derive_salt",
    "enroll_user",
    "enrolled_face",
    "enrolled_fingerprint",
    "evaluate_error_rates",
    "generate_template",
    "hash_pin",
    "load_config",
    "match_templates",
    "verify_pin",
]
