"""Two-level authentication state machine.

Level 1 (login) grants A1 by PIN or, from fingerprint-capable devices, by
fingerprint match against the device-local store.  Level 2 is a face-match
step-up issued on demand when an A1-authenticated user initiates a sensitive
transaction; completing it grants A2 for exactly the bound transaction (or,
configurably, for the rest of the session).

Every transition appends an audit entry in the same atomic knowledge-base
commit, so an observer never sees a granted flag without its log entry.  All
time flows through an injectable clock; nothing reads the wall clock
directly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from enum import Enum

from .authenticators import (
    DEFAULT_FP_THRESHOLD,
    DEFAULT_FR_THRESHOLD,
    match_templates,
    verify_pin,
)
from .domain import (
    FINGERPRINT_CAPABLE,
    AuthMethod,
    BiometricTemplate,
    ChallengeToken,
    DeviceType,
    Geolocation,
    LogEvent,
    Sensitivity,
    ServiceDefinition,
    Session,
    SessionStatus,
    StoreLocation,
    TransactionRecord,
    UserLogEntry,
    UserStatus,
    classify_status,
)
from .errors import (
    ChallengeConsumed,
    ChallengeExpired,
    ChallengeMismatch,
    ChallengePending,
    DeviceMethodViolation,
    NotAuthenticated,
    SessionExpired,
    UnknownDevice,
    UnknownSession,
    UserLocked,
)
from .kb import KnowledgeBase
from .rng import TokenSource

#: Placeholder session id for audit entries written outside any live session
#: (denied logins, lockouts).
NO_SESSION = "-"


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class ManualClock:
    """Deterministic clock for tests and reproducible runs."""

    def __init__(self, start: datetime | None = None) -> None:
        self._now = start or datetime(2024, 1, 1, tzinfo=timezone.utc)

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float) -> datetime:
        self._now += timedelta(seconds=seconds)
        return self._now


class SensitiveModeScope(str, Enum):
    #: A2 covers exactly the transaction that triggered it (least privilege).
    SINGLE_TRANSACTION = "single_transaction"
    #: A2 persists for the rest of the session once granted.
    SESSION = "session"


@dataclass(frozen=True)
class EngineConfig:
    session_ttl_seconds: int = 600
    challenge_ttl_seconds: int = 120
    max_a1_failures: int = 3
    max_a2_failures: int = 3
    sensitive_mode_scope: SensitiveModeScope = SensitiveModeScope.SINGLE_TRANSACTION
    tau_fp: float = DEFAULT_FP_THRESHOLD
    tau_fr: float = DEFAULT_FR_THRESHOLD

    def __post_init__(self) -> None:
        for name in ("session_ttl_seconds", "challenge_ttl_seconds", "max_a1_failures", "max_a2_failures"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LoginRequest:
    user_id: str
    method: AuthMethod
    device_type: DeviceType
    geolocation: Geolocation
    pin: str | None = None
    fingerprint_probe: BiometricTemplate | None = None
    device_id: str | None = None

    def __post_init__(self) -> None:
        if self.method not in (AuthMethod.PIN, AuthMethod.FINGERPRINT):
            raise ValueError("login method must be pin or fingerprint")
        if self.method is AuthMethod.PIN and self.pin is None:
            raise ValueError("pin login requires a pin")
        if self.method is AuthMethod.FINGERPRINT and (
            self.fingerprint_probe is None or self.device_id is None
        ):
            raise ValueError("fingerprint login requires a probe and a device_id")


@dataclass(frozen=True)
class StepUpChallenge:
    """Prompt returned instead of execution: verify identity by face first."""

    challenge: ChallengeToken
    service_id: str
    required_method: AuthMethod = AuthMethod.FACE

    def __post_init__(self) -> None:
        if self.required_method is not AuthMethod.FACE:
            raise ValueError("second-level verification is face-only")


@dataclass(frozen=True)
class Executed:
    transaction: TransactionRecord
    status: SessionStatus


@dataclass(frozen=True)
class Denied:
    reason: str  # A1_DENIED | A2_DENIED | TX_REFUSED
    locked: bool = False
    refused: bool = False
    attempts_remaining: int | None = None


@dataclass
class _ChallengeState:
    token: ChallengeToken
    session_id: str
    amount_minor: int | None
    attempts: int = 0


class SessionEngine:
    """Serializes all transitions; operations are safe to call concurrently."""

    def __init__(
        self,
        kb: KnowledgeBase,
        config: EngineConfig | None = None,
        clock: SystemClock | ManualClock | None = None,
        tokens: TokenSource | None = None,
    ) -> None:
        self.kb = kb
        self.config = config or EngineConfig()
        self.clock = clock or SystemClock()
        self.tokens = tokens or TokenSource()
        self._sessions: dict[str, Session] = {}
        self._ended: set[str] = set()
        self._challenges: dict[str, _ChallengeState] = {}
        self._a1_failures: dict[str, int] = {}
        self._mutex = threading.RLock()

    # --- level 1 ----------------------------------------------------------

    def login(self, request: LoginRequest) -> Session | Denied:
        """Authenticate by PIN or fingerprint and open an S-2 session.

        Each failure appends a1_denied; the max_a1_failures-th consecutive
        failure locks the user and appends lockout.
        """
        with self._mutex, self.kb.batch():
            record = self.kb.get_user(request.user_id)
            if record.status is UserStatus.LOCKED:
                raise UserLocked(f"user {request.user_id} is locked")
            now = self.clock.now()

            if request.method is AuthMethod.FINGERPRINT:
                if request.device_type not in FINGERPRINT_CAPABLE:
                    raise DeviceMethodViolation(
                        f"{request.device_type.value} logins are PIN-only"
                    )
                binding = record.device(request.device_id or "")
                if binding is None or binding.fingerprint_template_ref is None:
                    raise UnknownDevice(
                        f"no fingerprint binding for device {request.device_id!r}"
                    )
                enrolled = self.kb.fetch_template(
                    binding.fingerprint_template_ref,
                    StoreLocation.device(binding.device_id),
                )
                ok = match_templates(
                    request.fingerprint_probe, enrolled, self.config.tau_fp
                ).matched
            else:
                ok = verify_pin(request.pin or "", record)

            if ok:
                self._a1_failures[request.user_id] = 0
                session = Session(
                    session_id=self.tokens.new_token(),
                    user_id=request.user_id,
                    status=classify_status(True, False),
                    device_type=request.device_type,
                    a1_method=request.method,
                    geolocation=request.geolocation,
                    created_at=now,
                    expires_at=now + timedelta(seconds=self.config.session_ttl_seconds),
                    a1_timestamp=now,
                )
                self._sessions[session.session_id] = session
                self._log(session.session_id, request.user_id, LogEvent.A1_GRANTED,
                          request.device_type, request.geolocation, request.method, now)
                return session

            failures = self._a1_failures.get(request.user_id, 0) + 1
            self._a1_failures[request.user_id] = failures
            self._log(NO_SESSION, request.user_id, LogEvent.A1_DENIED,
                      request.device_type, request.geolocation, request.method, now)
            locked = failures >= self.config.max_a1_failures
            if locked:
                self.kb.lock_user(request.user_id)
                self._a1_failures[request.user_id] = 0
                self._log(NO_SESSION, request.user_id, LogEvent.LOCKOUT,
                          request.device_type, request.geolocation, AuthMethod.NONE, now,
                          detail=f"after {failures} consecutive a1 failures")
            return Denied(
                reason="A1_DENIED",
                locked=locked,
                attempts_remaining=0 if locked else self.config.max_a1_failures - failures,
            )

    # --- transactions and level 2 ------------------------------------------

    def initiate_transaction(
        self, session_id: str, service_id: str, amount_minor: int | None = None
    ) -> Executed | StepUpChallenge:
        """Execute an A1 service immediately; for A2 services issue a face
        challenge unless the session is already in sensitive mode with
        session-wide scope."""
        with self._mutex:
            session = self._resolve(session_id)
            return self._initiate(session, service_id, amount_minor)

    def _initiate(
        self, session: Session, service_id: str, amount_minor: int | None
    ) -> Executed | StepUpChallenge:
        session_id = session.session_id
        with self.kb.batch():
            now = self.clock.now()
            sensitivity = self.kb.resolve_sensitivity(session.user_id, service_id)

            if sensitivity is Sensitivity.A1:
                tx = self._execute(session, service_id, amount_minor, Sensitivity.A1, now)
                return Executed(transaction=tx, status=session.status)

            if session.status.a2 and self.config.sensitive_mode_scope is SensitiveModeScope.SESSION:
                tx = self._execute(session, service_id, amount_minor, Sensitivity.A2, now)
                return Executed(transaction=tx, status=session.status)

            pending = session.pending_challenge
            if pending is not None and not pending.consumed and now <= pending.expires_at():
                raise ChallengePending(
                    f"challenge {pending.token[:8]}… already pending for this session"
                )

            token = ChallengeToken(
                token=self.tokens.new_token(),
                service_id=service_id,
                issued_at=now,
                ttl_seconds=self.config.challenge_ttl_seconds,
            )
            self._challenges[token.token] = _ChallengeState(
                token=token, session_id=session_id, amount_minor=amount_minor
            )
            self._sessions[session_id] = replace(session, pending_challenge=token)
            return StepUpChallenge(challenge=token, service_id=service_id)

    def complete_step_up(
        self, session_id: str, challenge_token: str, face_probe: BiometricTemplate
    ) -> Executed | Denied:
        """Resolve a pending challenge by matching the face probe against the
        cloud-stored template, then execute the bound transaction.

        Tokens are single use: any presentation after consumption (successful
        or retry-exhausted) raises ChallengeConsumed.
        """
        with self._mutex:
            session = self._resolve(session_id)
            return self._step_up(session, challenge_token, face_probe)

    def _step_up(
        self, session: Session, challenge_token: str, face_probe: BiometricTemplate
    ) -> Executed | Denied:
        session_id = session.session_id
        with self.kb.batch():
            now = self.clock.now()
            state = self._challenges.get(challenge_token)
            if state is None or state.session_id != session_id:
                raise ChallengeMismatch("token is not bound to this session")
            if state.token.consumed:
                raise ChallengeConsumed("challenge token was already used")
            if now > state.token.expires_at():
                raise ChallengeExpired("challenge token has expired")

            record = self.kb.get_user(session.user_id)
            enrolled = self.kb.fetch_template(record.face_template_ref, StoreLocation.cloud())
            result = match_templates(face_probe, enrolled, self.config.tau_fr)

            if result.matched:
                state.token = replace(state.token, consumed=True)
                granted = replace(
                    session,
                    status=classify_status(True, True),
                    a2_timestamp=now,
                    pending_challenge=None,
                )
                self._sessions[session_id] = granted
                self._log(session_id, session.user_id, LogEvent.A2_GRANTED,
                          session.device_type, session.geolocation, AuthMethod.FACE, now)
                single = self.config.sensitive_mode_scope is SensitiveModeScope.SINGLE_TRANSACTION
                tx = self._execute(
                    granted,
                    state.token.service_id,
                    state.amount_minor,
                    Sensitivity.A2,
                    now,
                    detail="status_reverted_to=S-2" if single else "",
                )
                final = granted
                if single:
                    final = replace(granted, status=classify_status(True, False), a2_timestamp=None)
                    self._sessions[session_id] = final
                return Executed(transaction=tx, status=final.status)

            state.attempts += 1
            self._log(session_id, session.user_id, LogEvent.A2_DENIED,
                      session.device_type, session.geolocation, AuthMethod.FACE, now)
            remaining = self.config.max_a2_failures - state.attempts
            if remaining <= 0:
                state.token = replace(state.token, consumed=True)
                self._sessions[session_id] = replace(session, pending_challenge=None)
                self._log(session_id, session.user_id, LogEvent.TX_REFUSED,
                          session.device_type, session.geolocation, AuthMethod.NONE, now,
                          detail=f"service={state.token.service_id} after {state.attempts} failed face attempts")
                return Denied(reason="TX_REFUSED", refused=True, attempts_remaining=0)
            return Denied(reason="A2_DENIED", attempts_remaining=remaining)

    # --- session lifecycle ---------------------------------------------------

    def logout(self, session_id: str) -> None:
        with self._mutex:
            if session_id not in self._sessions:
                raise UnknownSession(f"no live session {session_id!r}")
            # A lapsed session expires on sight here too: it ended by timeout,
            # not by user action, and must be audited as such.
            session = self._resolve(session_id)
            with self.kb.batch():
                now = self.clock.now()
                self._log(session_id, session.user_id, LogEvent.LOGOUT,
                          session.device_type, session.geolocation, AuthMethod.NONE, now)
                self._end(session_id)

    def sweep_expired(self, now: datetime) -> int:
        """Transition every session past its expiry to offline; idempotent."""
        with self._mutex, self.kb.batch():
            count = 0
            for session_id, session in list(self._sessions.items()):
                if session.expires_at < now:
                    self._log(session_id, session.user_id, LogEvent.TIMEOUT,
                              session.device_type, session.geolocation, AuthMethod.NONE, now)
                    self._end(session_id)
                    count += 1
            return count

    def get_session(self, session_id: str) -> Session:
        """Resolve a live session; a lapsed one is expired on sight."""
        with self._mutex:
            return self._resolve(session_id)

    # --- per-user service view -------------------------------------------------

    def upgrade_service_sensitivity(
        self, user_id: str, service_id: str, session_id: str
    ) -> ServiceDefinition:
        """Upgrade a service to require A2 in this user's view.

        Upgrade-only by construction: no downgrade operation exists anywhere
        in the engine or knowledge-base surface.
        """
        with self._mutex:
            session = self._resolve(session_id)
            with self.kb.batch():
                if session.user_id != user_id:
                    raise NotAuthenticated("session does not belong to this user")
                record = self.kb.get_user(user_id)
                if record.status is UserStatus.LOCKED:
                    raise UserLocked(f"user {user_id} is locked")
                view = self.kb.add_overlay(user_id, service_id)
                self._log(session_id, user_id, LogEvent.SERVICE_UPGRADED,
                          session.device_type, session.geolocation, AuthMethod.NONE,
                          self.clock.now(), detail=f"service={service_id}")
                return view

    # --- internals -------------------------------------------------------------

    def _resolve(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            if session_id in self._ended:
                raise SessionExpired("session has ended")
            raise NotAuthenticated("no such session")
        if self.clock.now() > session.expires_at:
            # The timeout transition commits on its own: it must survive the
            # failure of whatever operation tripped over the lapsed session.
            with self.kb.batch():
                self._log(session_id, session.user_id, LogEvent.TIMEOUT,
                          session.device_type, session.geolocation, AuthMethod.NONE,
                          self.clock.now())
                self._end(session_id)
            raise SessionExpired("session has expired")
        return session

    def _end(self, session_id: str) -> None:
        # Terminal state is S-1 with both flags cleared; the record is dropped
        # and only the id is remembered so later use reports SessionExpired.
        del self._sessions[session_id]
        self._ended.add(session_id)

    def _execute(
        self,
        session: Session,
        service_id: str,
        amount_minor: int | None,
        level: Sensitivity,
        now: datetime,
        detail: str = "",
    ) -> TransactionRecord:
        tx = TransactionRecord(
            transaction_id="",
            session_id=session.session_id,
            user_id=session.user_id,
            service_id=service_id,
            amount_minor=amount_minor,
            executed_at=now,
            required_level=level,
        )
        tx_id = self.kb.record_transaction(tx)
        self._log(session.session_id, session.user_id, LogEvent.TX_EXECUTED,
                  session.device_type, session.geolocation, AuthMethod.NONE, now,
                  detail=detail)
        return replace(tx, transaction_id=tx_id)

    def _log(
        self,
        session_id: str,
        user_id: str,
        event: LogEvent,
        device_type: DeviceType,
        geolocation: Geolocation,
        method: AuthMethod,
        timestamp: datetime,
        detail: str = "",
    ) -> None:
        self.kb.append_log(
            UserLogEntry(
                entry_id="",
                session_id=session_id,
                user_id=user_id,
                event=event,
                device_type=device_type,
                geolocation=geolocation,
                auth_method_used=method,
                timestamp=timestamp,
                detail=detail,
            )
        )
