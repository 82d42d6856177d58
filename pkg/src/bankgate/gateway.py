"""HTTP/JSON gateway: the portal-facing surface of the authentication stack.

Every endpoint delegates to exactly one session-engine or knowledge-base
operation; the gateway adds transport, device-type detection, and error
mapping, nothing else.  Session tokens travel only in the Authorization
header, and no response ever contains a PIN, a PIN digest, or another
principal's template bits.
"""

from __future__ import annotations

import hmac
import logging
import sys
from typing import Any, Callable

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import AppConfig
from .domain import (
    AuthMethod,
    BiometricTemplate,
    DeviceType,
    Geolocation,
    GeoSource,
    LogEvent,
    Session,
    TemplateKind,
    UserLogEntry,
    UserStatus,
    format_timestamp,
)
from .engine import (
    Denied,
    Executed,
    LoginRequest,
    ManualClock,
    SessionEngine,
    StepUpChallenge,
    SystemClock,
)
from .enroll import DeviceSpec, EnrollmentSpec, enroll_user
from .errors import DomainError
from .kb import KnowledgeBase
from .rng import TokenSource

logger = logging.getLogger("bankgate.gateway")

#: Total map from domain error code to HTTP status.  Codes absent here fall
#: back to 500, which the test suite treats as a mapping bug.
ERROR_STATUS: dict[str, int] = {
    "INVALID_FLAG_PAIR": 500,  # internal state-machine bug, never user error
    "MALFORMED_PIN": 422,
    "USER_LOCKED": 403,
    "UNKNOWN_USER": 404,
    "UNKNOWN_DEVICE": 404,
    "UNKNOWN_SERVICE": 404,
    "UNKNOWN_SESSION": 401,
    "SESSION_EXPIRED": 401,
    "NOT_AUTHENTICATED": 401,
    "DEVICE_METHOD_VIOLATION": 403,
    "KIND_MISMATCH": 422,
    "LENGTH_MISMATCH": 422,
    "INVALID_NOISE_RATE": 422,
    "INVALID_THRESHOLD": 422,
    "CHALLENGE_PENDING": 409,
    "CHALLENGE_EXPIRED": 409,
    "CHALLENGE_CONSUMED": 409,
    "CHALLENGE_MISMATCH": 409,
    "ALREADY_A2": 409,
    "SENSITIVITY_DOWNGRADE": 409,
    "PARTITION_VIOLATION": 403,
    "TEMPLATE_NOT_FOUND": 404,
    "INTEGRITY_VIOLATION": 422,
    "DUPLICATE_USER": 409,
}

_MOBILE_KEYWORDS = ("mobile", "phone")
_TABLET_KEYWORDS = ("tablet", "ipad")


def detect_device(agent_string: str) -> DeviceType:
    """Classify the client device from its agent string.

    Case-insensitive keyword rule; anything unrecognized (including the
    empty string) is a desktop.
    """
    lowered = agent_string.lower()
    if any(word in lowered for word in _MOBILE_KEYWORDS):
        return DeviceType.SMARTPHONE
    if any(word in lowered for word in _TABLET_KEYWORDS):
        return DeviceType.TABLET
    if "laptop" in lowered:
        return DeviceType.LAPTOP
    return DeviceType.DESKTOP


class ApiError(Exception):
    """Gateway-level failure that is not a domain error (auth plumbing)."""

    def __init__(self, http_status: int, code: str, message: str) -> None:
        super().__init__(message)
        self.http_status = http_status
        self.code = code
        self.message = message


# --- request bodies ---------------------------------------------------------


class GeolocationBody(BaseModel):
    latitude: float
    longitude: float


class LoginBody(BaseModel):
    user_id: str
    method: str
    pin: str | None = None
    fingerprint_probe_hex: str | None = None
    device_id: str | None = None
    device_type: str | None = None
    geolocation: GeolocationBody | None = None


class TransactionBody(BaseModel):
    service_id: str
    amount: int | None = None


class StepUpBody(BaseModel):
    challenge: str
    face_probe_hex: str


class EnrollDeviceBody(BaseModel):
    device_id: str
    device_type: str


class EnrollBody(BaseModel):
    user_id: str
    full_name: str
    pin: str
    template_seed: int
    devices: list[EnrollDeviceBody] = []


# --- encoding helpers -------------------------------------------------------


def _encode_log_entry(entry: UserLogEntry) -> dict[str, Any]:
    return {
        "entry_id": entry.entry_id,
        "session_id": entry.session_id,
        "user_id": entry.user_id,
        "event": entry.event.value,
        "device_type": entry.device_type.value,
        "auth_method": entry.auth_method_used.value,
        "latitude": entry.geolocation.latitude,
        "longitude": entry.geolocation.longitude,
        "geo_source": entry.geolocation.source.value,
        "timestamp": format_timestamp(entry.timestamp),
        "detail": entry.detail,
    }


def _parse_probe(hex_text: str, kind: TemplateKind) -> BiometricTemplate:
    try:
        return BiometricTemplate.from_hex(hex_text, kind)
    except ValueError as exc:
        raise ApiError(422, "INVALID_REQUEST", f"bad probe encoding: {exc}") from exc


def _parse_geolocation(body: GeolocationBody | None) -> Geolocation:
    if body is None:
        return Geolocation()
    return Geolocation(
        latitude=body.latitude,
        longitude=body.longitude,
        source=GeoSource.CLIENT_DECLARED,
    )


def create_app(
    config: AppConfig | None = None,
    kb: KnowledgeBase | None = None,
    clock: SystemClock | ManualClock | None = None,
    tokens: TokenSource | None = None,
) -> FastAPI:
    """Build the application with injectable stores, clock, and token source.

    Production callers pass nothing and get a persistent store under
    ``config.store_root``; tests inject an in-memory store, a manual clock,
    and a seeded token source for reproducible runs.
    """
    config = config or AppConfig()
    if kb is None:
        kb = KnowledgeBase.load(config.store_root) if config.store_root else KnowledgeBase()
    engine = SessionEngine(
        kb,
        config.engine_config(),
        clock or SystemClock(),
        tokens if tokens is not None else TokenSource(config.run_seed),
    )

    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
        logger.propagate = False

    app = FastAPI(title="bankgate", docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.kb = kb
    app.state.engine = engine

    # --- error mapping ----------------------------------------------------

    @app.exception_handler(DomainError)
    async def _domain_error(_request: Request, exc: DomainError) -> JSONResponse:
        status = ERROR_STATUS.get(exc.code, 500)
        return JSONResponse(
            status_code=status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.http_status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.exception_handler(ValueError)
    async def _value_error(_request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(
            status_code=422, content={"code": "INVALID_REQUEST", "message": str(exc)}
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(
        _request: Request, exc: RequestValidationError
    ) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"code": "MALFORMED_BODY", "message": str(exc.errors()[:3])},
        )

    @app.middleware("http")
    async def _request_log(request: Request, call_next: Callable) -> Any:
        response = await call_next(request)
        logger.info(
            "%s %s -> %d", request.method, request.url.path, response.status_code
        )
        return response

    # --- auth plumbing ------------------------------------------------------

    def require_session(request: Request) -> Session:
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer ") or not header[7:].strip():
            raise ApiError(401, "MISSING_SESSION", "Authorization: Bearer header required")
        return engine.get_session(header[7:].strip())

    def require_admin(request: Request) -> None:
        supplied = request.headers.get("x-admin-token", "")
        if not config.admin_token or not hmac.compare_digest(
            supplied, config.admin_token
        ):
            raise ApiError(401, "ADMIN_AUTH_REQUIRED", "valid X-Admin-Token required")

    # --- session endpoints --------------------------------------------------

    @app.post("/api/v1/login")
    async def login(body: LoginBody, request: Request) -> JSONResponse:
        if body.device_type is not None:
            device_type = DeviceType(body.device_type)
            source = "declared"
        else:
            device_type = detect_device(request.headers.get("user-agent", ""))
            source = "agent"
        logger.info(
            "login user=%s device_type=%s source=%s",
            body.user_id,
            device_type.value,
            source,
        )
        probe = None
        if body.fingerprint_probe_hex is not None:
            probe = _parse_probe(body.fingerprint_probe_hex, TemplateKind.FINGERPRINT)
        outcome = engine.login(
            LoginRequest(
                user_id=body.user_id,
                method=AuthMethod(body.method),
                device_type=device_type,
                geolocation=_parse_geolocation(body.geolocation),
                pin=body.pin,
                fingerprint_probe=probe,
                device_id=body.device_id,
            )
        )
        if isinstance(outcome, Denied):
            return JSONResponse(
                status_code=401,
                content={
                    "code": outcome.reason,
                    "message": "first-level authentication failed",
                    "locked": outcome.locked,
                    "attempts_remaining": outcome.attempts_remaining,
                },
            )
        return JSONResponse(
            {
                "session_id": outcome.session_id,
                "status": outcome.status.label.value,
                "a1_method": outcome.a1_method.value,
            }
        )

    @app.get("/api/v1/services")
    async def list_services(request: Request) -> list[dict[str, str]]:
        session = require_session(request)
        return [
            {
                "service_id": service.service_id,
                "name": service.name,
                "sensitivity": service.sensitivity.value,
            }
            for service in kb.list_services(session.user_id)
        ]

    @app.post("/api/v1/transactions")
    async def initiate_transaction(body: TransactionBody, request: Request) -> dict[str, Any]:
        session = require_session(request)
        outcome = engine.initiate_transaction(
            session.session_id, body.service_id, body.amount
        )
        if isinstance(outcome, StepUpChallenge):
            return {
                "step_up_required": True,
                "challenge": outcome.challenge.token,
                "required_method": outcome.required_method.value,
            }
        return {
            "executed": True,
            "transaction_id": outcome.transaction.transaction_id,
        }

    @app.post("/api/v1/step-up")
    async def complete_step_up(body: StepUpBody, request: Request) -> Any:
        session = require_session(request)
        probe = _parse_probe(body.face_probe_hex, TemplateKind.FACE)
        outcome = engine.complete_step_up(session.session_id, body.challenge, probe)
        if isinstance(outcome, Denied):
            return JSONResponse(
                status_code=403,
                content={
                    "code": outcome.reason,
                    "message": "second-level verification failed",
                    "attempts_remaining": outcome.attempts_remaining,
                },
            )
        return {
            "executed": True,
            "transaction_id": outcome.transaction.transaction_id,
            "status": outcome.status.label.value,
        }

    @app.post("/api/v1/services/{service_id}/upgrade")
    async def upgrade_service(service_id: str, request: Request) -> dict[str, str]:
        session = require_session(request)
        view = engine.upgrade_service_sensitivity(
            session.user_id, service_id, session.session_id
        )
        return {"service_id": view.service_id, "sensitivity": view.sensitivity.value}

    @app.post("/api/v1/logout")
    async def logout(request: Request) -> dict[str, str]:
        session = require_session(request)
        engine.logout(session.session_id)
        return {"status": "S-1"}

    @app.get("/api/v1/logs")
    async def own_logs(
        request: Request, session_id: str | None = Query(default=None)
    ) -> list[dict[str, Any]]:
        session = require_session(request)
        entries = kb.query_logs(user_id=session.user_id, session_id=session_id)
        return [_encode_log_entry(entry) for entry in entries]

    # --- admin endpoints ------------------------------------------------------

    @app.post("/api/v1/admin/users", status_code=201)
    async def admin_enroll(body: EnrollBody, request: Request) -> dict[str, Any]:
        require_admin(request)
        summary = enroll_user(
            kb,
            EnrollmentSpec(
                user_id=body.user_id,
                full_name=body.full_name,
                pin=body.pin,
                template_seed=body.template_seed,
                devices=tuple(
                    DeviceSpec(d.device_id, DeviceType(d.device_type))
                    for d in body.devices
                ),
            ),
        )
        return {
            "user_id": summary.user_id,
            "face_template_ref": summary.face_template_ref,
            "fingerprint_refs": summary.fingerprint_refs,
        }

    @app.post("/api/v1/admin/users/{user_id}/unlock")
    async def admin_unlock(user_id: str, request: Request) -> dict[str, str]:
        require_admin(request)
        record = kb.unlock_user(user_id)
        return {"user_id": record.user_id, "status": UserStatus.ACTIVE.value}

    @app.get("/api/v1/admin/logs")
    async def admin_logs(
        request: Request,
        user_id: str | None = Query(default=None),
        session_id: str | None = Query(default=None),
        event: str | None = Query(default=None),
    ) -> list[dict[str, Any]]:
        require_admin(request)
        entries = kb.query_logs(
            user_id=user_id,
            session_id=session_id,
            event=LogEvent(event) if event is not None else None,
        )
        return [_encode_log_entry(entry) for entry in entries]

    return app
