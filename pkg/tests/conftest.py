from datetime import datetime, timezone

import pytest

from bankgate import (
    DeviceSpec,
    DeviceType,
    EngineConfig,
    EnrollmentSpec,
    KnowledgeBase,
    ManualClock,
    Sensitivity,
    ServiceDefinition,
    SessionEngine,
    TokenSource,
    enroll_user,
)

START = datetime(2024, 1, 1, tzinfo=timezone.utc)

ALICE = EnrollmentSpec(
    user_id="alice",
    full_name="Alice Example",
    pin="48213765",
    template_seed=42,
    devices=(
        DeviceSpec("phone-1", DeviceType.SMARTPHONE),
        DeviceSpec("desk-1", DeviceType.DESKTOP),
    ),
)
BOB = EnrollmentSpec(
    user_id="bob",
    full_name="Bob Sample",
    pin="59104827",
    template_seed=77,
    devices=(DeviceSpec("tab-1", DeviceType.TABLET),),
)


@pytest.fixture
def kb() -> KnowledgeBase:
    return KnowledgeBase()


@pytest.fixture
def clock() -> ManualClock:
    return ManualClock(START)


@pytest.fixture
def seeded_kb(kb: KnowledgeBase) -> KnowledgeBase:
    enroll_user(kb, ALICE)
    enroll_user(kb, BOB)
    kb.upsert_service(ServiceDefinition("balance", "Balance enquiry", Sensitivity.A1))
    kb.upsert_service(ServiceDefinition("billpay", "Bill payment", Sensitivity.A1))
    kb.upsert_service(ServiceDefinition("transfer", "Funds transfer", Sensitivity.A2))
    return kb


@pytest.fixture
def engine(seeded_kb: KnowledgeBase, clock: ManualClock) -> SessionEngine:
    return SessionEngine(seeded_kb, EngineConfig(), clock, TokenSource(run_seed=5))
