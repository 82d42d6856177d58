import random
from datetime import timedelta

import pytest

from bankgate import (
    AuthMethod,
    DeviceType,
    Geolocation,
    KnowledgeBase,
    LogEvent,
    Sensitivity,
    ServiceDefinition,
    StoreLocation,
    TemplateKind,
    TransactionRecord,
    UserLogEntry,
    generate_template,
)
from bankgate.domain import ClassifiedBy, GeoSource
from bankgate.errors import (
    AlreadyA2,
    IntegrityViolation,
    PartitionViolation,
    SensitivityDowngrade,
    TemplateNotFound,
    UnknownService,
    UnknownUser,
)

from conftest import ALICE, BOB, START

GEO = Geolocation(latitude=52.37, longitude=4.90, source=GeoSource.CLIENT_DECLARED)


def log_entry(user_id: str, session_id: str, event: LogEvent, at) -> UserLogEntry:
    return UserLogEntry(
        entry_id="pending",
        session_id=session_id,
        user_id=user_id,
        event=event,
        device_type=DeviceType.SMARTPHONE,
        geolocation=GEO,
        auth_method_used=AuthMethod.PIN,
        timestamp=at,
        detail="",
    )


def tx_record(user_id: str, service_id: str, at, amount=None) -> TransactionRecord:
    return TransactionRecord(
        transaction_id="pending",
        session_id="sess-x",
        user_id=user_id,
        service_id=service_id,
        executed_at=at,
        required_level=Sensitivity.A1,
        amount_minor=amount,
    )


class TestPartition:
    def test_fingerprint_rejected_from_cloud(self, seeded_kb):
        tpl = generate_template(1, TemplateKind.FINGERPRINT)
        with pytest.raises(PartitionViolation):
            seeded_kb.store_template(tpl, "alice", StoreLocation.cloud())

    def test_face_rejected_from_device(self, seeded_kb):
        tpl = generate_template(1, TemplateKind.FACE)
        with pytest.raises(PartitionViolation):
            seeded_kb.store_template(tpl, "alice", StoreLocation.device("phone-1"))

    def test_fetch_must_name_the_recorded_store(self, seeded_kb):
        tpl = generate_template(1, TemplateKind.FINGERPRINT)
        ref = seeded_kb.store_template(tpl, "alice", StoreLocation.device("phone-1"))
        assert seeded_kb.fetch_template(ref, StoreLocation.device("phone-1")) == tpl
        with pytest.raises(PartitionViolation):
            seeded_kb.fetch_template(ref, StoreLocation.cloud())
        with pytest.raises(PartitionViolation):
            seeded_kb.fetch_template(ref, StoreLocation.device("desk-1"))

    def test_fetch_unknown_ref(self, seeded_kb):
        with pytest.raises(TemplateNotFound):
            seeded_kb.fetch_template("tpl-999999", StoreLocation.cloud())

    def test_serialized_bytes_respect_partition(self, seeded_kb):
        files = seeded_kb.serialize_all()
        device_files = [p for p in files if p.startswith("devices/")]
        assert device_files, "enrollment should have produced device stores"
        # kind column audit on every template row
        for path, body in files.items():
            for line in body.splitlines():
                if path == "kb/faces.tsv":
                    assert line.split("\t")[2] == TemplateKind.FACE.value
                elif path.endswith("fingerprints.tsv"):
                    assert line.split("\t")[2] == TemplateKind.FINGERPRINT.value
        # raw bits audit: no fingerprint hex anywhere under kb/, and vice versa
        fp_hexes = [
            tpl.to_hex()
            for loc, _o, tpl in seeded_kb._templates.values()
            if loc.kind == StoreLocation.DEVICE
        ]
        face_hexes = [
            tpl.to_hex()
            for loc, _o, tpl in seeded_kb._templates.values()
            if loc.kind == StoreLocation.CLOUD
        ]
        assert fp_hexes and face_hexes
        cloud_bytes = "".join(body for p, body in files.items() if p.startswith("kb/"))
        device_bytes = "".join(body for p, body in files.items() if p.startswith("devices/"))
        for h in fp_hexes:
            assert h not in cloud_bytes
        for h in face_hexes:
            assert h not in device_bytes

    def test_raw_pin_never_serialized(self, seeded_kb):
        everything = "".join(seeded_kb.serialize_all().values())
        assert ALICE.pin not in everything
        assert BOB.pin not in everything


class TestServices:
    def test_roundtrip(self, seeded_kb):
        svc = seeded_kb.get_service("balance")
        assert svc.name == "Balance enquiry"
        assert svc.sensitivity is Sensitivity.A1

    def test_unknown_service(self, seeded_kb):
        with pytest.raises(UnknownService):
            seeded_kb.get_service("nope")

    def test_bank_upgrade_allowed(self, seeded_kb):
        seeded_kb.upsert_service(ServiceDefinition("billpay", "Bill payment", Sensitivity.A2))
        assert seeded_kb.get_service("billpay").sensitivity is Sensitivity.A2

    def test_bank_downgrade_rejected(self, seeded_kb):
        with pytest.raises(SensitivityDowngrade):
            seeded_kb.upsert_service(ServiceDefinition("transfer", "Funds transfer", Sensitivity.A1))

    def test_same_level_reupsert_allowed(self, seeded_kb):
        seeded_kb.upsert_service(ServiceDefinition("transfer", "Wire transfer", Sensitivity.A2))
        assert seeded_kb.get_service("transfer").name == "Wire transfer"

    def test_user_classification_rejected_in_bank_table(self, seeded_kb):
        user_level = ServiceDefinition(
            "extra", "Extra", Sensitivity.A2, classified_by=ClassifiedBy.USER, owner_user_id="alice"
        )
        with pytest.raises(ValueError):
            seeded_kb.upsert_service(user_level)


class TestOverlays:
    def test_overlay_upgrades_own_view(self, seeded_kb):
        view = seeded_kb.add_overlay("alice", "billpay")
        assert view.sensitivity is Sensitivity.A2
        assert view.classified_by is ClassifiedBy.USER
        assert view.owner_user_id == "alice"

    def test_overlay_does_not_leak_to_other_users(self, seeded_kb):
        seeded_kb.add_overlay("alice", "billpay")
        assert seeded_kb.view_service("bob", "billpay").sensitivity is Sensitivity.A1
        assert seeded_kb.resolve_sensitivity("bob", "billpay") is Sensitivity.A1

    def test_resolve_is_max_of_bank_and_overlay(self, seeded_kb):
        assert seeded_kb.resolve_sensitivity("alice", "balance") is Sensitivity.A1
        assert seeded_kb.resolve_sensitivity("alice", "transfer") is Sensitivity.A2
        seeded_kb.add_overlay("alice", "balance")
        assert seeded_kb.resolve_sensitivity("alice", "balance") is Sensitivity.A2

    def test_overlay_on_bank_a2_rejected(self, seeded_kb):
        with pytest.raises(AlreadyA2):
            seeded_kb.add_overlay("alice", "transfer")

    def test_double_overlay_rejected(self, seeded_kb):
        seeded_kb.add_overlay("alice", "billpay")
        with pytest.raises(AlreadyA2):
            seeded_kb.add_overlay("alice", "billpay")

    def test_overlay_requires_known_user_and_service(self, seeded_kb):
        with pytest.raises(UnknownUser):
            seeded_kb.add_overlay("mallory", "billpay")
        with pytest.raises(UnknownService):
            seeded_kb.add_overlay("alice", "nope")

    def test_bank_upgrade_then_overlay_still_a2(self, seeded_kb):
        seeded_kb.add_overlay("alice", "billpay")
        seeded_kb.upsert_service(ServiceDefinition("billpay", "Bill payment", Sensitivity.A2))
        assert seeded_kb.resolve_sensitivity("alice", "billpay") is Sensitivity.A2

    def test_list_services_applies_viewers_overlays(self, seeded_kb):
        seeded_kb.add_overlay("alice", "billpay")
        by_id = {s.service_id: s for s in seeded_kb.list_services("alice")}
        assert by_id["billpay"].sensitivity is Sensitivity.A2
        by_id = {s.service_id: s for s in seeded_kb.list_services("bob")}
        assert by_id["billpay"].sensitivity is Sensitivity.A1


class TestUserLog:
    def test_ids_assigned_sequentially(self, seeded_kb):
        first = seeded_kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
        second = seeded_kb.append_log(log_entry("bob", "s2", LogEvent.LOGOUT, START))
        n = int(first.split("-")[1])
        assert second == f"log-{n + 1:06d}"

    def test_unknown_user_rejected(self, seeded_kb):
        with pytest.raises(UnknownUser):
            seeded_kb.append_log(log_entry("mallory", "s1", LogEvent.A1_GRANTED, START))

    def test_query_order_matches_sort_oracle(self, seeded_kb):
        rng = random.Random(13)
        offsets = list(range(40))
        rng.shuffle(offsets)
        for off in offsets:
            seeded_kb.append_log(
                log_entry("alice", f"s{off % 3}", LogEvent.A1_GRANTED, START + timedelta(seconds=off))
            )
        got = seeded_kb.query_logs(user_id="alice")
        oracle = sorted(got, key=lambda e: (e.timestamp, e.entry_id))
        assert got == oracle
        assert [e.timestamp for e in got] == [
            START + timedelta(seconds=i) for i in range(40)
        ]

    def test_equal_timestamps_fall_back_to_entry_id(self, seeded_kb):
        ids = [
            seeded_kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
            for _ in range(5)
        ]
        assert [e.entry_id for e in seeded_kb.query_logs(user_id="alice")] == ids

    def test_filters(self, seeded_kb):
        seeded_kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
        seeded_kb.append_log(log_entry("alice", "s1", LogEvent.LOGOUT, START + timedelta(seconds=5)))
        seeded_kb.append_log(log_entry("bob", "s2", LogEvent.A1_GRANTED, START + timedelta(seconds=9)))
        assert len(seeded_kb.query_logs(user_id="alice")) == 2
        assert len(seeded_kb.query_logs(session_id="s2")) == 1
        assert len(seeded_kb.query_logs(event=LogEvent.A1_GRANTED)) == 2
        # since/until are inclusive bounds
        assert len(seeded_kb.query_logs(since=START + timedelta(seconds=5))) == 2
        assert len(seeded_kb.query_logs(until=START + timedelta(seconds=5))) == 2


class TestTransactions:
    def test_ids_assigned_sequentially(self, seeded_kb):
        a = seeded_kb.record_transaction(tx_record("alice", "balance", START))
        b = seeded_kb.record_transaction(tx_record("bob", "billpay", START))
        assert a == "tx-000001" and b == "tx-000002"

    def test_integrity_violations_name_the_dangling_field(self, seeded_kb):
        with pytest.raises(IntegrityViolation) as err:
            seeded_kb.record_transaction(tx_record("mallory", "balance", START))
        assert err.value.context["dangling"] == "user_id"
        with pytest.raises(IntegrityViolation) as err:
            seeded_kb.record_transaction(tx_record("alice", "nope", START))
        assert err.value.context["dangling"] == "service_id"

    def test_list_filter_and_order(self, seeded_kb):
        seeded_kb.record_transaction(tx_record("alice", "balance", START + timedelta(seconds=2)))
        seeded_kb.record_transaction(tx_record("bob", "billpay", START))
        seeded_kb.record_transaction(tx_record("alice", "billpay", START + timedelta(seconds=1)))
        mine = seeded_kb.list_transactions("alice")
        assert [t.service_id for t in mine] == ["billpay", "balance"]
        assert len(seeded_kb.list_transactions()) == 3

    def test_get_transaction(self, seeded_kb):
        tx_id = seeded_kb.record_transaction(tx_record("alice", "balance", START, amount=1500))
        assert seeded_kb.get_transaction(tx_id).amount_minor == 1500
        assert seeded_kb.get_transaction("tx-999999") is None


class TestBatch:
    def test_rollback_restores_records_and_counters(self, seeded_kb):
        before = seeded_kb.serialize_all()
        with pytest.raises(RuntimeError):
            with seeded_kb.batch():
                seeded_kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
                seeded_kb.record_transaction(tx_record("alice", "balance", START))
                seeded_kb.add_overlay("alice", "billpay")
                raise RuntimeError("abort")
        assert seeded_kb.serialize_all() == before
        # counters rolled back too: the next ids do not skip
        assert seeded_kb.record_transaction(tx_record("alice", "balance", START)) == "tx-000001"

    def test_success_commits_everything(self, seeded_kb):
        with seeded_kb.batch():
            seeded_kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
            seeded_kb.record_transaction(tx_record("alice", "balance", START))
        assert seeded_kb.log_count() == 1
        assert len(seeded_kb.list_transactions("alice")) == 1

    def test_nested_batch_is_one_unit(self, seeded_kb):
        before = seeded_kb.serialize_all()
        with pytest.raises(RuntimeError):
            with seeded_kb.batch():
                seeded_kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
                with seeded_kb.batch():
                    seeded_kb.record_transaction(tx_record("alice", "balance", START))
                raise RuntimeError("abort")
        assert seeded_kb.serialize_all() == before

    def test_failed_batch_writes_nothing_to_disk(self, tmp_path):
        kb = KnowledgeBase(root=tmp_path / "store")
        from bankgate import enroll_user

        enroll_user(kb, ALICE)
        kb.upsert_service(ServiceDefinition("balance", "Balance enquiry", Sensitivity.A1))
        on_disk = {p: p.read_bytes() for p in (tmp_path / "store").rglob("*.tsv")}
        with pytest.raises(RuntimeError):
            with kb.batch():
                kb.record_transaction(tx_record("alice", "balance", START))
                raise RuntimeError("abort")
        assert {p: p.read_bytes() for p in (tmp_path / "store").rglob("*.tsv")} == on_disk


class TestPersistence:
    def seeded_disk_kb(self, root) -> KnowledgeBase:
        from bankgate import enroll_user

        kb = KnowledgeBase(root=root)
        enroll_user(kb, ALICE)
        enroll_user(kb, BOB)
        kb.upsert_service(ServiceDefinition("balance", "Balance enquiry", Sensitivity.A1))
        kb.upsert_service(ServiceDefinition("transfer", "Funds transfer", Sensitivity.A2))
        kb.add_overlay("alice", "balance")
        kb.append_log(log_entry("alice", "s1", LogEvent.A1_GRANTED, START))
        kb.record_transaction(tx_record("alice", "balance", START, amount=250))
        kb.record_transaction(tx_record("bob", "transfer", START))  # amount stays optional
        return kb

    def test_roundtrip_is_byte_identical(self, tmp_path):
        original = self.seeded_disk_kb(tmp_path / "store")
        reloaded = KnowledgeBase.load(tmp_path / "store")
        assert reloaded.serialize_all() == original.serialize_all()

    def test_counters_survive_reload(self, tmp_path):
        original = self.seeded_disk_kb(tmp_path / "store")
        reloaded = KnowledgeBase.load(tmp_path / "store")
        next_log = reloaded.append_log(log_entry("alice", "s9", LogEvent.LOGOUT, START))
        next_tx = reloaded.record_transaction(tx_record("alice", "balance", START))
        assert int(next_log.split("-")[1]) == original.log_count() + 1
        assert next_tx == "tx-000003"

    def test_mutations_flush_immediately_outside_batches(self, tmp_path):
        kb = self.seeded_disk_kb(tmp_path / "store")
        logs_file = tmp_path / "store" / "kb" / "user_logs.tsv"
        before = logs_file.read_text()
        kb.append_log(log_entry("bob", "s2", LogEvent.A1_DENIED, START))
        after = logs_file.read_text()
        assert after != before and after.startswith(before)

    def test_no_temp_files_left_behind(self, tmp_path):
        self.seeded_disk_kb(tmp_path / "store")
        leftovers = [p for p in (tmp_path / "store").rglob("*") if p.suffix == ".tmp"]
        assert leftovers == []

    def test_files_match_serialize_all(self, tmp_path):
        kb = self.seeded_disk_kb(tmp_path / "store")
        kb.save()
        for rel, body in kb.serialize_all().items():
            assert (tmp_path / "store" / rel).read_text(encoding="utf-8") == body

    def test_in_memory_kb_never_touches_disk(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        kb = KnowledgeBase()
        from bankgate import enroll_user

        enroll_user(kb, ALICE)
        kb.save()
        assert list(tmp_path.iterdir()) == []
