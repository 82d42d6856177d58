"""Knowledge base: four relational tables plus the two template stores.

The central guarantee is the storage partition: fingerprint templates live
only in per-device local stores, while PIN digests and face templates live
only in the cloud-side store.  ``store_template`` rejects any write that
would cross that line, and the persisted files keep the two sides in
physically separate locations so the guarantee can be audited on bytes.

Persistence is newline-delimited, tab-separated record files — one logical
file per table, human-inspectable and bit-exact (see ``docs/kb-schema.md``
for field orders).  A knowledge base without a root directory is the
in-memory mode used by tests.

Writes are serialized per knowledge base; the ``batch()`` context manager is
the all-or-nothing multi-record commit primitive the session engine uses to
keep a state transition and its audit entry atomic.
"""

from __future__ import annotations

import fcntl
import os
import threading
from dataclasses import replace
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Iterator

from .domain import (
    AuthMethod,
    BiometricTemplate,
    ClassifiedBy,
    DeviceBinding,
    DeviceType,
    Geolocation,
    GeoSource,
    LogEvent,
    Sensitivity,
    ServiceDefinition,
    StoreLocation,
    TemplateKind,
    TransactionRecord,
    UserLogEntry,
    UserRecord,
    UserStatus,
    format_timestamp,
    parse_timestamp,
)
from .errors import (
    AlreadyA2,
    IntegrityViolation,
    PartitionViolation,
    SensitivityDowngrade,
    TemplateNotFound,
    UnknownService,
    UnknownUser,
)

_TABLES = ("users", "services", "overlays", "transactions", "user_logs", "faces")

#: Which template kind is allowed on which side of the partition.
_ALLOWED_STORE = {
    TemplateKind.FINGERPRINT: StoreLocation.DEVICE,
    TemplateKind.FACE: StoreLocation.CLOUD,
}


def _opt(value: str | None) -> str:
    return "-" if value in (None, "") else str(value)


def _unopt(field: str) -> str | None:
    return None if field == "-" else field


class KnowledgeBase:
    def __init__(self, root: Path | str | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self._users: dict[str, UserRecord] = {}
        self._services: dict[str, ServiceDefinition] = {}
        self._overlays: dict[tuple[str, str], Sensitivity] = {}
        self._transactions: list[TransactionRecord] = []
        self._logs: list[UserLogEntry] = []
        # ref -> (location, owner user_id, template); the single registry that
        # knows where each persisted template lives.
        self._templates: dict[str, tuple[StoreLocation, str, BiometricTemplate]] = {}
        self._log_seq = 0
        self._tx_seq = 0
        self._tpl_seq = 0
        self._lock = threading.RLock()
        self._batch_depth = 0
        self._dirty: set[str] = set()

    # --- users ---------------------------------------------------------

    def upsert_user(self, record: UserRecord) -> None:
        with self._lock:
            if record.face_template_ref not in self._templates:
                raise IntegrityViolation(
                    f"face_template_ref {record.face_template_ref} does not resolve",
                    dangling="face_template_ref",
                )
            for binding in record.enrolled_devices:
                ref = binding.fingerprint_template_ref
                if ref is not None and ref not in self._templates:
                    raise IntegrityViolation(
                        f"fingerprint_template_ref {ref} does not resolve",
                        dangling="fingerprint_template_ref",
                    )
            self._users[record.user_id] = record
            self._mutated("users")

    def get_user(self, user_id: str) -> UserRecord:
        with self._lock:
            record = self._users.get(user_id)
            if record is None:
                raise UnknownUser(f"no user {user_id!r}")
            return record

    def has_user(self, user_id: str) -> bool:
        with self._lock:
            return user_id in self._users

    def lock_user(self, user_id: str) -> UserRecord:
        return self._set_user_status(user_id, UserStatus.LOCKED)

    def unlock_user(self, user_id: str) -> UserRecord:
        return self._set_user_status(user_id, UserStatus.ACTIVE)

    def _set_user_status(self, user_id: str, status: UserStatus) -> UserRecord:
        with self._lock:
            record = replace(self.get_user(user_id), status=status)
            self._users[user_id] = record
            self._mutated("users")
            return record

    # --- services and the per-user sensitivity overlay -------------------

    def upsert_service(self, service: ServiceDefinition) -> ServiceDefinition:
        """Insert or update a bank-level service classification.

        Sensitivity is monotone: once the bank classifies a service A2 it can
        never be re-classified A1.
        """
        if service.classified_by is not ClassifiedBy.BANK:
            raise ValueError("only bank-level classifications live in the services table")
        with self._lock:
            existing = self._services.get(service.service_id)
            if (
                existing is not None
                and existing.sensitivity is Sensitivity.A2
                and service.sensitivity is Sensitivity.A1
            ):
                raise SensitivityDowngrade(
                    f"service {service.service_id} is A2 and cannot be downgraded"
                )
            self._services[service.service_id] = service
            self._mutated("services")
            return service

    def get_service(self, service_id: str) -> ServiceDefinition:
        with self._lock:
            service = self._services.get(service_id)
            if service is None:
                raise UnknownService(f"no service {service_id!r}")
            return service

    def add_overlay(self, user_id: str, service_id: str) -> ServiceDefinition:
        """Record a user's upgrade of a service to A2 (their view only).

        There is deliberately no removal counterpart anywhere in the API.
        """
        with self._lock:
            self.get_user(user_id)
            if self.resolve_sensitivity(user_id, service_id) is Sensitivity.A2:
                raise AlreadyA2(f"service {service_id} already requires A2 for {user_id}")
            self._overlays[(user_id, service_id)] = Sensitivity.A2
            self._mutated("overlays")
            return self.view_service(user_id, service_id)

    def resolve_sensitivity(self, user_id: str, service_id: str) -> Sensitivity:
        """Effective sensitivity: max(bank classification, user overlay)."""
        with self._lock:
            self.get_user(user_id)
            bank = self.get_service(service_id).sensitivity
            overlay = self._overlays.get((user_id, service_id))
            if bank is Sensitivity.A2 or overlay is Sensitivity.A2:
                return Sensitivity.A2
            return Sensitivity.A1

    def view_service(self, user_id: str, service_id: str) -> ServiceDefinition:
        """The service as one user sees it, overlay applied."""
        with self._lock:
            service = self.get_service(service_id)
            if (user_id, service_id) in self._overlays and service.sensitivity is Sensitivity.A1:
                return replace(
                    service,
                    sensitivity=Sensitivity.A2,
                    classified_by=ClassifiedBy.USER,
                    owner_user_id=user_id,
                )
            return service

    def list_services(self, user_id: str | None = None) -> list[ServiceDefinition]:
        with self._lock:
            ids = sorted(self._services)
            if user_id is None:
                return [self._services[sid] for sid in ids]
            self.get_user(user_id)
            return [self.view_service(user_id, sid) for sid in ids]

    # --- template stores -------------------------------------------------

    def store_template(
        self, template: BiometricTemplate, owner: str, location: StoreLocation
    ) -> str:
        """Persist a template at the named store and return a stable ref.

        Rejects any placement that crosses the storage partition: fingerprints
        never reach the cloud, faces never land on a device.
        """
        if _ALLOWED_STORE[template.kind] != location.kind:
            raise PartitionViolation(
                f"{template.kind.value} templates may not be stored in {location.kind}"
            )
        with self._lock:
            self._tpl_seq += 1
            ref = f"tpl-{self._tpl_seq:06d}"
            self._templates[ref] = (location, owner, template)
            self._mutated("faces" if location.kind == StoreLocation.CLOUD else f"device:{location.device_id}")
            return ref

    def fetch_template(self, ref: str, location: StoreLocation) -> BiometricTemplate:
        with self._lock:
            entry = self._templates.get(ref)
            if entry is None:
                raise TemplateNotFound(f"no template {ref!r}")
            recorded, _owner, template = entry
            if recorded != location:
                raise PartitionViolation(
                    f"template {ref} lives in {recorded.kind}, not {location.kind}"
                )
            return template

    # --- user log (append-only) ------------------------------------------

    def append_log(self, entry: UserLogEntry) -> str:
        """Append an audit entry; the knowledge base assigns the entry id.

        The log is append-only: no update or delete API exists.
        """
        with self._lock:
            if entry.user_id not in self._users:
                raise UnknownUser(f"log entry references unknown user {entry.user_id!r}")
            self._log_seq += 1
            entry = replace(entry, entry_id=f"log-{self._log_seq:06d}")
            self._logs.append(entry)
            self._mutated("user_logs")
            return entry.entry_id

    def query_logs(
        self,
        user_id: str | None = None,
        session_id: str | None = None,
        event: LogEvent | None = None,
        since: datetime | None = None,
        until: datetime | None = None,
    ) -> list[UserLogEntry]:
        with self._lock:
            entries = [
                e
                for e in self._logs
                if (user_id is None or e.user_id == user_id)
                and (session_id is None or e.session_id == session_id)
                and (event is None or e.event is event)
                and (since is None or e.timestamp >= since)
                and (until is None or e.timestamp <= until)
            ]
        return sorted(entries, key=lambda e: (e.timestamp, e.entry_id))

    def log_count(self) -> int:
        with self._lock:
            return len(self._logs)

    # --- transactions ----------------------------------------------------

    def record_transaction(self, tx: TransactionRecord) -> str:
        """Durable insert; session ids are live-state and not checkable here."""
        with self._lock:
            if tx.user_id not in self._users:
                raise IntegrityViolation(f"unknown user {tx.user_id!r}", dangling="user_id")
            if tx.service_id not in self._services:
                raise IntegrityViolation(
                    f"unknown service {tx.service_id!r}", dangling="service_id"
                )
            self._tx_seq += 1
            tx = replace(tx, transaction_id=f"tx-{self._tx_seq:06d}")
            self._transactions.append(tx)
            self._mutated("transactions")
            return tx.transaction_id

    def list_transactions(self, user_id: str | None = None) -> list[TransactionRecord]:
        with self._lock:
            mine = [
                t for t in self._transactions if user_id is None or t.user_id == user_id
            ]
        return sorted(mine, key=lambda t: (t.executed_at, t.transaction_id))

    def get_transaction(self, transaction_id: str) -> TransactionRecord | None:
        with self._lock:
            for tx in self._transactions:
                if tx.transaction_id == transaction_id:
                    return tx
            return None

    # --- atomic multi-record commit ---------------------------------------

    @contextmanager
    def batch(self) -> Iterator[None]:
        """All-or-nothing commit: on exception every in-memory change made
        inside the block is rolled back and nothing is flushed to disk."""
        with self._lock:
            if self._batch_depth > 0:
                yield
                return
            snap = self._snapshot()
            self._batch_depth += 1
            try:
                yield
            except BaseException:
                self._restore(snap)
                self._dirty.clear()
                raise
            else:
                self._flush_dirty()
            finally:
                self._batch_depth -= 1

    def _snapshot(self) -> tuple:
        return (
            dict(self._users),
            dict(self._services),
            dict(self._overlays),
            list(self._transactions),
            list(self._logs),
            dict(self._templates),
            self._log_seq,
            self._tx_seq,
            self._tpl_seq,
        )

    def _restore(self, snap: tuple) -> None:
        # Copy on restore so one snapshot can be restored any number of times.
        users, services, overlays, transactions, logs, templates, *seqs = snap
        self._users = dict(users)
        self._services = dict(services)
        self._overlays = dict(overlays)
        self._transactions = list(transactions)
        self._logs = list(logs)
        self._templates = dict(templates)
        self._log_seq, self._tx_seq, self._tpl_seq = seqs

    def _mutated(self, table: str) -> None:
        self._dirty.add(table)
        if self._batch_depth == 0:
            self._flush_dirty()

    # --- persistence -------------------------------------------------------

    def _flush_dirty(self) -> None:
        if self.root is None:
            self._dirty.clear()
            return
        if not self._dirty:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / ".lock", "a") as lockf:
            fcntl.flock(lockf, fcntl.LOCK_EX)
            try:
                for table in sorted(self._dirty):
                    if table.startswith("device:"):
                        self._write_device_store(table.split(":", 1)[1])
                    else:
                        self._write_table(table)
            finally:
                fcntl.flock(lockf, fcntl.LOCK_UN)
        self._dirty.clear()

    def save(self) -> None:
        """Write every table; used after bulk loads and by the CLI."""
        if self.root is None:
            return
        self._dirty.update(_TABLES)
        for location, _owner, _tpl in self._templates.values():
            if location.kind == StoreLocation.DEVICE:
                self._dirty.add(f"device:{location.device_id}")
        self._flush_dirty()

    def _write_table(self, table: str) -> None:
        assert self.root is not None
        path = self.root / "kb" / f"{table}.tsv"
        path.parent.mkdir(parents=True, exist_ok=True)
        data = getattr(self, f"_serialize_{table}")()
        self._atomic_write(path, data)

    def _write_device_store(self, device_id: str) -> None:
        assert self.root is not None
        path = self.root / "devices" / device_id / "fingerprints.tsv"
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = []
        for ref in sorted(self._templates):
            location, owner, tpl = self._templates[ref]
            if location.kind == StoreLocation.DEVICE and location.device_id == device_id:
                rows.append(f"{ref}\t{owner}\t{tpl.kind.value}\t{tpl.to_hex()}\n")
        self._atomic_write(path, "".join(rows))

    @staticmethod
    def _atomic_write(path: Path, data: str) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(data, encoding="utf-8")
        os.replace(tmp, path)

    def _serialize_users(self) -> str:
        rows = []
        for uid in sorted(self._users):
            u = self._users[uid]
            devices = (
                ";".join(
                    f"{d.device_id}:{d.device_type.value}:{_opt(d.fingerprint_template_ref)}"
                    for d in u.enrolled_devices
                )
                or "-"
            )
            rows.append(
                f"{u.user_id}\t{u.full_name}\t{u.pin_digest}\t{u.pin_salt}"
                f"\t{u.face_template_ref}\t{u.status.value}\t{devices}\n"
            )
        return "".join(rows)

    def _serialize_services(self) -> str:
        return "".join(
            f"{s.service_id}\t{s.name}\t{s.sensitivity.value}\n"
            for s in (self._services[sid] for sid in sorted(self._services))
        )

    def _serialize_overlays(self) -> str:
        return "".join(
            f"{uid}\t{sid}\t{self._overlays[(uid, sid)].value}\n"
            for uid, sid in sorted(self._overlays)
        )

    def _serialize_transactions(self) -> str:
        return "".join(
            f"{t.transaction_id}\t{t.session_id}\t{t.user_id}\t{t.service_id}"
            f"\t{_opt(None if t.amount_minor is None else str(t.amount_minor))}"
            f"\t{format_timestamp(t.executed_at)}\t{t.required_level.value}\n"
            for t in self._transactions
        )

    def _serialize_user_logs(self) -> str:
        rows = []
        for e in self._logs:
            geo = e.geolocation
            lat = "-" if geo.latitude is None else repr(geo.latitude)
            lon = "-" if geo.longitude is None else repr(geo.longitude)
            rows.append(
                f"{e.entry_id}\t{e.session_id}\t{e.user_id}\t{e.event.value}"
                f"\t{e.device_type.value}\t{lat}\t{lon}\t{geo.source.value}"
                f"\t{e.auth_method_used.value}\t{format_timestamp(e.timestamp)}"
                f"\t{_opt(e.detail)}\n"
            )
        return "".join(rows)

    def _serialize_faces(self) -> str:
        rows = []
        for ref in sorted(self._templates):
            location, owner, tpl = self._templates[ref]
            if location.kind == StoreLocation.CLOUD:
                rows.append(f"{ref}\t{owner}\t{tpl.kind.value}\t{tpl.to_hex()}\n")
        return "".join(rows)

    def serialize_all(self) -> dict[str, str]:
        """Every persisted file as (relative path -> contents); the canonical
        byte representation used for equivalence and partition audits."""
        with self._lock:
            out = {f"kb/{t}.tsv": getattr(self, f"_serialize_{t}")() for t in _TABLES}
            device_ids = sorted(
                {
                    loc.device_id
                    for loc, _o, _t in self._templates.values()
                    if loc.kind == StoreLocation.DEVICE and loc.device_id is not None
                }
            )
            for device_id in device_ids:
                rows = []
                for ref in sorted(self._templates):
                    location, owner, tpl = self._templates[ref]
                    if location.kind == StoreLocation.DEVICE and location.device_id == device_id:
                        rows.append(f"{ref}\t{owner}\t{tpl.kind.value}\t{tpl.to_hex()}\n")
                out[f"devices/{device_id}/fingerprints.tsv"] = "".join(rows)
            return out

    # --- loading -----------------------------------------------------------

    @classmethod
    def load(cls, root: Path | str) -> "KnowledgeBase":
        kb = cls(root=root)
        kb._load_existing()
        return kb

    def _load_existing(self) -> None:
        assert self.root is not None
        kb_dir = self.root / "kb"

        def read_rows(path: Path) -> list[list[str]]:
            if not path.exists():
                return []
            rows = []
            for line in path.read_text(encoding="utf-8").splitlines():
                if line:
                    rows.append(line.split("\t"))
            return rows

        for ref, owner, kind, bits_hex in read_rows(kb_dir / "faces.tsv"):
            self._templates[ref] = (
                StoreLocation.cloud(),
                owner,
                BiometricTemplate.from_hex(bits_hex, TemplateKind(kind)),
            )
        devices_dir = self.root / "devices"
        if devices_dir.is_dir():
            for device_dir in sorted(devices_dir.iterdir()):
                for ref, owner, kind, bits_hex in read_rows(device_dir / "fingerprints.tsv"):
                    self._templates[ref] = (
                        StoreLocation.device(device_dir.name),
                        owner,
                        BiometricTemplate.from_hex(bits_hex, TemplateKind(kind)),
                    )

        for fields in read_rows(kb_dir / "users.tsv"):
            uid, full_name, digest, salt, face_ref, status, devices = fields
            bindings = []
            if devices != "-":
                for packed in devices.split(";"):
                    device_id, device_type, fp_ref = packed.split(":")
                    bindings.append(
                        DeviceBinding(
                            device_id=device_id,
                            device_type=DeviceType(device_type),
                            fingerprint_template_ref=_unopt(fp_ref),
                        )
                    )
            self._users[uid] = UserRecord(
                user_id=uid,
                full_name=full_name,
                pin_digest=digest,
                pin_salt=salt,
                face_template_ref=face_ref,
                enrolled_devices=tuple(bindings),
                status=UserStatus(status),
            )

        for sid, name, sensitivity in read_rows(kb_dir / "services.tsv"):
            self._services[sid] = ServiceDefinition(
                service_id=sid, name=name, sensitivity=Sensitivity(sensitivity)
            )

        for uid, sid, sensitivity in read_rows(kb_dir / "overlays.tsv"):
            self._overlays[(uid, sid)] = Sensitivity(sensitivity)

        for fields in read_rows(kb_dir / "transactions.tsv"):
            tx_id, session_id, uid, sid, amount, executed_at, level = fields
            self._transactions.append(
                TransactionRecord(
                    transaction_id=tx_id,
                    session_id=session_id,
                    user_id=uid,
                    service_id=sid,
                    amount_minor=None if amount == "-" else int(amount),
                    executed_at=parse_timestamp(executed_at),
                    required_level=Sensitivity(level),
                )
            )

        for fields in read_rows(kb_dir / "user_logs.tsv"):
            (entry_id, session_id, uid, event, device_type, lat, lon, source, method, ts, detail) = fields
            self._logs.append(
                UserLogEntry(
                    entry_id=entry_id,
                    session_id=session_id,
                    user_id=uid,
                    event=LogEvent(event),
                    device_type=DeviceType(device_type),
                    geolocation=Geolocation(
                        latitude=None if lat == "-" else float(lat),
                        longitude=None if lon == "-" else float(lon),
                        source=GeoSource(source),
                    ),
                    auth_method_used=AuthMethod(method),
                    timestamp=parse_timestamp(ts),
                    detail="" if detail == "-" else detail,
                )
            )

        self._log_seq = max((int(e.entry_id.split("-")[1]) for e in self._logs), default=0)
        self._tx_seq = max(
            (int(t.transaction_id.split("-")[1]) for t in self._transactions), default=0
        )
        self._tpl_seq = max((int(r.split("-")[1]) for r in self._templates), default=0)
