"""User enrollment: PIN salt+digest, face template to the cloud store,
fingerprint templates to each capable device's local store.

Everything derives from the enrollment spec's ``template_seed`` so that a
client holding the same seed can reproduce the enrolled templates and log in
with a zero-noise probe.  Derivation rules (also reimplemented by the portal):

    salt                  = first 16 bytes of SplitMix64(seed XOR fnv1a64("pin-salt"))
    face template         = generate_template(seed XOR fnv1a64("face"))
    fingerprint, device d = generate_template(seed XOR fnv1a64("fp:" + d))
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .authenticators import generate_template, hash_pin
from .domain import (
    FINGERPRINT_CAPABLE,
    BiometricTemplate,
    DeviceBinding,
    DeviceType,
    StoreLocation,
    TemplateKind,
    UserRecord,
    validate_identifier,
)
from .errors import DuplicateUser
from .kb import KnowledgeBase
from .rng import SplitMix64, derive_seed

SALT_BYTES = 16


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    device_type: DeviceType


@dataclass(frozen=True)
class EnrollmentSpec:
    user_id: str
    full_name: str
    pin: str  # consumed during enrollment, never stored raw
    template_seed: int
    devices: tuple[DeviceSpec, ...] = ()


@dataclass(frozen=True)
class EnrollmentSummary:
    user_id: str
    face_template_ref: str
    fingerprint_refs: dict[str, str] = field(default_factory=dict)  # device_id -> ref


def derive_salt(template_seed: int) -> bytes:
    return SplitMix64(derive_seed(template_seed, "pin-salt")).next_bytes(SALT_BYTES)


def enrolled_face(template_seed: int) -> BiometricTemplate:
    return generate_template(derive_seed(template_seed, "face"), TemplateKind.FACE)


def enrolled_fingerprint(template_seed: int, device_id: str) -> BiometricTemplate:
    return generate_template(
        derive_seed(template_seed, f"fp:{device_id}"), TemplateKind.FINGERPRINT
    )


def enroll_user(kb: KnowledgeBase, spec: EnrollmentSpec) -> EnrollmentSummary:
    """Create the user row and its template records in one atomic commit.

    Fingerprint templates are generated only for smartphone/tablet devices;
    desktop and laptop bindings carry no fingerprint credential.
    """
    validate_identifier(spec.user_id, "user_id")
    if kb.has_user(spec.user_id):
        raise DuplicateUser(f"user {spec.user_id!r} is already enrolled")

    salt = derive_salt(spec.template_seed)
    digest = hash_pin(spec.pin, salt)

    with kb.batch():
        face_ref = kb.store_template(
            enrolled_face(spec.template_seed), spec.user_id, StoreLocation.cloud()
        )
        bindings: list[DeviceBinding] = []
        fingerprint_refs: dict[str, str] = {}
        for device in spec.devices:
            if device.device_type in FINGERPRINT_CAPABLE:
                ref = kb.store_template(
                    enrolled_fingerprint(spec.template_seed, device.device_id),
                    spec.user_id,
                    StoreLocation.device(device.device_id),
                )
                fingerprint_refs[device.device_id] = ref
                bindings.append(
                    DeviceBinding(device.device_id, device.device_type, ref)
                )
            else:
                bindings.append(DeviceBinding(device.device_id, device.device_type))
        kb.upsert_user(
            UserRecord(
                user_id=spec.user_id,
                full_name=spec.full_name,
                pin_digest=digest,
                pin_salt=salt.hex(),
                face_template_ref=face_ref,
                enrolled_devices=tuple(bindings),
            )
        )
    return EnrollmentSummary(
        user_id=spec.user_id,
        face_template_ref=face_ref,
        fingerprint_refs=fingerprint_refs,
    )
