"""Credential verifiers and the simulated biometric model.

Real sensing and recognition are out of scope; a capture is modelled as the
enrolled 256-bit template with each bit independently flipped with
probability ``noise_rate``, and matching is normalized Hamming distance with
an inclusive threshold.  That model is deliberately simple: both error rates
have exact binomial oracles, so the evaluator below can be checked against
closed-form tails instead of hand-waved accuracy claims.

Every function here is a pure function of its arguments (seeds included).
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

import numpy as np

from .domain import TEMPLATE_BITS, TEMPLATE_BYTES, BiometricTemplate, TemplateKind, UserRecord, UserStatus
from .errors import (
    InvalidNoiseRate,
    InvalidThreshold,
    KindMismatch,
    LengthMismatch,
    MalformedPin,
    UserLocked,
)
from .rng import MASK64, SplitMix64, derive_seed

#: One-way digest applied to salt||pin.  Recorded here (and surfaced in the
#: gateway config reference) because tests depend only on determinism and
#: avalanche, not on the named algorithm.
PIN_DIGEST_ALGORITHM = "sha256"

PIN_MIN_DIGITS = 4
PIN_MAX_DIGITS = 8

MIN_SALT_BYTES = 16

#: Default inclusive match thresholds.  Face capture is modelled as noisier
#: than fingerprint capture, hence the wider acceptance band; at capture
#: noise 0.1 both binomial error tails are below 1e-10.
DEFAULT_FP_THRESHOLD = 0.25
DEFAULT_FR_THRESHOLD = 0.30

#: Default bit-flip probability for simulated clients: comfortably inside the
#: genuine-accept region while nonzero.
DEFAULT_CAPTURE_NOISE = 0.1


@dataclass(frozen=True)
class MatchResult:
    distance: float
    threshold: float
    matched: bool

    def __post_init__(self) -> None:
        if self.matched != (self.distance <= self.threshold):
            raise ValueError("matched flag inconsistent with distance/threshold")


@dataclass(frozen=True)
class ErrorRates:
    far: float
    frr: float
    trials: int
    threshold: float
    noise_rate: float


def hash_pin(pin: str, salt: bytes) -> str:
    """Salted one-way digest of a PIN; the raw PIN never persists anywhere."""
    if not pin.isascii() or not pin.isdigit() or not PIN_MIN_DIGITS <= len(pin) <= PIN_MAX_DIGITS:
        raise MalformedPin(f"PIN must be {PIN_MIN_DIGITS}-{PIN_MAX_DIGITS} ASCII digits")
    if len(salt) < MIN_SALT_BYTES:
        raise ValueError(f"salt must be at least {MIN_SALT_BYTES} bytes")
    digest = hashlib.new(PIN_DIGEST_ALGORITHM)
    digest.update(salt)
    digest.update(pin.encode("ascii"))
    return digest.hexdigest()


def verify_pin(candidate: str, record: UserRecord) -> bool:
    """Compare a candidate PIN against the stored digest, constant-time."""
    if record.status is UserStatus.LOCKED:
        raise UserLocked(f"user {record.user_id} is locked")
    computed = hash_pin(candidate, bytes.fromhex(record.pin_salt))
    return hmac.compare_digest(computed, record.pin_digest)


def generate_template(seed: int, kind: TemplateKind) -> BiometricTemplate:
    """Deterministic pseudo-random template: 256 uniform independent bits."""
    gen = SplitMix64(seed)
    return BiometricTemplate(bits=gen.next_bytes(TEMPLATE_BYTES), kind=kind)


def flip_threshold(noise_rate: float) -> int:
    """64-bit integer threshold u < T realising per-bit flip probability.

    ``int(noise_rate * 2**64)`` is computed in IEEE double precision in every
    language the simulation runs in, so captures are bit-identical across the
    Python engine and the browser portal.
    """
    if not 0.0 <= noise_rate <= 0.5:
        raise InvalidNoiseRate(f"noise rate {noise_rate} outside [0, 0.5]")
    return int(noise_rate * 2.0**64)


def capture_sample(enrolled: BiometricTemplate, noise_rate: float, seed: int) -> BiometricTemplate:
    """Simulated noisy reading of an enrolled template.

    Bit i flips iff the (i+1)-th output of ``SplitMix64(seed)`` is below the
    flip threshold; deterministic for fixed (enrolled, noise_rate, seed).
    """
    threshold = flip_threshold(noise_rate)
    bits = bytearray(enrolled.bits)
    gen = SplitMix64(seed)
    for i in range(TEMPLATE_BITS):
        if gen.next_u64() < threshold:
            bits[i // 8] ^= 1 << (7 - i % 8)
    return BiometricTemplate(bits=bytes(bits), kind=enrolled.kind)


def match_templates(
    probe: BiometricTemplate, enrolled: BiometricTemplate, threshold: float
) -> MatchResult:
    """Normalized Hamming distance with inclusive threshold."""
    if probe.kind is not enrolled.kind:
        raise KindMismatch(f"cannot match {probe.kind.value} against {enrolled.kind.value}")
    if len(probe.bits) != len(enrolled.bits):
        raise LengthMismatch("templates differ in length")
    xor = int.from_bytes(probe.bits, "big") ^ int.from_bytes(enrolled.bits, "big")
    distance = xor.bit_count() / TEMPLATE_BITS
    return MatchResult(distance=distance, threshold=threshold, matched=distance <= threshold)


# --- FAR/FRR evaluation -----------------------------------------------------
#
# Trial schedule (fixed, so an independent re-implementation can enumerate
# the identical trials):
#
#   enrolled[k]      = generate_template(derive_seed(seed, f"enroll:{k}"), fingerprint)
#   genuine trial i  : subject a = i % n
#                      probe = capture_sample(enrolled[a], p, derive_seed(seed, f"genuine:{i}"))
#                      counts toward FRR when match against enrolled[a] fails
#   impostor trial i : a = i % n,  b = (a + 1 + (i // n) % (n - 1)) % n
#                      probe = capture_sample(enrolled[a], p, derive_seed(seed, f"impostor:{i}"))
#                      counts toward FAR when match against enrolled[b] succeeds

_GOLDEN_NP = np.uint64(0x9E3779B97F4A7C15)
_MIX1_NP = np.uint64(0xBF58476D1CE4E5B9)
_MIX2_NP = np.uint64(0x94D049BB133111EB)


def _mix64_np(state: np.ndarray) -> np.ndarray:
    z = (state ^ (state >> np.uint64(30))) * _MIX1_NP
    z = (z ^ (z >> np.uint64(27))) * _MIX2_NP
    return z ^ (z >> np.uint64(31))


def _flip_matrix(stream_seeds: np.ndarray, threshold: int) -> np.ndarray:
    """Per-trial flip masks, one row of 256 bits per stream seed.

    Row j column i equals 1 iff the (i+1)-th SplitMix64 output of stream j is
    below the flip threshold — bit-exact with :func:`capture_sample`.
    """
    positions = np.arange(1, TEMPLATE_BITS + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = stream_seeds[:, None] + positions[None, :] * _GOLDEN_NP
        draws = _mix64_np(states)
    return (draws < np.uint64(threshold)).astype(np.uint8)


def evaluate_error_rates(
    population_size: int,
    noise_rate: float,
    threshold: float,
    trials: int,
    seed: int,
) -> ErrorRates:
    """Measure FAR and FRR of the simulated matcher over a seeded population.

    FRR is the fraction of genuine trials (noisy capture of a subject's own
    enrolled template) that fail to match; FAR is the fraction of impostor
    trials (capture of user a matched against user b != a) that succeed.
    Fully deterministic for a fixed seed.
    """
    if population_size < 2:
        raise ValueError("population_size must be at least 2")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidThreshold(f"threshold {threshold} outside [0, 1]")
    flip_t = flip_threshold(noise_rate)

    enrolled = np.zeros((population_size, TEMPLATE_BITS), dtype=np.uint8)
    for k in range(population_size):
        tpl = generate_template(derive_seed(seed, f"enroll:{k}"), TemplateKind.FINGERPRINT)
        enrolled[k] = np.unpackbits(np.frombuffer(tpl.bits, dtype=np.uint8))

    idx = np.arange(trials)
    subjects = idx % population_size

    genuine_seeds = np.array(
        [derive_seed(seed, f"genuine:{i}") for i in range(trials)], dtype=np.uint64
    )
    genuine_flips = _flip_matrix(genuine_seeds, flip_t)
    genuine_probes = enrolled[subjects] ^ genuine_flips
    genuine_dist = (genuine_probes != enrolled[subjects]).sum(axis=1) / TEMPLATE_BITS
    frr = int((genuine_dist > threshold).sum()) / trials

    impostors = (subjects + 1 + (idx // population_size) % (population_size - 1)) % population_size
    impostor_seeds = np.array(
        [derive_seed(seed, f"impostor:{i}") for i in range(trials)], dtype=np.uint64
    )
    impostor_flips = _flip_matrix(impostor_seeds, flip_t)
    impostor_probes = enrolled[subjects] ^ impostor_flips
    impostor_dist = (impostor_probes != enrolled[impostors]).sum(axis=1) / TEMPLATE_BITS
    far = int((impostor_dist <= threshold).sum()) / trials

    return ErrorRates(
        far=far, frr=frr, trials=trials, threshold=threshold, noise_rate=noise_rate
    )
