import math
from fractions import Fraction

import pytest

from bankgate import (
    BiometricTemplate,
    TemplateKind,
    UserRecord,
    capture_sample,
    evaluate_error_rates,
    generate_template,
    hash_pin,
    match_templates,
    verify_pin,
)
from bankgate.authenticators import (
    DEFAULT_FP_THRESHOLD,
    DEFAULT_FR_THRESHOLD,
    flip_threshold,
)
from bankgate.domain import UserStatus
from bankgate.errors import (
    InvalidNoiseRate,
    InvalidThreshold,
    KindMismatch,
    MalformedPin,
    UserLocked,
)
from bankgate.rng import derive_seed

SALT = bytes(range(16))


def binom_le(n: int, k: int, p: Fraction) -> Fraction:
    """Exact P(Bin(n, p) <= k)."""
    q = 1 - p
    return sum(Fraction(math.comb(n, j)) * p**j * q ** (n - j) for j in range(k + 1))


def make_user(pin: str, status: UserStatus = UserStatus.ACTIVE) -> UserRecord:
    return UserRecord(
        user_id="u1",
        full_name="Unit User",
        pin_digest=hash_pin(pin, SALT),
        pin_salt=SALT.hex(),
        face_template_ref="tpl-000001",
        status=status,
    )


class TestPinHashing:
    def test_deterministic(self):
        assert hash_pin("4821", SALT) == hash_pin("4821", SALT)

    def test_salt_changes_digest(self):
        assert hash_pin("4821", SALT) != hash_pin("4821", bytes(range(1, 17)))

    def test_single_digit_change_changes_digest(self):
        assert hash_pin("4821", SALT) != hash_pin("4822", SALT)

    def test_digest_never_contains_pin(self):
        digest = hash_pin("48213765", SALT)
        assert "48213765" not in digest

    @pytest.mark.parametrize("bad", ["123", "123456789", "12a4", "12 34", "", "١٢٣٤", "12.4"])
    def test_malformed_pins_rejected(self, bad):
        with pytest.raises(MalformedPin):
            hash_pin(bad, SALT)

    @pytest.mark.parametrize("good", ["1234", "0000", "12345678"])
    def test_length_bounds_inclusive(self, good):
        assert len(hash_pin(good, SALT)) == 64

    def test_short_salt_rejected(self):
        with pytest.raises(ValueError):
            hash_pin("1234", b"\x00" * 15)

    def test_verify_roundtrip(self):
        record = make_user("4821")
        assert verify_pin("4821", record) is True
        assert verify_pin("4822", record) is False

    def test_verify_locked_user_raises(self):
        record = make_user("4821", status=UserStatus.LOCKED)
        with pytest.raises(UserLocked):
            verify_pin("4821", record)


class TestTemplates:
    def test_generation_deterministic(self):
        a = generate_template(42, TemplateKind.FACE)
        b = generate_template(42, TemplateKind.FACE)
        assert a == b

    def test_different_seeds_differ(self):
        assert generate_template(1, TemplateKind.FACE) != generate_template(2, TemplateKind.FACE)

    def test_zero_noise_capture_is_identity(self):
        tpl = generate_template(7, TemplateKind.FINGERPRINT)
        assert capture_sample(tpl, 0.0, seed=123) == tpl

    def test_capture_deterministic(self):
        tpl = generate_template(7, TemplateKind.FACE)
        assert capture_sample(tpl, 0.1, seed=5) == capture_sample(tpl, 0.1, seed=5)

    def test_capture_noise_rate_bounds(self):
        tpl = generate_template(7, TemplateKind.FACE)
        with pytest.raises(InvalidNoiseRate):
            capture_sample(tpl, -0.01, seed=1)
        with pytest.raises(InvalidNoiseRate):
            capture_sample(tpl, 0.51, seed=1)

    def test_flip_threshold_exact_values(self):
        # int(p * 2**64) in doubles is exact for these representable rates
        for rate in (0.0, 0.1, 0.25, 0.5):
            assert flip_threshold(rate) == int(Fraction(rate) * 2**64)

    def test_capture_distance_near_noise_rate(self):
        # Per-trial bound: P(distance outside [0.04, 0.16] | p = 0.1) < 0.003,
        # so these fixed seeds sit inside the window unless the sampler is wrong.
        tail = 1 - (binom_le(256, 41, Fraction(1, 10)) - binom_le(256, 9, Fraction(1, 10)))
        assert tail < Fraction(3, 1000)
        tpl = generate_template(11, TemplateKind.FACE)
        for seed in range(20, 30):
            noisy = capture_sample(tpl, 0.1, seed=seed)
            d = match_templates(noisy, tpl, 1.0).distance
            assert 0.04 <= d <= 0.16


class TestMatching:
    def test_identity_distance_zero(self):
        tpl = generate_template(3, TemplateKind.FACE)
        result = match_templates(tpl, tpl, DEFAULT_FR_THRESHOLD)
        assert result.distance == 0.0 and result.matched

    def test_complement_distance_one(self):
        tpl = generate_template(3, TemplateKind.FACE)
        result = match_templates(tpl.complement(), tpl, DEFAULT_FR_THRESHOLD)
        assert result.distance == 1.0 and not result.matched

    def test_threshold_is_inclusive(self):
        tpl = generate_template(9, TemplateKind.FINGERPRINT)
        # flip exactly the first 64 bits: distance 64/256 = threshold
        at = BiometricTemplate(
            bytes(b ^ 0xFF for b in tpl.bits[:8]) + tpl.bits[8:], tpl.kind
        )
        assert match_templates(at, tpl, 0.25).matched
        # one more flipped bit pushes it just over
        over = BiometricTemplate(
            at.bits[:8] + bytes([at.bits[8] ^ 0x80]) + at.bits[9:], tpl.kind
        )
        result = match_templates(over, tpl, 0.25)
        assert result.distance == 65 / 256 and not result.matched

    def test_kind_mismatch_rejected(self):
        face = generate_template(1, TemplateKind.FACE)
        finger = generate_template(1, TemplateKind.FINGERPRINT)
        with pytest.raises(KindMismatch):
            match_templates(face, finger, 0.25)

    def test_symmetry_over_seeded_pairs(self):
        for seed in range(1000):
            a = generate_template(seed, TemplateKind.FACE)
            b = generate_template(seed + 100_000, TemplateKind.FACE)
            assert (
                match_templates(a, b, 0.5).distance
                == match_templates(b, a, 0.5).distance
            )

    def test_triangle_inequality_over_seeded_triples(self):
        for seed in range(1000):
            a = generate_template(3 * seed, TemplateKind.FACE)
            b = generate_template(3 * seed + 1, TemplateKind.FACE)
            c = generate_template(3 * seed + 2, TemplateKind.FACE)
            ab = match_templates(a, b, 1.0).distance
            bc = match_templates(b, c, 1.0).distance
            ac = match_templates(a, c, 1.0).distance
            assert ac <= ab + bc + 1e-12

    def test_matched_monotone_in_threshold(self):
        a = generate_template(77, TemplateKind.FACE)
        b = capture_sample(a, 0.3, seed=5)
        previous = False
        for tau in [i / 64 for i in range(65)]:
            matched = match_templates(b, a, tau).matched
            assert matched >= previous  # once matched, stays matched
            previous = matched

    def test_impostor_distance_near_half(self):
        # Per-pair bound: P(distance outside [0.40, 0.60]) < 0.002 for
        # independent uniform templates.
        tail = 1 - (binom_le(256, 153, Fraction(1, 2)) - binom_le(256, 102, Fraction(1, 2)))
        assert tail < Fraction(2, 1000)
        for seed in range(10):
            a = generate_template(seed, TemplateKind.FINGERPRINT)
            b = generate_template(seed + 55_000, TemplateKind.FINGERPRINT)
            assert 0.40 <= match_templates(a, b, 1.0).distance <= 0.60


def brute_force_rates(
    population_size: int, noise_rate: float, threshold: float, trials: int, seed: int
) -> tuple[float, float]:
    """Independent scalar re-implementation of the documented trial schedule."""
    enrolled = [
        generate_template(derive_seed(seed, f"enroll:{k}"), TemplateKind.FINGERPRINT)
        for k in range(population_size)
    ]
    false_accepts = 0
    false_rejects = 0
    for i in range(trials):
        a = i % population_size
        genuine = capture_sample(enrolled[a], noise_rate, derive_seed(seed, f"genuine:{i}"))
        if not match_templates(genuine, enrolled[a], threshold).matched:
            false_rejects += 1
        b = (a + 1 + (i // population_size) % (population_size - 1)) % population_size
        impostor = capture_sample(enrolled[a], noise_rate, derive_seed(seed, f"impostor:{i}"))
        if match_templates(impostor, enrolled[b], threshold).matched:
            false_accepts += 1
    return false_accepts / trials, false_rejects / trials


class TestErrorRates:
    def test_agrees_with_brute_force(self):
        # Same trials, radically different code path (numpy matrix vs scalar).
        for threshold in (0.25, 0.45, 0.55):
            rates = evaluate_error_rates(5, 0.2, threshold, trials=300, seed=31)
            far, frr = brute_force_rates(5, 0.2, threshold, trials=300, seed=31)
            assert rates.far == far
            assert rates.frr == frr

    def test_zero_errors_at_default_operating_point(self):
        # Exact tails: impostor accept and genuine reject are both beyond
        # negligible at tau = 0.25, p = 0.1.
        p_accept_impostor = binom_le(256, 64, Fraction(1, 2))
        p_reject_genuine = 1 - binom_le(256, 64, Fraction(1, 10))
        assert p_accept_impostor < Fraction(1, 10**12)
        assert p_reject_genuine < Fraction(1, 10**10)
        rates = evaluate_error_rates(20, 0.1, DEFAULT_FP_THRESHOLD, trials=1000, seed=7)
        assert rates.far == 0.0
        assert rates.frr == 0.0

    def test_zero_noise_means_zero_frr(self):
        rates = evaluate_error_rates(10, 0.0, 0.25, trials=500, seed=7)
        assert rates.frr == 0.0

    def test_zero_threshold_rejects_noisy_genuines(self):
        # P(a genuine capture has zero flips) = 0.9^256 < 1e-11
        assert Fraction(9, 10) ** 256 < Fraction(1, 10**11)
        rates = evaluate_error_rates(10, 0.1, 0.0, trials=500, seed=7)
        assert rates.frr == 1.0

    def test_deterministic_for_fixed_seed(self):
        a = evaluate_error_rates(10, 0.1, 0.25, trials=400, seed=3)
        b = evaluate_error_rates(10, 0.1, 0.25, trials=400, seed=3)
        assert (a.far, a.frr) == (b.far, b.frr)

    def test_seed_changes_trials(self):
        a = evaluate_error_rates(5, 0.45, 0.45, trials=400, seed=1)
        b = evaluate_error_rates(5, 0.45, 0.45, trials=400, seed=2)
        assert (a.far, a.frr) != (b.far, b.frr)

    def test_far_frr_monotone_in_threshold(self):
        grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        rates = [evaluate_error_rates(6, 0.3, tau, trials=300, seed=11) for tau in grid]
        for lo, hi in zip(rates, rates[1:]):
            assert hi.far >= lo.far
            assert hi.frr <= lo.frr

    def test_argument_guards(self):
        with pytest.raises(ValueError):
            evaluate_error_rates(1, 0.1, 0.25, trials=10, seed=1)
        with pytest.raises(ValueError):
            evaluate_error_rates(5, 0.1, 0.25, trials=0, seed=1)
        with pytest.raises(InvalidThreshold):
            evaluate_error_rates(5, 0.1, 1.5, trials=10, seed=1)
        with pytest.raises(InvalidNoiseRate):
            evaluate_error_rates(5, 0.9, 0.25, trials=10, seed=1)
