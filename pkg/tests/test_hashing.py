import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dta.hashing import BLANK, Domain, HashFamily, ValueCodec, ValueOutsideUniverse

FAM = HashFamily(seed_base=0x5EED)


@given(st.binary(max_size=64), st.integers(0, 3), st.integers(1, 10000))
def test_slot_hash_deterministic_and_in_range(key, n, buflen):
    a = FAM.slot_hash(n, key, buflen)
    assert a == FAM.slot_hash(n, key, buflen)
    assert 0 <= a < buflen


def test_slot_hash_buflen_one_always_zero():
    for i in range(100):
        assert FAM.slot_hash(i % 4, str(i).encode(), 1) == 0


def test_same_inputs_same_checksum_across_instances():
    other = HashFamily(seed_base=0x5EED)
    assert FAM.key_checksum(b"flow", 32) == other.key_checksum(b"flow", 32)


@given(st.binary(max_size=32), st.integers(1, 64))
def test_checksum_top_bits_zero(key, bits):
    assert FAM.key_checksum(key, bits) < (1 << bits)


def test_checksum_one_bit():
    values = {FAM.key_checksum(str(i).encode(), 1) for i in range(64)}
    assert values == {0, 1}


def test_slot_histogram_uniform():
    """Chi-square over 256 buckets stays within 5 sigma of uniform."""
    buckets = 256
    samples = 100000
    counts = [0] * buckets
    for i in range(samples):
        counts[FAM.slot_hash(0, i.to_bytes(8, "big"), buckets)] += 1
    expected = samples / buckets
    chi2 = sum((c - expected) ** 2 / expected for c in counts)
    dof = buckets - 1
    assert chi2 < dof + 5 * (2 * dof) ** 0.5


def test_distinct_seeds_disagree():
    """Copy indices behave as independent functions: agreement rate ~ 1/buflen."""
    buflen = 256
    samples = 20000
    agree = sum(
        FAM.slot_hash(0, i.to_bytes(8, "big"), buflen)
        == FAM.slot_hash(1, i.to_bytes(8, "big"), buflen)
        for i in range(samples)
    )
    expected = samples / buflen
    assert abs(agree - expected) < 5 * expected ** 0.5


def test_checksum_collision_rate_16bit():
    """Distinct random keys collide at ~2^-16, checked over 10^6 pairs."""
    pairs = 1_000_000
    collisions = 0
    for i in range(pairs):
        a = FAM.key_checksum((2 * i).to_bytes(8, "big"), 16)
        b = FAM.key_checksum((2 * i + 1).to_bytes(8, "big"), 16)
        collisions += a == b
    expected = pairs * 2 ** -16
    assert abs(collisions - expected) <= 3 * expected ** 0.5 + 1


def test_hop_checksums_differ_by_hop():
    seen = {FAM.hop_checksum(b"flow", hop, 32) for hop in range(5)}
    assert len(seen) == 5


@pytest.mark.parametrize("bad_bits", [0, 65, -1])
def test_bit_width_validation(bad_bits):
    with pytest.raises(ValueError):
        FAM.key_checksum(b"x", bad_bits)


class TestValueCodec:
    def test_single_value_universe_has_two_entries(self):
        codec = ValueCodec(FAM, 1, 32)
        assert len(codec._table) == 2  # the value plus BLANK
        assert codec.decode(codec.encode(0)) == 0
        assert codec.decode(codec.encode(BLANK)) is BLANK

    def test_roundtrip_collision_free_universe(self):
        """4096-value universe at b=32: inverse table recovers every value."""
        codec = ValueCodec(FAM, 1 << 12, 32)
        assert codec.collisions == 0
        for v in range(0, 1 << 12, 7):
            assert codec.decode(codec.encode(v)) == v

    def test_birthday_bound_small_universe(self):
        # |V|=2^10 at b=32: expected collisions |V|^2/2^33 < 0.001
        codec = ValueCodec(FAM, 1 << 10, 32)
        assert codec.collisions == 0

    def test_outside_universe_rejected(self):
        codec = ValueCodec(FAM, 16, 32)
        with pytest.raises(ValueOutsideUniverse):
            codec.encode(16)
        with pytest.raises(ValueOutsideUniverse):
            codec.encode(-1)

    def test_blank_not_all_zero_encoding(self):
        codec = ValueCodec(FAM, 1 << 10, 32)
        assert codec.encode(BLANK) != 0

    def test_unknown_code_decodes_to_none(self):
        codec = ValueCodec(FAM, 4, 32)
        misses = sum(codec.decode(c) is None for c in range(1000))
        assert misses >= 995  # only 5 codes are occupied


def test_domains_are_distinct():
    values = [d.value for d in Domain]
    assert len(values) == len(set(values))
