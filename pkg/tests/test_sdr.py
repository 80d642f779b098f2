import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrazor import (
    BaseTensor,
    CompressedGroup,
    SdrConfig,
    compress_group,
    compress_group_reference,
    compress_tensor,
    decompress_group,
    decompress_tensor,
    detect_razoring_point,
)
from qrazor.errors import ConfigViolation, CorruptFlag, ShapeMismatch

WORKED_SIGNS = np.array([0, 1, 0, 0], dtype=np.uint8)
WORKED_MAGS = np.array([0b1011010, 0b0001100, 0b0100111, 0b0000001], dtype=np.uint16)
CFG_8_4 = SdrConfig(base_bits=8, target_bits=4, group_size=8)


@st.composite
def group_and_config(draw):
    base = draw(st.integers(4, 16))
    target = draw(st.integers(2, base - 1))
    g = draw(st.integers(1, 16))
    cfg = SdrConfig(base, target, g)
    n = draw(st.integers(1, g))
    mags = draw(st.lists(st.integers(0, (1 << (base - 1)) - 1),
                         min_size=n, max_size=n))
    signs = [draw(st.integers(0, 1)) if m else 0 for m in mags]
    return (np.array(signs, dtype=np.uint8), np.array(mags, dtype=np.uint16), cfg)


class TestDetectRazoringPoint:
    def test_or_of_group(self):
        assert detect_razoring_point(WORKED_MAGS) == 6

    def test_all_zero_group(self):
        assert detect_razoring_point([0, 0, 0, 0]) is None

    def test_single_lsb(self):
        assert detect_razoring_point([1]) == 0

    def test_empty_group_rejected(self):
        with pytest.raises(ShapeMismatch):
            detect_razoring_point([])

    @given(st.lists(st.integers(0, 63), min_size=1, max_size=12))
    def test_equals_max_of_elementwise_leading_ones(self, mags):
        expected = max((m.bit_length() - 1 for m in mags if m), default=None)
        assert detect_razoring_point(mags) == expected


class TestCompressGroup:
    def test_worked_group(self):
        cg = compress_group(WORKED_SIGNS, WORKED_MAGS, CFG_8_4)
        assert cg.flag == 4
        assert cg.signs.tolist() == [0, 1, 0, 0]
        assert cg.mags.tolist() == [0b110, 0b001, 0b010, 0b000]

    def test_all_ones_salient_floors(self):
        cg = compress_group([0], [0b1111010], CFG_8_4)
        assert cg.flag == 4
        assert cg.mags.tolist() == [0b111]

    def test_all_zero_group(self):
        cg = compress_group([0] * 5, [0] * 5, CFG_8_4)
        assert cg.flag == 0
        assert cg.mags.tolist() == [0] * 5
        assert cg.signs.tolist() == [0] * 5

    def test_small_group_copies_exactly(self):
        cg = compress_group([1], [0b100], SdrConfig(8, 4, 8))
        assert cg.flag == 0
        assert cg.signs.tolist() == [1]
        assert cg.mags.tolist() == [0b100]

    def test_group_too_long(self):
        with pytest.raises(ConfigViolation):
            compress_group([0] * 9, [1] * 9, CFG_8_4)

    def test_magnitude_out_of_range(self):
        with pytest.raises(ConfigViolation):
            compress_group([0], [128], CFG_8_4)


class TestReferenceOracle:
    def test_matches_on_worked_group(self):
        assert compress_group_reference(WORKED_SIGNS, WORKED_MAGS, CFG_8_4) \
            == compress_group(WORKED_SIGNS, WORKED_MAGS, CFG_8_4)

    def test_matches_on_all_ones_case(self):
        signs, mags = np.array([0], np.uint8), np.array([0b1111010], np.uint16)
        assert compress_group_reference(signs, mags, CFG_8_4) \
            == compress_group(signs, mags, CFG_8_4)

    def test_single_element_untouched(self):
        cg = compress_group_reference([1], [0b100], SdrConfig(8, 4, 8))
        assert (cg.flag, cg.signs.tolist(), cg.mags.tolist()) == (0, [1], [4])

    @settings(max_examples=300, deadline=None)
    @given(group_and_config())
    def test_production_equals_reference(self, case):
        signs, mags, cfg = case
        assert compress_group(signs, mags, cfg) \
            == compress_group_reference(signs, mags, cfg)


class TestDecompressGroup:
    def test_shift_restores_scale(self):
        cg = CompressedGroup(4, np.array([0], np.uint8), np.array([0b110], np.uint16))
        signs, mags = decompress_group(cg, CFG_8_4)
        assert (signs.tolist(), mags.tolist()) == ([0], [96])

    def test_flag_zero_is_identity(self):
        cg = CompressedGroup(0, np.array([1, 0], np.uint8),
                             np.array([5, 2], np.uint16))
        signs, mags = decompress_group(cg, CFG_8_4)
        assert (signs.tolist(), mags.tolist()) == ([1, 0], [5, 2])

    def test_negative_element(self):
        cg = CompressedGroup(4, np.array([1], np.uint8), np.array([0b001], np.uint16))
        signs, mags = decompress_group(cg, CFG_8_4)
        assert (signs.tolist(), mags.tolist()) == ([1], [16])

    def test_corrupt_flag(self):
        cg = CompressedGroup(5, np.array([0], np.uint8), np.array([1], np.uint16))
        with pytest.raises(CorruptFlag):
            decompress_group(cg, CFG_8_4)  # max flag for 8->4 is 4


class TestSdrConfig:
    def test_derived_flag_widths(self):
        assert SdrConfig(16, 4, 16).flag_bits == 4
        assert SdrConfig(8, 4, 16).flag_bits == 3

    def test_flag_bits_override(self):
        assert SdrConfig(8, 4, 16, flag_bits=4).flag_bits == 4

    def test_nothing_to_razor(self):
        with pytest.raises(ConfigViolation):
            SdrConfig(8, 8, 16)
        with pytest.raises(ConfigViolation):
            SdrConfig(8, 9, 16)

    def test_flag_bits_too_narrow(self):
        with pytest.raises(ConfigViolation):
            SdrConfig(16, 4, 16, flag_bits=3)  # max flag 12 needs 4 bits

    def test_bad_group_size(self):
        with pytest.raises(ConfigViolation):
            SdrConfig(8, 4, 0)

    def test_minimum_target(self):
        with pytest.raises(ConfigViolation):
            SdrConfig(8, 1, 8)


def random_base_tensor(rng, shape, base_bits):
    mags = rng.integers(0, 1 << (base_bits - 1), size=shape).astype(np.uint16)
    signs = (rng.integers(0, 2, size=shape).astype(np.uint8)) * (mags > 0)
    return BaseTensor(shape, base_bits, signs, mags)


class TestCompressTensor:
    def test_exact_division_groups(self):
        bt = random_base_tensor(np.random.default_rng(0), (2, 8), 8)
        ct = compress_tensor(bt, CFG_8_4)
        assert ct.flags.shape == (2, 1)
        assert ct.n_groups == 2

    def test_ragged_tail(self):
        bt = random_base_tensor(np.random.default_rng(1), (1, 10), 8)
        ct = compress_tensor(bt, CFG_8_4)
        assert ct.flags.shape == (1, 2)
        assert ct.group(0).mags.size == 8
        assert ct.group(1).mags.size == 2

    def test_all_zero_tensor(self):
        bt = BaseTensor.from_signed(np.zeros((3, 8), dtype=int), 8)
        ct = compress_tensor(bt, CFG_8_4)
        assert not ct.flags.any()
        assert not ct.mags.any()

    def test_groups_match_groupwise_compression(self):
        rng = np.random.default_rng(2)
        bt = random_base_tensor(rng, (3, 21), 16)
        cfg = SdrConfig(16, 4, 8)
        ct = compress_tensor(bt, cfg)
        mags2d = bt.mags.reshape(3, 21)
        signs2d = bt.signs.reshape(3, 21)
        for idx in range(ct.n_groups):
            r, gi = divmod(idx, ct.flags.shape[1])
            lo, hi = gi * 8, min((gi + 1) * 8, 21)
            expected = compress_group_reference(signs2d[r, lo:hi],
                                                mags2d[r, lo:hi], cfg)
            assert ct.group(idx) == expected

    def test_base_bits_mismatch(self):
        bt = random_base_tensor(np.random.default_rng(3), (2, 4), 8)
        with pytest.raises(ConfigViolation):
            compress_tensor(bt, SdrConfig(16, 4, 8))

    def test_tensor_flag_invariant(self):
        from qrazor import CompressedTensor
        with pytest.raises(CorruptFlag):
            CompressedTensor((1, 4), CFG_8_4,
                             np.array([[5]], np.uint8),  # max legal flag is 4
                             np.zeros((1, 4), np.uint8),
                             np.zeros((1, 4), np.uint16))

    def test_worked_group_reconstruction(self):
        bt = BaseTensor.from_signed(np.array([[90, -12, 39, 1]]), 8)
        recon = decompress_tensor(compress_tensor(bt, CFG_8_4))
        assert recon.to_signed().tolist() == [[96, -16, 32, 0]]


def classify_bounds(orig_mags, recon_mags, flag, salient_bits):
    """Max reconstruction error per element given the branch each one took."""
    full = (1 << salient_bits) - 1
    q = orig_mags.astype(np.int64) >> flag
    all_ones = q == full
    bounds = np.where(all_ones, (1 << flag) - 1, 1 << max(flag - 1, 0))
    if flag == 0:
        bounds = np.zeros_like(bounds)
    return np.abs(orig_mags.astype(np.int64) - recon_mags.astype(np.int64)) <= bounds


@settings(max_examples=200, deadline=None)
@given(group_and_config())
def test_round_trip_error_bound(case):
    signs, mags, cfg = case
    cg = compress_group(signs, mags, cfg)
    _, recon = decompress_group(cg, cfg)
    assert classify_bounds(mags, recon, cg.flag, cfg.salient_bits).all()


@settings(max_examples=200, deadline=None)
@given(group_and_config())
def test_no_overflow_and_signs_survive(case):
    signs, mags, cfg = case
    cg = compress_group(signs, mags, cfg)
    assert int(cg.mags.max()) < (1 << cfg.salient_bits)
    _, recon = decompress_group(cg, cfg)
    assert int(recon.max()) < (1 << (cfg.base_bits - 1))
    kept = cg.mags > 0
    assert np.array_equal(cg.signs[kept], signs[kept])


@settings(max_examples=200, deadline=None)
@given(group_and_config())
def test_doubling_magnitudes_shifts_razoring_point(case):
    signs, mags, cfg = case
    if not mags.any() or int(mags.max()) >= (1 << (cfg.base_bits - 2)):
        return
    p = detect_razoring_point(mags)
    base = compress_group(signs, mags, cfg)
    doubled = compress_group(signs, mags * 2, cfg)
    if p >= cfg.salient_bits - 1:
        assert doubled.flag == base.flag + 1
        assert np.array_equal(doubled.mags, base.mags)
        assert np.array_equal(doubled.signs, base.signs)
    else:
        assert doubled.flag == base.flag == 0


@settings(max_examples=150, deadline=None)
@given(group_and_config())
def test_compression_idempotent_at_base_precision(case):
    signs, mags, cfg = case
    once = compress_group(signs, mags, cfg)
    recon_signs, recon_mags = decompress_group(once, cfg)
    twice = compress_group(recon_signs, recon_mags, cfg)
    assert twice == once


def test_tensor_round_trip_bound_large():
    rng = np.random.default_rng(8)
    for base_bits, cfg in [(8, SdrConfig(8, 4, 32)), (16, SdrConfig(16, 4, 16))]:
        bt = random_base_tensor(rng, (64, 96), base_bits)
        ct = compress_tensor(bt, cfg)
        recon = decompress_tensor(ct)
        err = np.abs(bt.to_signed().astype(np.int64)
                     - recon.to_signed().astype(np.int64))
        per_elem_flag = np.repeat(ct.flags, cfg.group_size, axis=1)[:, :96]
        # 2**flag - 1 covers both rounding branches and is 0 at flag 0
        assert np.all(err.reshape(64, 96)
                      <= (1 << per_elem_flag.astype(np.int64)) - 1)
        # exact where the whole group fit without truncation
        exact = per_elem_flag == 0
        assert np.array_equal(err.reshape(64, 96)[exact], np.zeros(exact.sum()))
