import numpy as np
import pytest

from flexfas.augment import DropModalConfig, drop_modal, mask_modalities
from flexfas.core import FlexFasError, MODALITIES, Modality
from helpers import make_sample

ALL = set(MODALITIES)


def test_zero_probability_is_identity():
    s = make_sample()
    out = drop_modal(s, DropModalConfig(p_depth=0.0, p_ir=0.0), np.random.default_rng(0))
    for m in MODALITIES:
        assert np.array_equal(out.images[m], s.images[m])


def test_certain_drop_zeroes_depth_and_ir_only():
    s = make_sample()
    out = drop_modal(s, DropModalConfig(p_depth=1.0, p_ir=1.0), np.random.default_rng(0))
    assert np.array_equal(out.images[Modality.RGB], s.images[Modality.RGB])
    assert not out.images[Modality.DEPTH].any()
    assert not out.images[Modality.IR].any()
    assert out.images[Modality.DEPTH].shape == s.images[Modality.DEPTH].shape


def test_input_sample_not_modified():
    s = make_sample()
    before = {m: a.copy() for m, a in s.images.items()}
    drop_modal(s, DropModalConfig(p_depth=1.0, p_ir=1.0), np.random.default_rng(1))
    for m in MODALITIES:
        assert np.array_equal(s.images[m], before[m])


def test_empirical_drop_rate_within_confidence_interval():
    # 99% binomial CI around p = 0.3 over 10k draws
    n, p = 10_000, 0.3
    rng = np.random.default_rng(42)
    cfg = DropModalConfig(p_depth=p, p_ir=p)
    s = make_sample(hw=(2, 2))
    drops = {Modality.DEPTH: 0, Modality.IR: 0}
    for _ in range(n):
        out = drop_modal(s, cfg, rng)
        for m in drops:
            drops[m] += int(not out.images[m].any())
        assert out.images[Modality.RGB].any()  # RGB never dropped
    half_width = 2.5758 * np.sqrt(p * (1 - p) / n)
    for m, k in drops.items():
        assert abs(k / n - p) < half_width, f"{m}: rate {k / n}"


def test_depth_and_ir_drop_independently():
    rng = np.random.default_rng(7)
    cfg = DropModalConfig(p_depth=1.0, p_ir=0.0)
    out = drop_modal(make_sample(), cfg, rng)
    assert not out.images[Modality.DEPTH].any()
    assert out.images[Modality.IR].any()


def test_equal_seeds_give_equal_drop_patterns():
    cfg = DropModalConfig(p_depth=0.5, p_ir=0.5, seed=9)
    s = make_sample()

    def pattern():
        rng = np.random.default_rng(cfg.seed)
        out = []
        for _ in range(50):
            dropped = drop_modal(s, cfg, rng)
            out.append(
                (not dropped.images[Modality.DEPTH].any(),
                 not dropped.images[Modality.IR].any())
            )
        return out

    epoch = pattern()
    assert epoch == pattern()
    assert any(d for d, _ in epoch) and any(not d for d, _ in epoch)


def test_probability_validation():
    for bad in (-0.1, 1.1):
        with pytest.raises(FlexFasError):
            DropModalConfig(p_depth=bad)


def test_mask_all_active_is_identity():
    s = make_sample()
    out = mask_modalities(s, ALL)
    for m in MODALITIES:
        assert np.array_equal(out.images[m], s.images[m])


def test_mask_zeroes_inactive():
    s = make_sample()
    out = mask_modalities(s, {Modality.RGB, Modality.DEPTH})
    assert not out.images[Modality.IR].any()
    assert np.array_equal(out.images[Modality.RGB], s.images[Modality.RGB])
    assert np.array_equal(out.images[Modality.DEPTH], s.images[Modality.DEPTH])


def test_mask_idempotent():
    rng = np.random.default_rng(3)
    for active in ({Modality.RGB}, {Modality.RGB, Modality.IR}):
        s = make_sample(rng)
        once = mask_modalities(s, active)
        twice = mask_modalities(once, active)
        for m in MODALITIES:
            assert np.array_equal(once.images[m], twice.images[m])


def test_mask_composition_is_intersection():
    rng = np.random.default_rng(4)
    s = make_sample(rng)
    a = {Modality.RGB, Modality.DEPTH}
    b = {Modality.RGB, Modality.IR}
    composed = mask_modalities(mask_modalities(s, a), b)
    direct = mask_modalities(s, (a & b) | {Modality.RGB})
    for m in MODALITIES:
        assert np.array_equal(composed.images[m], direct.images[m])


def test_mask_requires_rgb():
    with pytest.raises(FlexFasError) as e:
        mask_modalities(make_sample(), {Modality.DEPTH, Modality.IR})
    assert e.value.code == "MISSING_RGB"
