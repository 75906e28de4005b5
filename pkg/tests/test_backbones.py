import math

import numpy as np
import pytest
import torch

from flexfas.backbones import (
    Arch,
    FlexModel,
    HeadKind,
    ModelConfig,
    batch_loss,
    build_model,
    output_scores,
)
from flexfas.core import FlexFasError, Label, MODALITIES, Modality, ModalitySample
from flexfas.fusion import FusionKind
from helpers import check_grads, make_sample

ALL = set(MODALITIES)

TINY = dict(feature_channels=8, image_size=(8, 8), vit_patch_size=4)


def tiny_config(**kw):
    merged = {**TINY, **kw}
    return ModelConfig(**merged)


@pytest.mark.parametrize("arch", list(Arch))
def test_predict_ignores_masked_modalities(arch):
    model = build_model(tiny_config(arch=arch), seed=0)
    rng = np.random.default_rng(0)
    s = make_sample(rng)
    base = model.predict_sample(s, {Modality.RGB})
    noisy = s.with_images(
        {
            Modality.RGB: s.images[Modality.RGB],
            Modality.DEPTH: rng.random((1, 8, 8)).astype(np.float32),
            Modality.IR: rng.random((1, 8, 8)).astype(np.float32),
        }
    )
    assert model.predict_sample(noisy, {Modality.RGB}) == base


def test_masked_modalities_encode_as_zero_input():
    model = build_model(tiny_config(), seed=1)
    rng = np.random.default_rng(1)
    s = make_sample(rng)
    bundle = model.encode_sample(s, {Modality.RGB})
    # depth and IR both collapse to the zero-input encoding of the shared branch
    assert torch.equal(bundle.features[Modality.DEPTH], bundle.features[Modality.IR])
    zero_sample = s.with_images(
        {
            Modality.RGB: s.images[Modality.RGB],
            Modality.DEPTH: np.zeros((1, 8, 8), dtype=np.float32),
        }
    )
    full = model.encode_sample(zero_sample, ALL)
    assert torch.equal(full.features[Modality.DEPTH], bundle.features[Modality.DEPTH])


def test_absent_modality_treated_as_zero():
    model = build_model(tiny_config(), seed=2)
    rng = np.random.default_rng(2)
    with_ir = make_sample(rng)
    without_ir = with_ir.with_images(
        {m: a for m, a in with_ir.images.items() if m is not Modality.IR}
    )
    explicit_zero = with_ir.with_images(
        {**dict(with_ir.images), Modality.IR: np.zeros((1, 8, 8), dtype=np.float32)}
    )
    assert model.predict_sample(without_ir, ALL) == model.predict_sample(explicit_zero, ALL)


def test_shared_branch_same_input_same_features():
    model = build_model(tiny_config(), seed=3)
    rng = np.random.default_rng(3)
    plane = rng.random((1, 8, 8)).astype(np.float32)
    s = ModalitySample(
        "x",
        {Modality.RGB: plane, Modality.DEPTH: plane.copy()},
        Label.BONAFIDE,
    )
    bundle = model.encode_sample(s, ALL)
    assert torch.equal(bundle.features[Modality.RGB], bundle.features[Modality.DEPTH])


def test_missing_rgb_in_active_set():
    model = build_model(tiny_config(), seed=4)
    with pytest.raises(FlexFasError) as e:
        model.predict_sample(make_sample(), {Modality.DEPTH})
    assert e.value.code == "MISSING_RGB"


@pytest.mark.parametrize("head", list(HeadKind))
def test_fresh_model_scores_exactly_half(head):
    # output layers start at zero, so an untrained model scores sigmoid(0)
    model = build_model(tiny_config(head=head), seed=5)
    assert model.predict_sample(make_sample(), ALL) == 0.5


def test_scores_within_unit_interval():
    rng = np.random.default_rng(6)
    model = build_model(tiny_config(arch=Arch.TOY_RESNET), seed=6)
    with torch.no_grad():  # un-zero the head so scores move off 0.5
        model.head.fc.weight.normal_(std=2.0)
        model.head.fc.bias.normal_()
    for i in range(5):
        score = model.predict_sample(make_sample(rng, sample_id=f"s{i}"), ALL)
        assert 0.0 <= score <= 1.0


def test_loss_at_indifference_is_ln2():
    model = build_model(tiny_config(), seed=7)
    batch = [
        make_sample(label=Label.BONAFIDE),
        make_sample(sample_id="s1", label=Label.ATTACK),
    ]
    loss = batch_loss(model, batch, ALL)
    assert math.isclose(float(loss), math.log(2.0), rel_tol=1e-6)


def test_loss_near_zero_for_confident_correct_model():
    model = build_model(tiny_config(), seed=8)
    with torch.no_grad():
        model.head.fc.bias.fill_(25.0)  # huge bonafide logit
    loss = batch_loss(model, [make_sample(label=Label.BONAFIDE)], ALL)
    assert float(loss) < 1e-8


def test_map_head_uniform_logit_loss():
    model = build_model(tiny_config(head=HeadKind.BINARY_MAP), seed=9)
    with torch.no_grad():
        model.head.conv.bias.fill_(1.0)  # uniform map logit z = 1
    loss = batch_loss(model, [make_sample(label=Label.BONAFIDE)], ALL)
    expected = -math.log(1.0 / (1.0 + math.exp(-1.0)))  # 0.3133
    assert math.isclose(float(loss), expected, rel_tol=1e-6)
    assert abs(expected - 0.3133) < 1e-4


def test_empty_batch_rejected():
    model = build_model(tiny_config(), seed=10)
    with pytest.raises(FlexFasError) as e:
        batch_loss(model, [], ALL)
    assert e.value.code == "EMPTY_BATCH"


def test_map_head_emits_map_logit_head_emits_scalar():
    logit_model = build_model(tiny_config(), seed=11)
    map_model = build_model(tiny_config(head=HeadKind.BINARY_MAP), seed=11)
    inputs = logit_model.inputs_from_samples([make_sample()], ALL)
    assert logit_model(inputs).shape == (1,)
    out = map_model(inputs)
    assert out.shape == (1, 1, 1, 1)  # 8x8 input, three stride-2 blocks
    scores = output_scores(out, HeadKind.BINARY_MAP)
    assert scores.shape == (1,)


@pytest.mark.parametrize("arch", list(Arch))
def test_end_to_end_gradients_match_finite_differences(arch):
    cfg = tiny_config(arch=arch, feature_channels=4)
    model = build_model(cfg, seed=12).double().train()
    rng = np.random.default_rng(12)
    batch = [
        make_sample(rng, label=Label.BONAFIDE),
        make_sample(rng, sample_id="s1", label=Label.ATTACK),
    ]

    def loss_fn():
        return batch_loss(model, batch, ALL)

    params = [p for p in model.parameters() if p.numel() <= 40][:6]
    assert params, "expected some small parameter tensors to probe"
    check_grads(loss_fn, params)


def test_vit_patch_divisibility():
    with pytest.raises(FlexFasError) as e:
        ModelConfig(arch=Arch.TOY_VIT, image_size=(10, 10), vit_patch_size=4)
    assert e.value.code == "SHAPE_INVALID"


def test_model_config_dict_roundtrip():
    cfg = tiny_config(arch=Arch.TOY_VIT, fusion=FusionKind.CROSS_ATTENTION, shared=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_build_model_seed_reproducible():
    a = build_model(tiny_config(), seed=13)
    b = build_model(tiny_config(), seed=13)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)


def test_trained_model_separates_synthetic_classes():
    from flexfas.synthgen import SynthConfig, generate
    from flexfas.trainer import TrainConfig, train
    from flexfas.protocols import Split

    samples, manifest = generate(SynthConfig(n_subjects=60, frames_per_subject=2, seed=5))
    split_of = {r.sample_id: r.split for r in manifest.rows}
    train_set = [s for s in samples if split_of[s.sample_id] is Split.TRAIN]
    held_out = [s for s in samples if split_of[s.sample_id] is Split.TEST]
    model = build_model(ModelConfig(feature_channels=16), seed=14)
    train(model, train_set, TrainConfig(epochs=8, lr_halving_epoch=6, seed=14))
    scores = model.predict_batch(held_out, ALL)
    bona = [v for v, s in zip(scores, held_out) if s.label is Label.BONAFIDE]
    attack = [v for v, s in zip(scores, held_out) if s.label is Label.ATTACK]
    assert np.mean(bona) > np.mean(attack)
