import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridkd.core import Tensor, default_dtype, get_tape, grad_check, no_grad, softmax
from hybridkd.data.splits import make_splits
from hybridkd.distill import (
    MODES,
    ChannelAdapters,
    DistillConfig,
    align,
    loss_attn,
    loss_ce,
    loss_logit,
    loss_total,
    run_distillation,
    run_teacher_pretrain,
    teacher_attention_to_spatial,
    train_supervised,
)
from hybridkd.errors import ConfigError, DataError, DimensionError, TrainingError
from hybridkd.models import StudentConfig, StudentModel, TeacherConfig, TeacherModel, parameters_checksum

TINY_T = TeacherConfig(image_size=16, patch=4, dim=16, depth=1, n_heads=2, mlp_ratio=2, head_hidden=16, n_classes=3)
TINY_S = StudentConfig(image_size=16, stem=4, widths=[8, 8], strides=[2, 1], se_reduction=4, n_classes=3)


def tiny_data(n_per_class=10, seed=0, n_classes=3, size=16):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    images = rng.random((labels.size, 3, size, size)).astype(np.float32) * 0.5
    for k in range(n_classes):
        images[labels == k, k % 3] += 0.4  # learnable colour cue
    return make_splits(images, labels, seed)


def tiny_cfg(**kw):
    base = dict(epochs=2, batch_size=8, augment=False, common_channels=4, early_stop_patience=5)
    base.update(kw)
    return DistillConfig(**base)


# -- teacher attention to a spatial map ----------------------------------------------------


def spatial_oracle(attn):
    b, h, n, _ = attn.shape
    side = int(math.isqrt(n))
    out = np.zeros((b, 1, side, side))
    for bi in range(b):
        for j in range(n):
            total = 0.0
            for hi in range(h):
                for i in range(n):
                    total += attn[bi, hi, i, j]
            out[bi, 0, j // side, j % side] = total / (h * n)
    return out


def test_uniform_attention_gives_constant_map():
    n = 16
    a = Tensor(np.full((2, 3, n, n), 1.0 / n))
    m = teacher_attention_to_spatial(a).data
    assert m.shape == (2, 1, 4, 4)
    np.testing.assert_allclose(m, 1.0 / n, atol=1e-7)


def test_one_hot_attention_gives_delta_map():
    n, k = 9, 5
    a = np.zeros((1, 2, n, n))
    a[:, :, :, k] = 1.0
    m = teacher_attention_to_spatial(Tensor(a)).data.reshape(-1)
    expected = np.zeros(n)
    expected[k] = 1.0
    np.testing.assert_allclose(m, expected, atol=1e-7)


def test_spatial_map_matches_loop_oracle():
    rng = np.random.default_rng(0)
    a = softmax(Tensor(rng.normal(size=(2, 3, 16, 16))), axis=-1)
    np.testing.assert_allclose(teacher_attention_to_spatial(a).data, spatial_oracle(a.data), atol=1e-6)


def test_non_square_patch_count_rejected():
    with pytest.raises(ConfigError):
        teacher_attention_to_spatial(Tensor(np.full((1, 1, 12, 12), 1 / 12)))


# -- alignment -------------------------------------------------------------------------------


def test_align_distributions_sum_to_one_and_have_shape_k():
    rng = np.random.default_rng(1)
    ad = ChannelAdapters(1, 6, 4, rng)
    pt, ps = align(Tensor(rng.random((3, 1, 4, 4))), Tensor(rng.normal(size=(3, 6, 7, 5))), ad)
    assert pt.shape == ps.shape == (3, 4 * 7 * 5)
    np.testing.assert_allclose(pt.data.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(ps.data.sum(axis=1), 1.0, atol=1e-6)


def test_align_symmetric_branches_match():
    rng = np.random.default_rng(2)
    ad = ChannelAdapters(1, 1, 5, rng)
    ad.g_s.weight.data[...] = ad.g_t.weight.data
    ad.g_s.bias.data[...] = ad.g_t.bias.data
    m = Tensor(rng.random((2, 1, 6, 6)))
    pt, ps = align(m, m, ad)
    np.testing.assert_allclose(pt.data, ps.data, atol=1e-6)


def test_align_same_size_is_exact_no_resize_path():
    rng = np.random.default_rng(3)
    ad = ChannelAdapters(1, 4, 3, rng)
    m = Tensor(rng.random((2, 1, 8, 8)))
    feat = Tensor(rng.normal(size=(2, 4, 8, 8)))
    pt, _ = align(m, feat, ad)
    direct = softmax(ad.g_t(m).reshape(2, -1), axis=1)
    assert np.array_equal(pt.data, direct.data)


def test_align_channel_mismatch_raises():
    rng = np.random.default_rng(4)
    ad = ChannelAdapters(1, 4, 3, rng)
    with pytest.raises(DimensionError):
        align(Tensor(rng.random((2, 1, 4, 4))), Tensor(rng.random((2, 5, 4, 4))), ad)
    with pytest.raises(DimensionError):
        align(Tensor(rng.random((2, 2, 4, 4))), Tensor(rng.random((2, 4, 4, 4))), ad)


def test_adapters_output_common_channels():
    ad = ChannelAdapters(1, 24, 7, np.random.default_rng(0))
    assert ad.g_t.weight.shape[0] == ad.g_s.weight.shape[0] == 7 == ad.common


@settings(max_examples=40, deadline=None)
@given(
    grid=st.sampled_from([4, 8, 16]),
    c_s=st.integers(1, 12),
    h_s=st.integers(4, 16),
    w_s=st.integers(4, 16),
    common=st.integers(1, 6),
    b=st.integers(1, 3),
)
def test_align_shape_fuzz(grid, c_s, h_s, w_s, common, b):
    rng = np.random.default_rng(grid * 1000 + c_s * 100 + h_s * 10 + w_s)
    n = grid * grid
    attn = softmax(Tensor(rng.normal(size=(b, 2, n, n))), axis=-1)
    ad = ChannelAdapters(1, c_s, common, rng)
    pt, ps = align(teacher_attention_to_spatial(attn), Tensor(rng.normal(size=(b, c_s, h_s, w_s))), ad)
    assert pt.shape == ps.shape == (b, common * h_s * w_s)
    assert np.abs(pt.data.sum(axis=1) - 1).max() < 1e-6
    assert np.abs(ps.data.sum(axis=1) - 1).max() < 1e-6


# -- losses ----------------------------------------------------------------------------------


def test_logit_loss_zero_for_identical_logits():
    z = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
    assert abs(loss_logit(z, z, 6.0).item()) < 1e-7


def test_logit_loss_two_class_closed_form():
    tau = 2.0
    got = loss_logit(Tensor([[2.0, 0.0]], dtype=np.float64), Tensor([[0.0, 0.0]], dtype=np.float64), tau).item()
    p1 = math.exp(1.0) / (math.exp(1.0) + 1.0)
    p = [p1, 1 - p1]
    kl = sum(pi * math.log(pi / 0.5) for pi in p)
    assert got == pytest.approx(tau * tau * kl, abs=1e-9)


def test_logit_loss_finite_over_sweep_grid():
    rng = np.random.default_rng(5)
    zt, zs = Tensor(rng.normal(0, 10, (8, 8))), Tensor(rng.normal(0, 10, (8, 8)))
    for tau in (1, 2, 4, 6, 8, 10, 12):
        v = loss_logit(zt, zs, float(tau)).item()
        assert np.isfinite(v) and v >= -1e-7


def test_logit_loss_gradient_reaches_student_only():
    rng = np.random.default_rng(6)
    zt = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    zs = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    loss_logit(zt, zs, 3.0).backward()
    assert zt.grad is None
    assert zs.grad is not None and np.abs(zs.grad).sum() > 0


def test_logit_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        loss_logit(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 2.0)


def test_attn_loss_identities():
    rng = np.random.default_rng(7)
    p = softmax(Tensor(rng.normal(size=(3, 50))), axis=1)
    assert abs(loss_attn(p, p).item()) < 1e-7
    k = 37
    one_hot = np.zeros((2, k))
    one_hot[:, 3] = 1.0
    uniform = np.full((2, k), 1.0 / k)
    assert loss_attn(Tensor(one_hot, dtype=np.float64), Tensor(uniform, dtype=np.float64)).item() == pytest.approx(
        math.log(k), abs=1e-5
    )


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    p = softmax(Tensor(rng.normal(0, 3, (2, 20))), axis=1)
    q = softmax(Tensor(rng.normal(0, 3, (2, 20))), axis=1)
    assert loss_attn(p, q).item() >= -1e-7
    assert loss_logit(Tensor(rng.normal(0, 3, (2, 6))), Tensor(rng.normal(0, 3, (2, 6))), 4.0).item() >= -1e-7


def test_attn_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        loss_attn(Tensor(np.full((1, 4), 0.25)), Tensor(np.full((1, 5), 0.2)))


def test_loss_total_weights():
    one, two, three = (Tensor(np.array(v)) for v in (1.0, 2.0, 3.0))
    assert loss_total(one, two, three, 0.7, 0.3).item() == pytest.approx(3.3)
    assert loss_total(one, two, three, 0.0, 0.0).item() == 1.0


def test_loss_total_decomposes():
    rng = np.random.default_rng(8)
    zt, zs = Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(4, 5)))
    y = rng.integers(0, 5, 4)
    pt = softmax(Tensor(rng.normal(size=(4, 30))), axis=1)
    ps = softmax(Tensor(rng.normal(size=(4, 30))), axis=1)
    parts = (loss_ce(zs, y), loss_logit(zt, zs, 6.0), loss_attn(pt, ps))
    fused = loss_total(*parts, 0.7, 0.3).item()
    assert fused == pytest.approx(parts[0].item() + 0.7 * parts[1].item() + 0.3 * parts[2].item(), abs=1e-6)


def _objective_fixture():
    rng = np.random.default_rng(9)
    teacher = TeacherModel(TINY_T, seed=1)
    teacher.freeze()
    student = StudentModel(TINY_S, seed=2)
    ad = ChannelAdapters(1, TINY_S.widths[-1], 4, rng)
    x = Tensor(rng.random((3, 3, 16, 16)))
    y = np.array([0, 1, 2])
    with no_grad():
        zt, at = teacher(x)
        mt = teacher_attention_to_spatial(at)
    return student, ad, x, y, zt, mt


def test_full_objective_passes_grad_check():
    with default_dtype(np.float64):
        student, ad, x, y, zt, mt = _objective_fixture()
        params = list(student.named_parameters()) + [("adapter." + n, p) for n, p in ad.named_parameters()]
        worst = 0.0
        for name, p in params:

            def f(_):
                zs, feat = student(x)
                return loss_total(loss_ce(zs, y), loss_logit(zt, zs, 4.0), loss_attn(*align(mt, feat, ad)), 0.7, 0.3)

            worst = max(worst, grad_check(f, p, 1e-6, max_elements=6, rng=np.random.default_rng(len(name))))
        assert worst < 1e-4


def test_teacher_outputs_are_detached():
    with default_dtype(np.float64):
        teacher = TeacherModel(TINY_T, seed=1)
        teacher.freeze()
        student = StudentModel(TINY_S, seed=2)
        ad = ChannelAdapters(1, 8, 4, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((2, 3, 16, 16)))
        y = np.array([0, 1])

        def student_grads():
            with no_grad():
                zt, at = teacher(x)
                mt = teacher_attention_to_spatial(at)
            zs, feat = student(x)
            student.zero_grad()
            loss_total(loss_ce(zs, y), loss_logit(zt, zs, 4.0), loss_attn(*align(mt, feat, ad)), 0.7, 0.3).backward()
            return zt, mt, [p.grad.copy() for p in student.parameters()]

        with no_grad():
            zt, at = teacher(x)
            mt = teacher_attention_to_spatial(at)
        zs, feat = student(x)
        loss = loss_total(loss_ce(zs, y), loss_logit(zt, zs, 4.0), loss_attn(*align(mt, feat, ad)), 0.7, 0.3)
        for p in teacher.parameters():
            p.data += 1.0  # perturb after extraction
        student.zero_grad()
        loss.backward()
        g1 = [p.grad.copy() for p in student.parameters()]
        for p in teacher.parameters():
            p.data -= 1.0
        _, _, g2 = student_grads()
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, atol=1e-12)
        assert all(p.grad is None for p in teacher.parameters())


# -- training loops --------------------------------------------------------------------------


def test_zero_weights_reduce_to_supervised_bit_identically():
    data = tiny_data()
    teacher = TeacherModel(TINY_T, seed=0)
    teacher.freeze()
    cfg = tiny_cfg(alpha=0.0, beta=0.0, augment=True)
    s1, s2 = StudentModel(TINY_S, seed=5), StudentModel(TINY_S, seed=5)
    r1 = train_supervised(s1, data, cfg)
    r2 = run_distillation(teacher, s2, data, cfg)
    assert abs(r1.history[0].loss_total - r2.history[0].loss_total) < 1e-6
    assert [e.loss_total for e in r1.history] == [e.loss_total for e in r2.history]
    for (n1, p1), (n2, p2) in zip(s1.named_parameters(), s2.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    assert r1.csv_text() == r2.csv_text()


def test_distillation_leaves_teacher_untouched_and_logs_all_losses():
    data = tiny_data()
    teacher = TeacherModel(TINY_T, seed=0)
    teacher.freeze()
    before = parameters_checksum(teacher)
    x = Tensor(data.images[:4])
    with no_grad():
        z_before = teacher(x)[0].data.copy()
    rep = run_distillation(teacher, StudentModel(TINY_S, seed=1), data, tiny_cfg())
    assert parameters_checksum(teacher) == before
    with no_grad():
        assert np.array_equal(teacher(x)[0].data, z_before)
    e = rep.history[0]
    assert e.loss_logit > 0 and e.loss_attn > 0
    assert e.loss_total == pytest.approx(e.loss_ce + 0.7 * e.loss_logit + 0.3 * e.loss_attn, rel=1e-6)
    assert rep.csv_text().splitlines()[0] == "epoch,loss_total,loss_ce,loss_logit,loss_attn,val_acc,val_f1"


def test_zero_weight_component_logged_but_not_trained():
    data = tiny_data()
    teacher = TeacherModel(TINY_T, seed=0)
    teacher.freeze()
    cfg = tiny_cfg(beta=0.0)
    s_logit = StudentModel(TINY_S, seed=1)
    rep = run_distillation(teacher, s_logit, data, cfg)
    e = rep.history[0]
    assert e.loss_attn > 0
    assert e.loss_total == pytest.approx(e.loss_ce + 0.7 * e.loss_logit, rel=1e-6)


def test_cached_teacher_matches_on_the_fly():
    data = tiny_data()
    teacher = TeacherModel(TINY_T, seed=0)
    teacher.freeze()
    r1 = run_distillation(teacher, StudentModel(TINY_S, seed=1), data, tiny_cfg(cache_teacher=False))
    r2 = run_distillation(teacher, StudentModel(TINY_S, seed=1), data, tiny_cfg(cache_teacher=True))
    for a, b in zip(r1.history, r2.history):
        assert a.loss_total == pytest.approx(b.loss_total, rel=1e-5)


def test_early_stopping_halts_within_patience():
    data = tiny_data()
    cfg = tiny_cfg(epochs=40, early_stop_patience=2, optimizer={"lr": 1e-6})
    rep = train_supervised(StudentModel(TINY_S, seed=0), data, cfg)
    assert rep.stopped_epoch - rep.best_epoch <= 2
    assert rep.stopped_epoch < 40


def test_best_weights_restored():
    data = tiny_data()
    student = StudentModel(TINY_S, seed=0)
    rep = train_supervised(student, data, tiny_cfg(epochs=4))
    best = rep.history[rep.best_epoch - 1].val_acc
    assert rep.val["accuracy"] == pytest.approx(best)


def test_divergence_names_epoch():
    data = tiny_data()
    student = StudentModel(TINY_S, seed=0)
    student.head.weight.data[...] = np.nan
    with pytest.raises(TrainingError, match="epoch 1"):
        train_supervised(student, data, tiny_cfg())


def test_empty_split_is_data_error():
    data = tiny_data()
    data.val = np.array([], dtype=np.int64)
    with pytest.raises(DataError):
        train_supervised(StudentModel(TINY_S, seed=0), data, tiny_cfg())


def test_teacher_pretrain_freezes_and_learns():
    data = tiny_data(n_per_class=20)
    teacher = TeacherModel(TINY_T, seed=0)
    rep = run_teacher_pretrain(teacher, data, tiny_cfg(epochs=6, teacher_loss="ce"))
    assert teacher.frozen
    assert rep.history[-1].loss_ce < rep.history[0].loss_ce
    with pytest.raises(ConfigError):
        run_teacher_pretrain(teacher, data, tiny_cfg())


def test_class_count_mismatch_rejected():
    data = tiny_data(n_classes=4)
    with pytest.raises(ConfigError):
        train_supervised(StudentModel(TINY_S, seed=0), data, tiny_cfg())


def test_tape_empty_after_training():
    train_supervised(StudentModel(TINY_S, seed=0), tiny_data(), tiny_cfg(epochs=1))
    assert len(get_tape()) == 0


# -- configuration ---------------------------------------------------------------------------


def test_config_defaults():
    cfg = DistillConfig()
    assert (cfg.tau, cfg.alpha, cfg.beta, cfg.batch_size, cfg.epochs) == (6.0, 0.7, 0.3, 32, 60)
    assert cfg.optimizer.weight_decay == 0.01 and cfg.optimizer.lr == 1e-3
    assert cfg.early_stop_patience == 8 and cfg.common_channels == 32


@pytest.mark.parametrize("mode,weights", [("none", (0, 0)), ("logit", (0.7, 0)), ("attn", (0, 0.3)), ("hybrid", (0.7, 0.3))])
def test_mode_masks(mode, weights):
    cfg = DistillConfig().with_mode(mode)
    assert (cfg.alpha, cfg.beta) == weights
    assert mode in MODES


@pytest.mark.parametrize("bad", [{"tau": 0.0}, {"alpha": -1}, {"beta": -0.1}, {"batch_size": 0}, {"teacher_loss": "mse"}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        DistillConfig(**bad)


def test_config_round_trip_and_unknown_keys():
    cfg = DistillConfig(tau=2.0, seed=3)
    assert DistillConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        DistillConfig.from_dict({"temperature": 2})
    with pytest.raises(ConfigError):
        DistillConfig().with_mode("feature")
