import numpy as np
import pytest

from roisgan import tensor as T
from roisgan.losses import LossWeights, generator_loss
from roisgan.models import (DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator,
                            discriminator_forward, generator_forward)
from roisgan.tensor import ConfigurationError, Tape, Tensor
from roisgan.tensor.gradcheck import numerical_grad, relative_error


def conv_count(ci, co, k):
    return co * ci * k * k + co


def block_count(ci, co, norm):
    n = conv_count(ci, co, 3) + conv_count(co, co, 3)
    return n + (4 * co if norm else 0)


def generator_count(cin, w):
    widths = [w * 2 ** i for i in range(5)]
    n, c = 0, cin
    for i in range(4):
        n += block_count(c, widths[i], True)
        c = widths[i]
    n += block_count(widths[3], widths[4], True)
    for i in reversed(range(4)):
        n += widths[i + 1] * widths[i] * 4 + widths[i]
        n += block_count(2 * widths[i], widths[i], True)
    return n + conv_count(widths[0], 1, 1)


def discriminator_count(w):
    widths = [w, 2 * w, 4 * w]
    n = block_count(1, w, False) + block_count(w, 2 * w, False) + block_count(2 * w, 4 * w, False)
    for i in reversed(range(2)):
        n += widths[i + 1] * widths[i] * 4 + widths[i]
        n += block_count(2 * widths[i], widths[i], False)
    return n + conv_count(w, 1, 1)


def pooled_shapes(monkeypatch, fn):
    """Run ``fn`` while recording the input shape of every max-pool call."""
    seen = []
    orig = T.maxpool2x2

    def spy(x):
        seen.append(x.shape)
        return orig(x)

    monkeypatch.setattr(T, "maxpool2x2", spy)
    out = fn()
    return out, seen


@pytest.mark.parametrize("w,cin", [(2, 3), (8, 3), (4, 1)])
def test_generator_param_count_matches_ladder(w, cin):
    p = build_generator(GeneratorConfig(cin, w, 32), 0)
    full = p.count(include_buffers=True) - p.count()
    assert p.count() == generator_count(cin, w)
    assert full == sum(v.size for k, v in p.tensors.items() if "running" in k)


@pytest.mark.parametrize("w", [2, 8, 64])
def test_discriminator_param_count_matches_ladder(w):
    p = build_discriminator(DiscriminatorConfig(w, 64), 0)
    assert p.count() == discriminator_count(w)
    assert p.buffers() == {}


def test_desk_generator_ladder(monkeypatch):
    cfg = GeneratorConfig(3, 8, 64)
    p = build_generator(cfg, 1)
    assert [p[f"enc{i}.conv2.weight"].shape[0] for i in range(1, 5)] == [8, 16, 32, 64]
    assert p["enc1.conv1.weight"].shape[1] == 3
    assert p["bottleneck.conv2.weight"].shape[0] == 128
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32))
    _, shapes = pooled_shapes(monkeypatch, lambda: generator_forward(p, x))
    # the last pool feeds the bottleneck
    assert shapes[-1][2:] == (8, 8)
    assert [s[1] for s in shapes] == [8, 16, 32, 64]
    assert shapes[-1][2] // 2 == 4


def test_reference_generator_ladder():
    p = build_generator(GeneratorConfig(3, 64, 256), 0)
    ladder = [p["enc1.conv1.weight"].shape[1]] + [p[f"enc{i}.conv2.weight"].shape[0] for i in range(1, 5)]
    assert ladder == [3, 64, 128, 256, 512]
    assert p["bottleneck.conv2.weight"].shape[0] == 1024


def test_reference_generator_bottleneck_resolution(monkeypatch):
    # resolution depends only on depth, so a narrow network at 256 suffices
    p = build_generator(GeneratorConfig(3, 2, 256), 0)
    x = Tensor(np.zeros((1, 3, 256, 256), dtype=np.float32))
    out, shapes = pooled_shapes(monkeypatch, lambda: generator_forward(p, x))
    assert shapes[-1][2] // 2 == 16
    assert out.shape == (1, 1, 256, 256)


def test_desk_and_reference_discriminator_ladders(monkeypatch):
    desk = build_discriminator(DiscriminatorConfig(8, 64), 0)
    assert desk["enc1.conv1.weight"].shape[:2] == (8, 1)
    assert desk["enc2.conv2.weight"].shape[0] == 16
    assert desk["bottleneck.conv2.weight"].shape[0] == 32
    x = Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32))
    _, shapes = pooled_shapes(monkeypatch, lambda: discriminator_forward(desk, x))
    assert shapes[-1][2] // 2 == 16

    ref = build_discriminator(DiscriminatorConfig(64, 256), 0)
    assert [ref["enc1.conv2.weight"].shape[0], ref["enc2.conv2.weight"].shape[0]] == [64, 128]
    assert ref["bottleneck.conv2.weight"].shape[0] == 256
    # transpose kernels are (in, out, 2, 2)
    assert ref["up2.weight"].shape[:2] == (256, 128)
    assert ref["up1.weight"].shape[:2] == (128, 64)
    assert 256 // 4 == 64


def test_invalid_configs_rejected():
    with pytest.raises(ConfigurationError):
        build_generator(GeneratorConfig(3, 8, 72), 0)
    with pytest.raises(ConfigurationError):
        build_generator(GeneratorConfig(3, 1, 64), 0)
    with pytest.raises(ConfigurationError):
        build_discriminator(DiscriminatorConfig(8, 66), 0)
    with pytest.raises(ConfigurationError):
        build_discriminator(DiscriminatorConfig(8, 64, in_channels=3), 0)


def test_forward_shapes_ranges_and_errors():
    rng = np.random.default_rng(0)
    g = build_generator(GeneratorConfig(3, 4, 32), 0)
    x = Tensor(rng.standard_normal((3, 3, 32, 32)).astype(np.float32))
    for train in (True, False):
        y = generator_forward(g, x, train=train)
        assert y.shape == (3, 1, 32, 32)
        assert np.all((y.data > 0) & (y.data < 1))
    with pytest.raises(ConfigurationError):
        generator_forward(g, Tensor(np.zeros((1, 2, 32, 32), dtype=np.float32)))
    d = build_discriminator(DiscriminatorConfig(4, 32), 0)
    m = discriminator_forward(d, Tensor(rng.random((2, 1, 32, 32)).astype(np.float32)))
    assert m.shape == (2, 1, 32, 32)
    assert np.all((m.data > 0) & (m.data < 1))
    with pytest.raises(ConfigurationError):
        discriminator_forward(d, Tensor(np.zeros((2, 2, 32, 32), dtype=np.float32)))


def test_eval_forward_bitwise_repeatable_and_does_not_touch_buffers():
    g = build_generator(GeneratorConfig(3, 4, 32), 7)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32))
    before = g.digest()
    a = generator_forward(g, x).data
    b = generator_forward(g, x).data
    assert np.array_equal(a, b)
    assert g.digest() == before
    generator_forward(g, x, train=True)
    assert g.digest() != before


def test_build_is_deterministic_per_seed():
    cfg = GeneratorConfig(3, 4, 32)
    assert build_generator(cfg, 5).digest() == build_generator(cfg, 5).digest()
    assert build_generator(cfg, 5).digest() != build_generator(cfg, 6).digest()


def test_he_initialization_variance():
    cfg = GeneratorConfig(3, 8, 64)
    draws: dict[str, list] = {}
    seed = 0
    while True:
        p = build_generator(cfg, seed)
        for name, t in p.tensors.items():
            if name.endswith(".weight"):
                draws.setdefault(name, []).append(t.data.ravel())
        seed += 1
        if min(sum(len(a) for a in v) for v in draws.values()) >= 1000:
            break
    p = build_generator(cfg, 0)
    for name, chunks in draws.items():
        w = p[name]
        fan_in = w.shape[0] if name.startswith("up") else int(np.prod(w.shape[1:]))
        var = np.concatenate(chunks).astype(np.float64).var()
        ratio = var / (2.0 / fan_in)
        assert 0.5 < ratio < 2.0, (name, ratio)
    for name, t in p.tensors.items():
        if name.endswith(".bias") or name.endswith(".beta") or name.endswith("running_mean"):
            assert not t.data.any()
        if name.endswith(".gamma") or name.endswith("running_var"):
            assert np.all(t.data == 1)


def test_skip_connections_are_wired():
    rng = np.random.default_rng(2)
    g = build_generator(GeneratorConfig(3, 4, 32), 3)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)))
    g64 = g.astype(np.float64)
    base = generator_forward(g64, x).data
    for level in range(4):
        ablated = generator_forward(g64, x, skip_scale={level: 0.0}).data
        assert np.abs(ablated - base).max() > 1e-6, level
    d = build_discriminator(DiscriminatorConfig(4, 32), 3).astype(np.float64)
    m = Tensor(rng.random((2, 1, 32, 32)))
    base = discriminator_forward(d, m).data
    for level in range(2):
        assert np.abs(discriminator_forward(d, m, skip_scale={level: 0.0}).data - base).max() > 1e-9


def test_discriminator_input_gradient_finite_nonzero_and_matches_fd():
    rng = np.random.default_rng(4)
    d = build_discriminator(DiscriminatorConfig(4, 16), 9).astype(np.float64)
    mask = Tensor(rng.random((1, 1, 16, 16)), requires_grad=True)
    with Tape() as tape:
        loss = T.sum(discriminator_forward(d.frozen(), mask))
    tape.backward(loss)
    g = mask.grad
    assert np.all(np.isfinite(g)) and np.abs(g).max() > 0
    data = mask.data.copy()
    idx = [tuple(int(v) for v in np.unravel_index(i, data.shape)) for i in rng.choice(data.size, 12, replace=False)]

    def f():
        return float(discriminator_forward(d, Tensor(data)).data.sum())

    fd = numerical_grad(f, data, 1e-5, idx)
    assert relative_error(np.array([g[i] for i in idx]), fd) < 1e-4


def test_frozen_view_shares_storage_without_grads():
    d = build_discriminator(DiscriminatorConfig(4, 16), 0)
    f = d.frozen()
    assert all(not t.requires_grad for t in f.tensors.values())
    d["head.bias"].data += 1.0
    assert np.array_equal(f["head.bias"].data, d["head.bias"].data)


def test_generator_and_loss_gradient_on_micro_network():
    """Composite forward + generator objective against central differences (width 2)."""
    rng = np.random.default_rng(11)
    g = build_generator(GeneratorConfig(3, 2, 16), 21, dtype=np.float64)
    d = build_discriminator(DiscriminatorConfig(2, 16), 22, dtype=np.float64).frozen()
    x = Tensor(rng.standard_normal((2, 3, 16, 16)))
    y = Tensor((rng.random((2, 1, 16, 16)) > 0.6).astype(np.float64))
    w = LossWeights()

    def objective():
        y_p = generator_forward(g, x, train=True)
        return generator_loss(y, y_p, discriminator_forward(d, y_p), w)

    params = g.trainable()
    with Tape() as tape:
        loss = objective()
    tape.backward(loss)
    analytic, numeric = [], []

    def f():
        return float(objective().data)

    for name, p in params.items():
        k = min(p.size, 4)
        picks = rng.choice(p.size, k, replace=False)
        idx = [tuple(int(v) for v in np.unravel_index(i, p.shape)) for i in picks]
        analytic.extend(p.grad[i] for i in idx)
        # a narrow stencil keeps the differences clear of ReLU and max-pool kinks
        numeric.extend(numerical_grad(f, p.data, 1e-7, idx))
    assert relative_error(np.array(analytic), np.array(numeric)) < 1e-3
