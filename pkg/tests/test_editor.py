import math

import torch

from glyphclust.editor import (
    PROB_EPS,
    EditorPosterior,
    conv_features,
    encode_residual,
    filter_apply,
    init_editor,
    init_encoder,
    kl_to_prior,
    posterior_head,
    sample_latent,
)


def test_fresh_editor_is_identity_up_to_clamp():
    gen = torch.Generator().manual_seed(0)
    editor = init_editor(z_dim=4, generator=gen)
    t = torch.rand(3, 32, 32, generator=gen, dtype=torch.float64)
    z = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    out = filter_apply(t, z, editor)
    expected = torch.clamp(t, PROB_EPS, 1.0 - PROB_EPS)
    assert float((out - expected).abs().max()) < 1e-9


def test_editor_output_clamped():
    gen = torch.Generator().manual_seed(1)
    editor = init_editor(z_dim=4, generator=gen)
    editor.gen_b2 += 100.0  # push biases so logits saturate
    t = torch.rand(2, 16, 16, generator=gen, dtype=torch.float64)
    z = torch.randn(2, 4, generator=gen, dtype=torch.float64)
    out = filter_apply(t, z, editor)
    assert float(out.max()) <= 1.0 - PROB_EPS
    assert float(out.min()) >= PROB_EPS


def test_editor_depends_on_code_once_generator_nonzero():
    gen = torch.Generator().manual_seed(2)
    editor = init_editor(z_dim=4, generator=gen)
    editor.gen_w2 = torch.randn_like(editor.gen_w2) * 0.1
    t = torch.rand(1, 16, 16, generator=gen, dtype=torch.float64)
    z1 = torch.zeros(1, 4, dtype=torch.float64)
    z2 = torch.ones(1, 4, dtype=torch.float64)
    out1 = filter_apply(t, z1, editor)
    out2 = filter_apply(t, z2, editor)
    assert float((out1 - out2).abs().max()) > 1e-6


def test_grouped_conv_matches_per_example_loop():
    gen = torch.Generator().manual_seed(3)
    editor = init_editor(z_dim=4, generator=gen)
    editor.gen_w2 = torch.randn_like(editor.gen_w2) * 0.05
    editor.gen_b2 = torch.randn_like(editor.gen_b2) * 0.05
    t = torch.rand(5, 16, 16, generator=gen, dtype=torch.float64)
    z = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    batched = filter_apply(t, z, editor)
    for i in range(5):
        single = filter_apply(t[i : i + 1], z[i : i + 1], editor)
        assert float((batched[i] - single[0]).abs().max()) < 1e-12


def test_fresh_encoder_posterior_is_standard_normal():
    gen = torch.Generator().manual_seed(4)
    enc = init_encoder(canvas=32, n_components=3, z_dim=8, generator=gen)
    x = torch.rand(4, 32, 32, generator=gen, dtype=torch.float64)
    onehot = torch.eye(3, dtype=torch.float64)[torch.tensor([0, 1, 2, 0])]
    post = encode_residual(x, onehot, enc)
    assert post.mu.shape == (4, 8) and post.logvar.shape == (4, 8)
    assert float(post.mu.abs().max()) == 0.0
    assert float(post.logvar.abs().max()) == 0.0
    assert float(kl_to_prior(post).abs().max()) == 0.0


def test_encoder_head_sees_component_indicator():
    gen = torch.Generator().manual_seed(5)
    enc = init_encoder(canvas=32, n_components=2, z_dim=4, generator=gen)
    enc.head_w = torch.randn_like(enc.head_w) * 0.01
    x = torch.rand(1, 32, 32, generator=gen, dtype=torch.float64)
    feats = conv_features(x, enc)
    p0 = posterior_head(feats, torch.tensor([[1.0, 0.0]], dtype=torch.float64), enc)
    p1 = posterior_head(feats, torch.tensor([[0.0, 1.0]], dtype=torch.float64), enc)
    assert float((p0.mu - p1.mu).abs().max()) > 1e-8


def test_split_encoder_matches_fused_call():
    gen = torch.Generator().manual_seed(6)
    enc = init_encoder(canvas=32, n_components=2, z_dim=4, generator=gen)
    enc.head_w = torch.randn_like(enc.head_w) * 0.01
    x = torch.rand(3, 32, 32, generator=gen, dtype=torch.float64)
    onehot = torch.tensor([[1.0, 0.0]] * 3, dtype=torch.float64)
    fused = encode_residual(x, onehot, enc)
    split = posterior_head(conv_features(x, enc), onehot, enc)
    assert torch.equal(fused.mu, split.mu)
    assert torch.equal(fused.logvar, split.logvar)


def test_sample_latent_reparameterization():
    mu = torch.tensor([[1.0, -2.0]], dtype=torch.float64)
    lv = torch.tensor([[0.0, math.log(4.0)]], dtype=torch.float64)
    post = EditorPosterior(mu=mu, logvar=lv)
    noise = torch.tensor([[0.5, -1.0]], dtype=torch.float64)
    z = sample_latent(post, noise=noise)
    assert torch.allclose(z, torch.tensor([[1.5, -4.0]], dtype=torch.float64))
    # no generator and no noise: deterministic posterior mean
    assert torch.equal(sample_latent(post), mu)


def test_sample_latent_generator_reproducible():
    post = EditorPosterior(
        mu=torch.zeros(2, 3, dtype=torch.float64),
        logvar=torch.zeros(2, 3, dtype=torch.float64),
    )
    a = sample_latent(post, generator=torch.Generator().manual_seed(9))
    b = sample_latent(post, generator=torch.Generator().manual_seed(9))
    assert torch.equal(a, b)
    assert float(a.abs().max()) > 0.0


def test_kl_closed_form():
    mu = torch.tensor([[0.3, -0.7]], dtype=torch.float64)
    lv = torch.tensor([[0.2, -0.5]], dtype=torch.float64)
    expected = 0.5 * sum(
        m * m + math.exp(v) - 1.0 - v for m, v in [(0.3, 0.2), (-0.7, -0.5)]
    )
    got = float(kl_to_prior(EditorPosterior(mu=mu, logvar=lv))[0])
    assert abs(got - expected) < 1e-12


def test_kl_nonnegative_random():
    gen = torch.Generator().manual_seed(7)
    mu = torch.randn(50, 6, generator=gen, dtype=torch.float64)
    lv = torch.randn(50, 6, generator=gen, dtype=torch.float64)
    kl = kl_to_prior(EditorPosterior(mu=mu, logvar=lv))
    assert float(kl.min()) >= 0.0


def test_editor_tensors_lists_trainables():
    editor = init_editor(z_dim=4)
    ts = editor.tensors()
    assert len(ts) == 6
    assert all(torch.is_tensor(t) for t in ts)
    enc = init_encoder(canvas=32, n_components=2, z_dim=4)
    assert len(enc.tensors()) == 6
