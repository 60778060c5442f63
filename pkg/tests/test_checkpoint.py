import pytest
import torch

from glyphclust.checkpoint import load_checkpoint, save_checkpoint
from glyphclust.mixture import LambdaTable, init_mixture_state, nll_bound


def make_state(variant, seed=0):
    gen = torch.Generator().manual_seed(seed)
    imgs = torch.rand(6, 16, 16, generator=gen, dtype=torch.float64)
    return init_mixture_state(variant, 2, canvas=16, generator=gen, init_images=imgs, z_dim=4)


def assert_states_equal(a, b):
    assert a.variant == b.variant
    assert a.bandwidth == b.bandwidth
    assert a.z_dim == b.z_dim
    assert torch.equal(a.template_logits, b.template_logits)
    assert torch.equal(a.mix_logits, b.mix_logits)
    assert a.prior == b.prior
    if a.editor is None:
        assert b.editor is None
    else:
        for x, y in zip(a.editor.tensors(), b.editor.tensors()):
            assert torch.equal(x, y)
        for x, y in zip(a.encoder.tensors(), b.encoder.tensors()):
            assert torch.equal(x, y)
        assert a.editor.n_kernels == b.editor.n_kernels
        assert a.editor.kernel_size == b.editor.kernel_size


@pytest.mark.parametrize("variant", ["full", "lambda_only", "ocular"])
def test_round_trip(tmp_path, variant):
    state = make_state(variant)
    table = LambdaTable(values=torch.randn(6, 2, 6, dtype=torch.float64))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, table, extra={"note": "x", "n": 3})
    back, back_table, meta = load_checkpoint(path)
    assert_states_equal(state, back)
    assert torch.equal(back_table.values, table.values)
    assert meta["extra"] == {"note": "x", "n": 3}
    assert meta["variant"] == variant


def test_round_trip_without_table(tmp_path):
    state = make_state("vae_only")
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state)
    back, table, _ = load_checkpoint(path)
    assert table is None
    assert_states_equal(state, back)


def test_loaded_state_scores_identically(tmp_path):
    state = make_state("full", seed=3)
    gen = torch.Generator().manual_seed(4)
    x = torch.rand(5, 16, 16, generator=gen, dtype=torch.float64)
    table = LambdaTable(values=torch.randn(5, 2, 6, generator=gen, dtype=torch.float64) * 0.02)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, table)
    back, back_table, _ = load_checkpoint(path)
    assert nll_bound(x, state, table) == nll_bound(x, back, back_table)


def test_repeated_saves_byte_identical(tmp_path):
    state = make_state("full", seed=5)
    table = LambdaTable.zeros(4, 2)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, state, table, extra={"k": 1})
    save_checkpoint(p2, state, table, extra={"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_save_load_save_byte_identical(tmp_path):
    state = make_state("no_residual", seed=6)
    p1 = tmp_path / "a.ckpt"
    save_checkpoint(p1, state)
    back, _, _ = load_checkpoint(p1)
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p2, back)
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_wrong_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(p)


def test_rejects_truncated_payload(tmp_path):
    state = make_state("lambda_only", seed=7)
    p = tmp_path / "model.ckpt"
    save_checkpoint(p, state)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(p)
