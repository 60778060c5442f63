"""End-to-end acceptance checks for the typeface clustering experiment.

Eight checks, each printed as one PASS/FAIL line. The first two and the
alignment-variance check share one session-scoped grid that trains every
model variant on every character class and seed; the others are
self-contained numerical oracles.
"""

import json
import math
import subprocess
import sys
import time
from collections import Counter
from itertools import combinations

import numpy as np
import pytest
import torch

from glyphclust.editor import (
    filter_apply,
    init_editor,
    init_encoder,
    encode_residual,
    kl_to_prior,
)
from glyphclust.metrics import contingency, fowlkes_mallows, mutual_info, v_measure
from glyphclust.mixture import (
    assign_cluster,
    batch_objective,
    bernoulli_loglik,
    init_mixture_state,
    nll_bound,
)
from glyphclust.synth import PerturbConfig, generate_corpus
from glyphclust.training import TrainConfig, train
from glyphclust.warp import (
    SpatialParams,
    align_stack,
    build_attention,
    warp,
    warp_tensor,
)

# Frozen experiment grid. Three character classes, three casts each, 100
# examples per cast, five model variants, three seeds.
GRID_CLASSES = ["H", "M", "N"]
GRID_SEEDS = [0, 1, 2]
VARIANTS = ["full", "no_residual", "lambda_only", "vae_only", "ocular"]
N_COMPONENTS = 3
PER_CAST = 100
PERTURB = dict(
    per_cast=PER_CAST,
    offset_px=3.4,
    rotation_rad=0.015,
    shear=0.008,
    scale=0.008,
    morph_kernels=(3,),
    morph_kinds=("erode", "dilate"),
    morph_strength=(0.0, 1.0),
    morph_kind_bias=0.7,
    noise_sigma=0.05,
)
EPOCHS = {
    "full": 250,
    "no_residual": 150,
    "lambda_only": 150,
    "vae_only": 900,
    "ocular": 40,
}
BATCH = 32
LR = 0.01
LAM_LR = 0.05
WARMUP = 20

RUNTIME_BUDGET_S = 45 * 60.0
RUNTIME_WORKERS = 4


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name} :: {detail}")
    assert ok, f"{name}: {detail}"


def _strictly_decreasing(vals) -> bool:
    return all(a > b for a, b in zip(vals, vals[1:]))


def _lpt_makespan(durations, workers: int) -> float:
    """Longest-processing-time schedule length on identical workers."""
    loads = [0.0] * workers
    for d in sorted(durations, reverse=True):
        loads[loads.index(min(loads))] += d
    return max(loads)


@pytest.fixture(scope="session")
def grid():
    """Train the full variant grid once; metrics, bounds, and timings."""
    cells = {}
    durations = []
    alignment = None
    for cls in GRID_CLASSES:
        for seed in GRID_SEEDS:
            images, _ = generate_corpus([cls], PerturbConfig(**PERTURB), seed=seed)
            x = torch.as_tensor(
                np.stack([im.pixels for im in images]), dtype=torch.float64
            )
            true = [im.true_font for im in images]
            for variant in VARIANTS:
                cfg = TrainConfig(
                    epochs=EPOCHS[variant],
                    batch_size=BATCH,
                    learning_rate=LR,
                    lambda_learning_rate=LAM_LR,
                    kl_warmup_epochs=WARMUP,
                    seed=seed,
                )
                t0 = time.perf_counter()
                result = train(x, variant, N_COMPONENTS, config=cfg)
                dt = time.perf_counter() - t0
                state, table = result.state, result.lambda_table
                preds = [
                    assign_cluster(x[i], state, table.values[i])
                    for i in range(len(true))
                ]
                ct = contingency(true, preds)
                cells[(cls, seed, variant)] = {
                    "v": v_measure(ct),
                    "mi": mutual_info(ct),
                    "fm": fowlkes_mallows(ct),
                    "nll": nll_bound(x, state, table),
                }
                durations.append(dt)
                if variant == "lambda_only" and alignment is None:
                    rows = np.stack(
                        [table.values[i, preds[i]].numpy() for i in range(len(true))]
                    )
                    alignment = (x.numpy(), rows)
    macro = {}
    for seed in GRID_SEEDS:
        for variant in VARIANTS:
            macro[(seed, variant)] = {
                m: float(
                    np.mean([cells[(c, seed, variant)][m] for c in GRID_CLASSES])
                )
                for m in ("v", "mi", "fm", "nll")
            }
    return {
        "cells": cells,
        "macro": macro,
        "durations": durations,
        "alignment": alignment,
    }


def test_clustering_recovery(grid):
    """Cast recovery: the full model separates casts and the ablation
    ordering full > no_residual > lambda_only > vae_only holds on most
    seeds; the whole grid fits a four-worker 45 minute budget."""
    macro = grid["macro"]
    v_full = [macro[(s, "full")]["v"] for s in GRID_SEEDS]
    floor_ok = float(np.mean(v_full)) >= 0.60 and sum(v >= 0.60 for v in v_full) >= 2

    ordered = ["full", "no_residual", "lambda_only", "vae_only"]
    seeds_ok = 0
    for s in GRID_SEEDS:
        if all(
            _strictly_decreasing([macro[(s, var)][m] for var in ordered])
            for m in ("v", "mi", "fm")
        ):
            seeds_ok += 1
    order_ok = seeds_ok >= 2

    makespan = _lpt_makespan(grid["durations"], RUNTIME_WORKERS)
    runtime_ok = makespan <= RUNTIME_BUDGET_S

    detail = (
        f"macro V(full) per seed {[round(v, 3) for v in v_full]}, "
        f"ordering holds on {seeds_ok}/{len(GRID_SEEDS)} seeds, "
        f"{RUNTIME_WORKERS}-worker makespan {makespan / 60:.1f} min"
    )
    _verdict("clustering-recovery", floor_ok and order_ok and runtime_ok, detail)


def test_likelihood_bound_ordering(grid):
    """Held-in NLL bounds: ocular > lambda_only > the editor variants by
    at least one nat each, and full not worse than no_residual, on most
    seeds."""
    macro = grid["macro"]
    seeds_ok = 0
    rows = []
    for s in GRID_SEEDS:
        nll = {v: macro[(s, v)]["nll"] for v in VARIANTS}
        ok = (
            nll["ocular"] >= nll["lambda_only"] + 1.0
            and nll["lambda_only"]
            >= max(nll["full"], nll["no_residual"], nll["vae_only"]) + 1.0
            and nll["full"] <= nll["no_residual"]
        )
        seeds_ok += ok
        rows.append(
            f"seed {s}: "
            + " ".join(f"{v}={nll[v]:.1f}" for v in VARIANTS)
            + (" ok" if ok else " BAD")
        )
    _verdict("nll-ordering", seeds_ok >= 2, "; ".join(rows))


def _fd_gradcheck(make_loss, params, n_per_param, rng, h=1e-4):
    """Central finite differences against autograd on sampled coordinates.

    Returns (points checked, worst relative error).
    """
    for p in params:
        p.requires_grad_(True)
    grads = torch.autograd.grad(make_loss(), params)
    checked, worst = 0, 0.0
    with torch.no_grad():
        for p, g, n in zip(params, grads, n_per_param):
            flat, gflat = p.view(-1), g.reshape(-1)
            take = min(n, flat.numel())
            for idx in rng.choice(flat.numel(), size=take, replace=False):
                orig = float(flat[idx])
                flat[idx] = orig + h
                f_plus = float(make_loss())
                flat[idx] = orig - h
                f_minus = float(make_loss())
                flat[idx] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                an = float(gflat[idx])
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-5)
                worst = max(worst, rel)
                checked += 1
    for p in params:
        p.requires_grad_(False)
    return checked, worst


def test_gradient_fidelity():
    """Analytic gradients match central finite differences (step 1e-4,
    relative error <= 1e-3) on 100+ coordinates across the warp, the
    editor, the encoder, and the end-to-end objective, within 2 min."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    gen = torch.Generator().manual_seed(11)
    total, worst = 0, 0.0

    # warp wrt templates and spatial parameters
    tmpl = torch.rand(2, 16, 16, generator=gen, dtype=torch.float64)
    lam_scale = torch.tensor([0.1, 3.0, 3.0, 0.1, 0.1, 0.1], dtype=torch.float64)
    lams = (torch.rand(2, 6, generator=gen, dtype=torch.float64) - 0.5) * lam_scale
    w_warp = torch.rand(2, 16, 16, generator=gen, dtype=torch.float64)

    n, r = _fd_gradcheck(
        lambda: (warp_tensor(tmpl, lams) * w_warp).sum(), [tmpl, lams], [10, 12], rng
    )
    total, worst = total + n, max(worst, r)

    # editor filter wrt its parameters and the codes
    editor = init_editor(z_dim=4, generator=gen)
    with torch.no_grad():
        editor.gen_w2 += 0.1 * torch.randn(
            editor.gen_w2.shape, generator=gen, dtype=torch.float64
        )
        editor.mix += 0.05 * torch.randn(
            editor.mix.shape, generator=gen, dtype=torch.float64
        )
    t_in = torch.rand(2, 8, 8, generator=gen, dtype=torch.float64)
    z_in = torch.randn(2, 4, generator=gen, dtype=torch.float64)
    w_ed = torch.rand(2, 8, 8, generator=gen, dtype=torch.float64)
    ed_params = list(editor.tensors()) + [z_in]

    n, r = _fd_gradcheck(
        lambda: (filter_apply(t_in, z_in, editor) * w_ed).sum(),
        ed_params,
        [3, 3, 3, 3, 3, 1, 6],
        rng,
    )
    total, worst = total + n, max(worst, r)

    # encoder wrt its parameters
    encoder = init_encoder(canvas=8, n_components=2, z_dim=4, generator=gen)
    with torch.no_grad():
        encoder.head_w += 0.05 * torch.randn(
            encoder.head_w.shape, generator=gen, dtype=torch.float64
        )
    x_enc = torch.rand(3, 8, 8, generator=gen, dtype=torch.float64)
    onehot = torch.eye(2, dtype=torch.float64)[torch.tensor([0, 1, 0])]
    w_mu = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    w_lv = torch.randn(3, 4, generator=gen, dtype=torch.float64)

    def enc_loss():
        post = encode_residual(x_enc, onehot, encoder)
        return (post.mu * w_mu).sum() + (post.logvar * w_lv).sum()

    n, r = _fd_gradcheck(enc_loss, list(encoder.tensors()), [3, 3, 3, 3, 3, 3], rng)
    total, worst = total + n, max(worst, r)

    # end-to-end objective wrt every parameter and the spatial table
    x_obj = (torch.rand(4, 16, 16, generator=gen, dtype=torch.float64) < 0.3).double()
    state = init_mixture_state(
        "full", 2, canvas=16, generator=gen, init_images=x_obj, z_dim=4
    )
    with torch.no_grad():
        state.editor.gen_w2 += 0.05 * torch.randn(
            state.editor.gen_w2.shape, generator=gen, dtype=torch.float64
        )
        state.encoder.head_w += 0.05 * torch.randn(
            state.encoder.head_w.shape, generator=gen, dtype=torch.float64
        )
    gamma = (torch.rand(4, 2, 6, generator=gen, dtype=torch.float64) - 0.5) * lam_scale
    noise = torch.randn(4, 2, 4, generator=gen, dtype=torch.float64)
    obj_params = state.parameters() + [gamma]

    n, r = _fd_gradcheck(
        lambda: batch_objective(x_obj, state, gamma, noise, kl_weight=0.7),
        obj_params,
        [4, 2] + [2] * 6 + [2] * 6 + [8],
        rng,
    )
    total, worst = total + n, max(worst, r)

    # discrete-grid variant objective wrt templates and mixing weights
    state_oc = init_mixture_state(
        "ocular", 2, canvas=16, generator=gen, init_images=x_obj
    )
    gamma_oc = torch.zeros(4, 2, 6, dtype=torch.float64)

    n, r = _fd_gradcheck(
        lambda: batch_objective(x_obj, state_oc, gamma_oc),
        state_oc.parameters(),
        [8, 2],
        rng,
    )
    total, worst = total + n, max(worst, r)

    elapsed = time.perf_counter() - t0
    ok = total >= 100 and worst <= 1e-3 and elapsed <= 120.0
    _verdict(
        "gradient-fd",
        ok,
        f"{total} coordinates, worst relative error {worst:.2e}, {elapsed:.1f}s",
    )


def test_warp_oracles():
    """Attention sanity: identity concentrates on the source pixel,
    integer offsets match a roll oracle, rows are normalized."""
    att = build_attention(SpatialParams(), canvas=32, bandwidth=0.3)
    self_weight = float(torch.diagonal(att.weights).min())
    ok_self = self_weight >= 0.98

    gen = torch.Generator().manual_seed(3)
    tmpl = torch.zeros(32, 32, dtype=torch.float64)
    tmpl[10:22, 10:22] = torch.rand(12, 12, generator=gen, dtype=torch.float64)
    worst_shift = 0.0
    for dh, dv in [(2, 0), (0, -3), (1, 1), (-2, 3), (3, -1)]:
        out = warp(tmpl, SpatialParams(o_h=float(dh), o_v=float(dv)))
        oracle = torch.roll(tmpl, shifts=(dv, dh), dims=(0, 1))
        worst_shift = max(worst_shift, float((out - oracle).abs().max()))
    ok_shift = worst_shift <= 0.05

    lam_scale = torch.tensor([0.06, 3.0, 3.0, 0.06, 0.06, 0.1], dtype=torch.float64)
    lams = (torch.rand(1000, 6, generator=gen, dtype=torch.float64) - 0.5) * 2 * lam_scale
    ones = torch.ones(1000, 32, 32, dtype=torch.float64)
    worst_sum = float((warp_tensor(ones, lams) - 1.0).abs().max())
    for i in range(0, 1000, 40):
        att_i = build_attention(lams[i], canvas=32, bandwidth=0.3)
        worst_sum = max(
            worst_sum, float((att_i.weights.sum(dim=1) - 1.0).abs().max())
        )
    ok_sum = worst_sum <= 1e-6

    detail = (
        f"identity self-weight {self_weight:.4f}, shift-oracle diff {worst_shift:.3f}, "
        f"row-sum error {worst_sum:.1e} over 1000 draws"
    )
    _verdict("warp-oracle", ok_self and ok_shift and ok_sum, detail)


def _plugin_entropy(labels) -> float:
    n = len(labels)
    return -sum((c / n) * math.log(c / n) for c in Counter(labels).values())


def _brute_mi(true, pred) -> float:
    n = len(true)
    joint = Counter(zip(true, pred))
    ct, cp = Counter(true), Counter(pred)
    return sum(
        (nij / n) * math.log(n * nij / (ct[a] * cp[b]))
        for (a, b), nij in joint.items()
    )


def _brute_v(true, pred) -> float:
    ht, hp = _plugin_entropy(true), _plugin_entropy(pred)
    hj = _plugin_entropy(list(zip(true, pred)))
    hom = 1.0 if ht == 0 else 1.0 - (hj - hp) / ht
    com = 1.0 if hp == 0 else 1.0 - (hj - ht) / hp
    if hom + com == 0.0:
        return 0.0
    return 2.0 * hom * com / (hom + com)


def _brute_fm(true, pred) -> float:
    idx = range(len(true))
    tp = sum(
        1 for i, j in combinations(idx, 2) if true[i] == true[j] and pred[i] == pred[j]
    )
    pt = sum(1 for i, j in combinations(idx, 2) if true[i] == true[j])
    pp = sum(1 for i, j in combinations(idx, 2) if pred[i] == pred[j])
    if pt == 0 or pp == 0:
        return 0.0
    return tp / math.sqrt(pt * pp)


def test_metric_oracles():
    """Clustering metrics agree with brute-force definitions on random
    labelings to 1e-12, and hit the closed-form cases exactly."""
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        true = rng.integers(0, rng.integers(1, 5), size=n).tolist()
        pred = rng.integers(0, rng.integers(1, 5), size=n).tolist()
        ct = contingency(true, pred)
        worst = max(
            worst,
            abs(mutual_info(ct) - _brute_mi(true, pred)),
            abs(v_measure(ct) - _brute_v(true, pred)),
            abs(fowlkes_mallows(ct) - _brute_fm(true, pred)),
        )
    ok_random = worst <= 1e-12

    perfect = [0, 1, 2, 0, 1, 2, 2]
    ct_perfect = contingency(perfect, perfect)
    single = contingency([0, 1, 2, 0, 1, 2], [0] * 6)
    indep = contingency([0, 0, 1, 1], [0, 1, 0, 1])
    ok_exact = (
        v_measure(ct_perfect) == 1.0
        and fowlkes_mallows(ct_perfect) == 1.0
        and v_measure(single) == 0.0
        and v_measure(indep) == 0.0
        and mutual_info(indep) == 0.0
    )

    detail = f"worst brute-force gap {worst:.2e}; closed forms exact: {ok_exact}"
    _verdict("metric-oracle", ok_random and ok_exact, detail)


def test_bound_below_marginal():
    """The single-draw objective really is a lower bound: its Monte Carlo
    mean stays below a 64-point quadrature of the log marginal."""
    gen = torch.Generator().manual_seed(5)
    data = (torch.rand(6, 8, 8, generator=gen, dtype=torch.float64) < 0.4).double()
    state = init_mixture_state(
        "vae_only", 1, canvas=8, generator=gen, init_images=data, z_dim=1
    )
    with torch.no_grad():
        state.editor.gen_w2 += 0.1 * torch.randn(
            state.editor.gen_w2.shape, generator=gen, dtype=torch.float64
        )
        state.encoder.head_w += 0.05 * torch.randn(
            state.encoder.head_w.shape, generator=gen, dtype=torch.float64
        )
    x = data[0]
    template = state.templates()[0]

    def loglik(codes: torch.Tensor) -> torch.Tensor:
        m = codes.shape[0]
        probs = filter_apply(template.unsqueeze(0).expand(m, 8, 8), codes, state.editor)
        return bernoulli_loglik(x.unsqueeze(0), probs)

    nodes, weights = np.polynomial.hermite.hermgauss(64)
    ll_nodes = loglik(
        torch.tensor(nodes * math.sqrt(2.0), dtype=torch.float64).reshape(-1, 1)
    )
    log_marginal = float(
        torch.logsumexp(
            torch.tensor(np.log(weights), dtype=torch.float64) + ll_nodes, dim=0
        )
    ) - 0.5 * math.log(math.pi)

    post = encode_residual(
        x.unsqueeze(0), torch.ones(1, 1, dtype=torch.float64), state.encoder
    )
    kl = float(kl_to_prior(post)[0])
    draws = 10_000
    eps = torch.randn(draws, 1, generator=gen, dtype=torch.float64)
    codes = post.mu + torch.exp(0.5 * post.logvar) * eps
    bounds = np.concatenate(
        [loglik(codes[i : i + 1000]).numpy() for i in range(0, draws, 1000)]
    ) - kl
    mean, se = float(bounds.mean()), float(bounds.std(ddof=1) / math.sqrt(draws))

    ok = mean <= log_marginal + 2.576 * se
    detail = (
        f"mean single-draw bound {mean:.4f} (se {se:.4f}) vs "
        f"quadrature log-marginal {log_marginal:.4f}"
    )
    _verdict("elbo-vs-marginal", ok, detail)


def test_alignment_variance_reduction(grid):
    """Undoing the inferred spatial transforms shrinks per-pixel variance
    of a class stack by at least 20%."""
    pixels, rows = grid["alignment"]
    unaligned = float(pixels.var(axis=0).mean())
    aligned = float(align_stack(pixels, rows).var(axis=0).mean())
    ok = aligned <= 0.80 * unaligned
    detail = (
        f"per-pixel variance {unaligned:.5f} unaligned vs {aligned:.5f} aligned "
        f"({100.0 * (1.0 - aligned / unaligned):.1f}% lower)"
    )
    _verdict("alignment-variance", ok, detail)


def test_end_to_end_determinism(tmp_path):
    """Two fresh subprocess runs of synth, train, and eval produce
    byte-identical corpora, checkpoints, and reports."""
    cfg = {
        "classes": ["F"],
        "perturb": {"per_cast": 6},
        "data": "corpus/manifest.jsonl",
        "train": {"epochs": 3, "batch_size": 8},
        "variant": "lambda_only",
        "k": 2,
        "seed": 1,
    }
    runs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        cfg_path = d / "config.json"
        cfg_path.write_text(json.dumps(cfg))
        for cmd in (
            ["synth", "--config", str(cfg_path), "--out", str(d / "corpus")],
            ["train", "--config", str(cfg_path), "--out", str(d / "model.ckpt")],
            [
                "eval",
                "--config",
                str(cfg_path),
                "--checkpoint",
                str(d / "model.ckpt"),
                "--out",
                str(d / "report.json"),
            ],
        ):
            proc = subprocess.run(
                [sys.executable, "-m", "glyphclust.cli"] + cmd,
                capture_output=True,
                text=True,
            )
            assert proc.returncode == 0, proc.stderr
        runs.append(d)

    a, b = runs
    same_manifest = (a / "corpus" / "manifest.jsonl").read_bytes() == (
        b / "corpus" / "manifest.jsonl"
    ).read_bytes()
    names = sorted(p.name for p in (a / "corpus" / "images").iterdir())
    same_images = all(
        (a / "corpus" / "images" / n).read_bytes()
        == (b / "corpus" / "images" / n).read_bytes()
        for n in names
    )
    same_ckpt = (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
    same_report = (a / "report.json").read_bytes() == (b / "report.json").read_bytes()

    ok = same_manifest and same_images and same_ckpt and same_report
    detail = (
        f"manifest {same_manifest}, {len(names)} images {same_images}, "
        f"checkpoint {same_ckpt}, report {same_report}"
    )
    _verdict("determinism", ok, detail)
