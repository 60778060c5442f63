"""Joint optimization of templates, editor, encoder, and spatial estimates.

Model parameters take Adam steps against the summed log mixture evidence.
The per-example spatial estimates live in a table with one row per
(example, component) pair; each row gets one adaptive-moment update per
epoch, computed in units of the prior standard deviations so a single
step size works across rotation, offset, shear, and scale coordinates.

The KL term of the editor code is annealed linearly over the first
kl_warmup_epochs epochs. All randomness (batch order, code noise,
initialization) flows from one torch generator seeded by the config, so
two runs with equal inputs produce identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from glyphclust.corpus import GlyphImage
from glyphclust.mixture import (
    LambdaTable,
    MixtureState,
    batch_objective,
    component_elbo,
    init_mixture_state,
)
from glyphclust.warp import DEFAULT_BANDWIDTH, SpatialPrior

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    lambda_learning_rate: float = 1e-2
    kl_warmup_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0 or self.lambda_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.kl_warmup_epochs < 0:
            raise ValueError("kl_warmup_epochs must be non-negative")


class TrainResult(NamedTuple):
    state: MixtureState
    lambda_table: LambdaTable
    trace: list[dict]


def _stack_images(images) -> torch.Tensor:
    if torch.is_tensor(images):
        return images.to(torch.float64)
    if isinstance(images, np.ndarray):
        return torch.as_tensor(images, dtype=torch.float64)
    return torch.as_tensor(
        np.stack([im.pixels for im in images]), dtype=torch.float64
    )


class _RowAdam:
    """Adam over table rows where each step touches a subset of rows.

    Bias correction uses the per-row update count, so rows stay on the
    standard schedule even though only a batch of them moves at a time.
    """

    def __init__(self, shape, lr: float, dtype=torch.float64):
        self.lr = lr
        self.m = torch.zeros(shape, dtype=dtype)
        self.v = torch.zeros(shape, dtype=dtype)
        self.counts = torch.zeros(shape[0], dtype=torch.int64)

    def step(self, table: torch.Tensor, idx: torch.Tensor, grad: torch.Tensor):
        self.counts[idx] += 1
        t = self.counts[idx].to(table.dtype).reshape(-1, *([1] * (table.dim() - 1)))
        self.m[idx] = ADAM_B1 * self.m[idx] + (1 - ADAM_B1) * grad
        self.v[idx] = ADAM_B2 * self.v[idx] + (1 - ADAM_B2) * grad * grad
        mhat = self.m[idx] / (1 - ADAM_B1**t)
        vhat = self.v[idx] / (1 - ADAM_B2**t)
        table[idx] = table[idx] - self.lr * mhat / (torch.sqrt(vhat) + ADAM_EPS)


def train(
    images,
    variant: str,
    n_components: int,
    config: TrainConfig | None = None,
    prior: SpatialPrior | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
    z_dim: int = 32,
) -> TrainResult:
    """Fit one mixture variant to a stack of images.

    images may be a (N, H, H) array/tensor or a list of glyph records.
    Returns the fitted state, the table of spatial estimates (zeros for
    variants without spatial adjustment), and a per-epoch trace of the
    mean per-example objective.
    """
    cfg = config if config is not None else TrainConfig()
    x = _stack_images(images)
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one training image")

    gen = torch.Generator().manual_seed(cfg.seed)
    state = init_mixture_state(
        variant,
        n_components,
        canvas=x.shape[-1],
        generator=gen,
        init_images=x,
        z_dim=z_dim,
        bandwidth=bandwidth,
        prior=prior,
    )
    params = state.parameters()
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)

    k = state.n_components
    sig = state.prior.sigmas()  # lambda table kept in these units
    scaled = torch.zeros(n, k, 6, dtype=torch.float64)
    lam_opt = _RowAdam((n, k, 6), cfg.lambda_learning_rate)
    fit_lambda = state.uses_warp()
    use_noise = state.uses_editor()

    trace: list[dict] = []
    for epoch in range(cfg.epochs):
        if cfg.kl_warmup_epochs > 0:
            kl_weight = min(1.0, epoch / cfg.kl_warmup_epochs)
        else:
            kl_weight = 1.0
        perm = torch.randperm(n, generator=gen)
        epoch_obj = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            xb = x[idx]
            b = xb.shape[0]
            lam_b = (scaled[idx] * sig).requires_grad_(True)
            noise = (
                torch.randn(b, k, state.z_dim, generator=gen, dtype=torch.float64)
                if use_noise
                else None
            )
            obj = batch_objective(xb, state, lam_b, noise, kl_weight)
            loss = -obj / b
            if not math.isfinite(float(loss.detach())):
                raise RuntimeError(
                    f"non-finite objective at epoch {epoch}, batch start {lo}"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if fit_lambda:
                # chain rule into prior-scaled units
                lam_opt.step(scaled, idx, lam_b.grad * sig)
            epoch_obj += float(obj.detach())
        trace.append(
            {"epoch": epoch, "objective": epoch_obj / n, "kl_weight": kl_weight}
        )

    for p in params:
        p.requires_grad_(False)
    table = LambdaTable(values=scaled * sig if fit_lambda else torch.zeros(n, k, 6, dtype=torch.float64))
    return TrainResult(state=state, lambda_table=table, trace=trace)


def icm_step(
    x: torch.Tensor,
    state: MixtureState,
    k: int,
    lam: torch.Tensor,
    lr: float = 1e-2,
    max_halvings: int = 20,
) -> torch.Tensor:
    """One guarded ascent step on a single example's spatial estimate.

    Takes a gradient step on the component bound, preconditioned by the
    prior variances, halving the step until the bound improves. Returns
    the original estimate when no tried step improves it.
    """
    if isinstance(x, GlyphImage):
        x = torch.as_tensor(x.pixels, dtype=torch.float64)
    lam = torch.as_tensor(lam, dtype=torch.float64).reshape(6).clone()
    leaf = lam.clone().requires_grad_(True)
    e0 = component_elbo(x, state, k, leaf)
    e0.backward()
    direction = leaf.grad * state.prior.sigmas() ** 2
    base = float(e0.detach())
    step = lr
    with torch.no_grad():
        for _ in range(max_halvings):
            cand = lam + step * direction
            if float(component_elbo(x, state, k, cand)) > base:
                return cand
            step *= 0.5
    return lam
