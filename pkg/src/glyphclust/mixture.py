"""Mixture of glyph templates with interpretable spatial latents.

Each of K components carries a template of per-pixel ink probabilities.
An image is explained by choosing a component, spatially adjusting its
template (rotation, offsets, shears, scale), applying a residual editor
driven by a Gaussian code z, and emitting pixels as Bernoulli draws.

The training objective sums, over examples, the log of a softmax-weighted
exponential of per-component evidence bounds: for component k the bound
is the Bernoulli log likelihood of the edited template plus the log prior
of the spatial parameters minus the KL of the code posterior, with the
spatial parameters treated as point estimates.

Variants share this scaffold:
  full         warp + editor, encoder sees the residual image
  no_residual  warp + editor, encoder sees the raw image
  vae_only     editor only, no spatial adjustment
  lambda_only  warp only, no editor
  ocular       discrete integer offsets and inking exponents, no editor;
               evidence is an exact sum over the discrete grid
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from glyphclust.editor import (
    PROB_EPS,
    Z_DIM,
    EditorParams,
    EncoderParams,
    conv_features,
    filter_apply,
    init_editor,
    init_encoder,
    kl_to_prior,
    posterior_head,
    sample_latent,
)
from glyphclust.warp import (
    DEFAULT_BANDWIDTH,
    SpatialParams,
    SpatialPrior,
    log_prior_tensor,
    warp_tensor,
)

VARIANTS = ("full", "no_residual", "vae_only", "lambda_only", "ocular")

# discrete search grid for the ocular variant
OCULAR_SHIFTS = (-2, -1, 0, 1, 2)
OCULAR_GAMMAS = (0.5, 0.75, 1.0, 1.25, 1.5)


@dataclass
class MixtureState:
    """All learnable pieces of one mixture model."""

    variant: str
    template_logits: torch.Tensor  # (K, H, H)
    mix_logits: torch.Tensor  # (K,)
    editor: EditorParams | None = None
    encoder: EncoderParams | None = None
    prior: SpatialPrior = field(default_factory=SpatialPrior)
    bandwidth: float = DEFAULT_BANDWIDTH
    z_dim: int = Z_DIM

    @property
    def n_components(self) -> int:
        return self.template_logits.shape[0]

    @property
    def canvas(self) -> int:
        return self.template_logits.shape[-1]

    def templates(self) -> torch.Tensor:
        """Per-pixel ink probabilities, (K, H, H)."""
        return torch.sigmoid(self.template_logits)

    def log_mixing(self) -> torch.Tensor:
        return torch.log_softmax(self.mix_logits, dim=0)

    def uses_warp(self) -> bool:
        return self.variant in ("full", "no_residual", "lambda_only")

    def uses_editor(self) -> bool:
        return self.variant in ("full", "no_residual", "vae_only")

    def parameters(self) -> list[torch.Tensor]:
        out = [self.template_logits, self.mix_logits]
        if self.uses_editor():
            out += self.editor.tensors() + self.encoder.tensors()
        return out


@dataclass
class LambdaTable:
    """Point estimates of spatial parameters, one row per (example, component)."""

    values: torch.Tensor  # (N, K, 6)

    def row(self, n: int) -> torch.Tensor:
        return self.values[n]

    @staticmethod
    def zeros(n: int, k: int, dtype=torch.float64) -> "LambdaTable":
        return LambdaTable(values=torch.zeros(n, k, 6, dtype=dtype))


def init_mixture_state(
    variant: str,
    n_components: int,
    canvas: int = 32,
    generator: torch.Generator | None = None,
    init_images: torch.Tensor | None = None,
    z_dim: int = Z_DIM,
    bandwidth: float = DEFAULT_BANDWIDTH,
    prior: SpatialPrior | None = None,
    dtype=torch.float64,
) -> MixtureState:
    """Build a fresh state.

    Templates start at the logit of the mean of up to 20 of the provided
    images (a faint average glyph) plus small uniform noise to break the
    symmetry between components; without images they start near 0.5 ink
    probability. Mixing starts uniform.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if n_components < 1:
        raise ValueError("n_components must be at least 1")

    if init_images is not None:
        n = init_images.shape[0]
        take = min(20, n)
        if generator is None:
            pick = torch.arange(take)
        else:
            pick = torch.randperm(n, generator=generator)[:take]
        mean = init_images[pick].to(dtype).mean(dim=0).clamp(0.02, 0.98)
        base = torch.log(mean / (1.0 - mean))
    else:
        base = torch.zeros(canvas, canvas, dtype=dtype)
    noise = (
        torch.rand(n_components, canvas, canvas, generator=generator, dtype=dtype)
        - 0.5
    ) * 0.1
    logits = base.unsqueeze(0) + noise

    editor = encoder = None
    if variant in ("full", "no_residual", "vae_only"):
        editor = init_editor(z_dim=z_dim, generator=generator, dtype=dtype)
        encoder = init_encoder(
            canvas, n_components, z_dim=z_dim, generator=generator, dtype=dtype
        )
    return MixtureState(
        variant=variant,
        template_logits=logits,
        mix_logits=torch.zeros(n_components, dtype=dtype),
        editor=editor,
        encoder=encoder,
        prior=prior if prior is not None else SpatialPrior(),
        bandwidth=bandwidth,
        z_dim=z_dim,
    )


def bernoulli_loglik(x: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Sum over pixels of x*log(p) + (1-x)*log(1-p); batched over leading dims.

    Accepts real-valued x in [0, 1] (the cross entropy generalizes the
    binary case). Probabilities must already be bounded away from 0 and 1.
    """
    ll = x * torch.log(probs) + (1.0 - x) * torch.log1p(-probs)
    return ll.sum(dim=(-2, -1))


def _edited_probs(
    x: torch.Tensor,
    state: MixtureState,
    lams: torch.Tensor,
    noise: torch.Tensor | None,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Shared forward pass: (B, K, H, W) edited probabilities and (B, K) KL.

    x is (B, H, W); lams is (B, K, 6). KL is None for variants without an
    editor. The noise tensor, when given, is (B, K, z_dim); None means
    zero noise (posterior mean).
    """
    b, h, w = x.shape
    k = state.n_components
    templates = state.templates()
    flat_t = templates.unsqueeze(0).expand(b, k, h, w).reshape(b * k, h, w)

    if state.uses_warp():
        t_tilde = warp_tensor(flat_t, lams.reshape(b * k, 6), state.bandwidth)
    else:
        t_tilde = flat_t

    if not state.uses_editor():
        probs = torch.clamp(t_tilde, PROB_EPS, 1.0 - PROB_EPS)
        return probs.reshape(b, k, h, w), None

    onehot = torch.eye(k, dtype=x.dtype).unsqueeze(0).expand(b, k, k).reshape(b * k, k)
    if state.variant == "full":
        x_rep = x.unsqueeze(1).expand(b, k, h, w).reshape(b * k, h, w)
        feats = conv_features(x_rep - t_tilde, state.encoder)
    else:
        # encoder input does not depend on the component: run convs once
        f = conv_features(x, state.encoder)
        feats = f.unsqueeze(1).expand(b, k, f.shape[-1]).reshape(b * k, -1)
    post = posterior_head(feats, onehot, state.encoder)
    z = sample_latent(post, noise=None if noise is None else noise.reshape(b * k, -1))
    probs = filter_apply(t_tilde, z, state.editor)
    return probs.reshape(b, k, h, w), kl_to_prior(post).reshape(b, k)


def elbo_components(
    x: torch.Tensor,
    state: MixtureState,
    lams: torch.Tensor,
    noise: torch.Tensor | None = None,
    kl_weight: float = 1.0,
) -> torch.Tensor:
    """Per-component evidence bounds, (B, K), excluding mixing weights.

    Bound k for example n: Bernoulli log likelihood of the edited template
    plus log prior of lambda (warp variants) minus kl_weight times the KL
    of the code posterior (editor variants).
    """
    if state.variant == "ocular":
        return ocular_loglik(x, state)
    b, k = x.shape[0], state.n_components
    probs, kl = _edited_probs(x, state, lams, noise)
    bound = bernoulli_loglik(x.unsqueeze(1), probs)
    if state.uses_warp():
        bound = bound + log_prior_tensor(lams.reshape(b * k, 6), state.prior).reshape(b, k)
    if kl is not None:
        bound = bound - kl_weight * kl
    return bound


def component_elbo(
    x: torch.Tensor,
    state: MixtureState,
    k: int,
    lam: SpatialParams | torch.Tensor,
    noise: torch.Tensor | None = None,
    kl_weight: float = 1.0,
) -> torch.Tensor:
    """Evidence bound of one example under one component (scalar tensor)."""
    if not 0 <= k < state.n_components:
        raise ValueError(f"component index {k} out of range")
    kk = state.n_components
    if isinstance(lam, SpatialParams):
        lam = lam.to_tensor(dtype=x.dtype)
    lams = torch.zeros(1, kk, 6, dtype=x.dtype)
    lams[0, k] = lam
    nz = None
    if noise is not None:
        nz = torch.zeros(1, kk, noise.shape[-1], dtype=x.dtype)
        nz[0, k] = noise
    return elbo_components(x.unsqueeze(0), state, lams, nz, kl_weight)[0, k]


def _ocular_table(state: MixtureState) -> torch.Tensor:
    """Log likelihood table factors: (K, S, G, H, W) log probs and log(1-p).

    Shifted copies of each template (zero ink moves in from the border)
    raised to each inking exponent.
    """
    t = state.templates()
    k, h, w = t.shape
    shifts = []
    for dv in OCULAR_SHIFTS:
        for dh in OCULAR_SHIFTS:
            shifted = torch.zeros_like(t)
            src_r = slice(max(0, -dv), h - max(0, dv))
            dst_r = slice(max(0, dv), h - max(0, -dv))
            src_c = slice(max(0, -dh), w - max(0, dh))
            dst_c = slice(max(0, dh), w - max(0, -dh))
            shifted[:, dst_r, dst_c] = t[:, src_r, src_c]
            shifts.append(shifted)
    stack = torch.stack(shifts, dim=1)  # (K, S, H, W)
    gammas = torch.tensor(OCULAR_GAMMAS, dtype=t.dtype).reshape(1, 1, -1, 1, 1)
    inked = torch.clamp(stack.unsqueeze(2) ** gammas, PROB_EPS, 1.0 - PROB_EPS)
    return inked


def ocular_loglik(
    x: torch.Tensor, state: MixtureState, reduce: str = "sum"
) -> torch.Tensor:
    """Evidence of (B, H, W) images under each component, (B, K).

    Marginalizes the uniform discrete offset and inking grid exactly
    (reduce="sum"); reduce="max" instead scores the single best grid
    point, a lower bound on the evidence used for likelihood reporting.
    """
    if reduce not in ("sum", "max"):
        raise ValueError(f"reduce must be 'sum' or 'max', got {reduce!r}")
    table = _ocular_table(state)  # (K, S, G, H, W)
    k, s, g, h, w = table.shape
    flat = table.reshape(k * s * g, h * w)
    xf = x.reshape(x.shape[0], h * w)
    ll = xf @ torch.log(flat).T + (1.0 - xf) @ torch.log1p(-flat).T
    ll = ll.reshape(x.shape[0], k, s * g)
    log_unif = -float(np.log(s * g))
    if reduce == "max":
        return ll.max(dim=-1).values + log_unif
    return torch.logsumexp(ll, dim=-1) + log_unif


def batch_objective(
    x: torch.Tensor,
    state: MixtureState,
    lams: torch.Tensor,
    noise: torch.Tensor | None = None,
    kl_weight: float = 1.0,
) -> torch.Tensor:
    """Training objective: sum over examples of the log mixture evidence."""
    bounds = elbo_components(x, state, lams, noise, kl_weight)
    return torch.logsumexp(state.log_mixing().unsqueeze(0) + bounds, dim=1).sum()


def assign_cluster(
    x: torch.Tensor,
    state: MixtureState,
    lams: torch.Tensor | None = None,
) -> int:
    """Most likely component for one (H, W) image; ties go to the lowest index."""
    if lams is None:
        lams = torch.zeros(state.n_components, 6, dtype=x.dtype)
    with torch.no_grad():
        bounds = elbo_components(x.unsqueeze(0), state, lams.unsqueeze(0))
        scores = state.log_mixing() + bounds[0]
    return int(torch.argmax(scores))


def nll_bound(
    images: torch.Tensor,
    state: MixtureState,
    table: LambdaTable | None = None,
    batch: int = 64,
) -> float:
    """Mean negative log evidence bound per example, deterministic.

    Editor variants use the posterior mean code; the ocular variant scores
    its best discrete grid point rather than the exact marginal, so its
    value is an upper bound on the exact one.
    """
    n = images.shape[0]
    k = state.n_components
    if table is None:
        table = LambdaTable.zeros(n, k, dtype=images.dtype)
    log_mix = state.log_mixing()
    total = 0.0
    with torch.no_grad():
        for lo in range(0, n, batch):
            hi = min(n, lo + batch)
            xb = images[lo:hi]
            if state.variant == "ocular":
                bounds = ocular_loglik(xb, state, reduce="max")
            else:
                bounds = elbo_components(xb, state, table.values[lo:hi])
            total += float(-torch.logsumexp(log_mix + bounds, dim=1).sum())
    return total / n
