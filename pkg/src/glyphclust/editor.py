"""Residual editor: small learned corrections on top of the spatial warp.

A low-dimensional code z is decoded into a bank of convolution kernels;
the warped template is filtered with them and the mixed response is added
to the template's logits. With the kernel generator at zero output and
unit skip gain the editor is exactly the identity (up to probability
clamping), which is also how it is initialized.

The amortized encoder maps an input image (or the residual between the
input and a warped template) plus a one-hot component indicator to the
mean and log-variance of a diagonal Gaussian posterior over z.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

PROB_EPS = 1e-4
Z_DIM = 32
N_KERNELS = 8
KERNEL_SIZE = 5
GEN_HIDDEN = 64


@dataclass
class EditorParams:
    """Kernel generator MLP, mixing weights, and logit skip gain."""

    gen_w1: torch.Tensor  # (hidden, z_dim)
    gen_b1: torch.Tensor  # (hidden,)
    gen_w2: torch.Tensor  # (n_kernels*(k*k+1), hidden)
    gen_b2: torch.Tensor  # (n_kernels*(k*k+1),)
    mix: torch.Tensor  # (n_kernels,), no bias term
    skip_gain: torch.Tensor  # scalar

    n_kernels: int = N_KERNELS
    kernel_size: int = KERNEL_SIZE

    def tensors(self) -> list[torch.Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.type == "torch.Tensor"]


@dataclass
class EncoderParams:
    """Two strided conv layers and a linear head over features + component."""

    conv1_w: torch.Tensor  # (8, 1, 3, 3)
    conv1_b: torch.Tensor
    conv2_w: torch.Tensor  # (16, 8, 3, 3)
    conv2_b: torch.Tensor
    head_w: torch.Tensor  # (2*z_dim, flat + n_components)
    head_b: torch.Tensor

    def tensors(self) -> list[torch.Tensor]:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class EditorPosterior:
    """Diagonal Gaussian over the editor code."""

    mu: torch.Tensor  # (B, z_dim)
    logvar: torch.Tensor  # (B, z_dim)


def init_editor(
    z_dim: int = Z_DIM,
    n_kernels: int = N_KERNELS,
    kernel_size: int = KERNEL_SIZE,
    hidden: int = GEN_HIDDEN,
    generator: torch.Generator | None = None,
    dtype=torch.float64,
) -> EditorParams:
    """Random first layer, zero output layer: the editor starts as identity."""
    out_dim = n_kernels * (kernel_size * kernel_size + 1)
    w1 = torch.randn(hidden, z_dim, generator=generator, dtype=dtype) / z_dim**0.5
    return EditorParams(
        gen_w1=w1,
        gen_b1=torch.zeros(hidden, dtype=dtype),
        gen_w2=torch.zeros(out_dim, hidden, dtype=dtype),
        gen_b2=torch.zeros(out_dim, dtype=dtype),
        mix=torch.full((n_kernels,), 1.0 / n_kernels, dtype=dtype),
        skip_gain=torch.ones((), dtype=dtype),
        n_kernels=n_kernels,
        kernel_size=kernel_size,
    )


def init_encoder(
    canvas: int,
    n_components: int,
    z_dim: int = Z_DIM,
    generator: torch.Generator | None = None,
    dtype=torch.float64,
) -> EncoderParams:
    """Scaled random convs; zero head so the posterior starts at the prior."""
    h1 = (canvas + 1) // 2
    h2 = (h1 + 1) // 2
    flat = 16 * h2 * h2

    def conv_init(shape):
        fan_in = shape[1] * shape[2] * shape[3]
        return torch.randn(*shape, generator=generator, dtype=dtype) / fan_in**0.5

    return EncoderParams(
        conv1_w=conv_init((8, 1, 3, 3)),
        conv1_b=torch.zeros(8, dtype=dtype),
        conv2_w=conv_init((16, 8, 3, 3)),
        conv2_b=torch.zeros(16, dtype=dtype),
        head_w=torch.zeros(2 * z_dim, flat + n_components, dtype=dtype),
        head_b=torch.zeros(2 * z_dim, dtype=dtype),
    )


def filter_apply(
    t_tilde: torch.Tensor,
    z: torch.Tensor,
    params: EditorParams,
    eps: float = PROB_EPS,
) -> torch.Tensor:
    """Edit warped template probabilities (B, H, W) with codes z (B, z_dim).

    Output probabilities are clamped to [eps, 1 - eps].
    """
    b, h, w = t_tilde.shape
    c = params.n_kernels
    k = params.kernel_size

    hid = torch.tanh(z @ params.gen_w1.T + params.gen_b1)
    gen = hid @ params.gen_w2.T + params.gen_b2  # (B, c*k*k + c)
    kernels = gen[:, : c * k * k].reshape(b * c, 1, k, k)
    biases = gen[:, c * k * k :].reshape(b, c, 1, 1)

    resp = F.conv2d(
        t_tilde.reshape(1, b, h, w), kernels, padding=k // 2, groups=b
    ).reshape(b, c, h, w)
    mixed = ((resp + biases) * params.mix.reshape(1, c, 1, 1)).sum(dim=1)

    base = torch.clamp(t_tilde, eps, 1.0 - eps)
    logits = params.skip_gain * torch.log(base / (1.0 - base)) + mixed
    return torch.clamp(torch.sigmoid(logits), eps, 1.0 - eps)


def conv_features(inputs: torch.Tensor, params: EncoderParams) -> torch.Tensor:
    """Strided conv feature extractor: (B, H, W) to flat (B, F)."""
    x = inputs.unsqueeze(1)
    x = torch.tanh(F.conv2d(x, params.conv1_w, params.conv1_b, stride=2, padding=1))
    x = torch.tanh(F.conv2d(x, params.conv2_w, params.conv2_b, stride=2, padding=1))
    return x.reshape(x.shape[0], -1)


def posterior_head(
    feats: torch.Tensor, onehot: torch.Tensor, params: EncoderParams
) -> EditorPosterior:
    """Posterior from flat features (B, F) and component indicators (B, K)."""
    out = torch.cat([feats, onehot], dim=1) @ params.head_w.T + params.head_b
    z2 = out.shape[1] // 2
    return EditorPosterior(mu=out[:, :z2], logvar=out[:, z2:])


def encode_residual(
    inputs: torch.Tensor,
    onehot: torch.Tensor,
    params: EncoderParams,
) -> EditorPosterior:
    """Posterior over z from (B, H, W) encoder inputs and (B, K) indicators."""
    return posterior_head(conv_features(inputs, params), onehot, params)


def sample_latent(
    posterior: EditorPosterior,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Reparameterized draw; zero noise (the posterior mean) when neither
    a generator nor explicit noise is given."""
    if noise is None:
        if generator is None:
            noise = torch.zeros_like(posterior.mu)
        else:
            noise = torch.randn(
                posterior.mu.shape, generator=generator, dtype=posterior.mu.dtype
            )
    return posterior.mu + torch.exp(0.5 * posterior.logvar) * noise


def kl_to_prior(posterior: EditorPosterior) -> torch.Tensor:
    """KL from the diagonal Gaussian posterior to the standard normal, (B,)."""
    mu, lv = posterior.mu, posterior.logvar
    return 0.5 * (mu * mu + torch.exp(lv) - 1.0 - lv).sum(dim=1)
