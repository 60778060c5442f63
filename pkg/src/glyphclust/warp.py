"""Differentiable interpretable spatial adjustment of glyph templates.

Six real latents control an affine placement of a template on the canvas:
rotation r, offsets (o_h, o_v), shears (s_h, s_v), and a scale offset a
with effective scale 1 + a. The transform composes scale, then shear,
then rotation about the canvas center, then translation.

The warp is realized with per-output-pixel attention over the input grid:
output pixel (i, j) attends to input pixels with weights proportional to
an isotropic Gaussian (variance bandwidth**2) centered on the source
location of (i, j) under the inverse affine map, normalized over the
grid. Because the squared distance separates over axes, the row and
column factors are computed independently and combined by outer product;
the training path evaluates only a narrow window around the Gaussian mode
(exact to far below float precision at the default bandwidth).

Weights for pixels whose source location falls outside the canvas
renormalize onto the grid, which pins the mode to the nearest edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from glyphclust.corpus import GlyphImage

DEFAULT_BANDWIDTH = 0.3

# component order used by all (…, 6) parameter tensors
PARAM_NAMES = ("r", "o_h", "o_v", "s_h", "s_v", "a")


@dataclass
class SpatialParams:
    """Interpretable spatial latents; effective scale is 1 + a."""

    r: float = 0.0
    o_h: float = 0.0
    o_v: float = 0.0
    s_h: float = 0.0
    s_v: float = 0.0
    a: float = 0.0

    def to_tensor(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor(
            [self.r, self.o_h, self.o_v, self.s_h, self.s_v, self.a], dtype=dtype
        )

    @staticmethod
    def from_tensor(t: torch.Tensor) -> "SpatialParams":
        vals = [float(v) for v in t.reshape(6)]
        return SpatialParams(*vals)

    def inverse(self) -> "SpatialParams":
        """Component-wise inverse: negate r, o, s and invert the scale."""
        scale = 1.0 + self.a
        if scale <= 0:
            raise ValueError(f"effective scale must be positive, got {scale}")
        return SpatialParams(
            -self.r, -self.o_h, -self.o_v, -self.s_h, -self.s_v, 1.0 / scale - 1.0
        )


@dataclass
class SpatialPrior:
    """Standard deviations of the zero-mean Gaussian priors on lambda."""

    sigma_r: float = 0.03
    sigma_o: float = 1.5
    sigma_s: float = 0.03
    sigma_a: float = 0.05

    def __post_init__(self):
        for name in ("sigma_r", "sigma_o", "sigma_s", "sigma_a"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def sigmas(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor(
            [
                self.sigma_r,
                self.sigma_o,
                self.sigma_o,
                self.sigma_s,
                self.sigma_s,
                self.sigma_a,
            ],
            dtype=dtype,
        )


@dataclass
class AttentionMap:
    """Dense per-output-pixel distributions over input pixels."""

    weights: torch.Tensor  # (canvas*canvas, canvas*canvas), rows sum to 1
    canvas: int


def _as_param_tensor(lam, dtype=torch.float64) -> torch.Tensor:
    if isinstance(lam, SpatialParams):
        return lam.to_tensor(dtype)
    t = torch.as_tensor(lam, dtype=dtype)
    if t.shape[-1] != 6:
        raise ValueError(f"expected 6 spatial parameters, got shape {tuple(t.shape)}")
    return t


_GRID_CACHE: dict = {}


def _center_grid(canvas: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """Flattened output pixel offsets from the canvas center, (1, P) each."""
    key = (canvas, dtype)
    if key not in _GRID_CACHE:
        c = (canvas - 1) / 2.0
        grid = torch.arange(canvas, dtype=dtype) - c
        yy, xx = torch.meshgrid(grid, grid, indexing="ij")
        _GRID_CACHE[key] = (xx.reshape(1, -1), yy.reshape(1, -1))
    return _GRID_CACHE[key]


def _mode_coords(lams: torch.Tensor, canvas: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Source-grid coordinates of the attention mode for each output pixel.

    Returns (rows, cols), each (B, canvas*canvas), holding the inverse
    affine image of every output pixel center.
    """
    r, o_h, o_v, s_h, s_v, a = (lams[:, i : i + 1] for i in range(6))
    scale = 1.0 + a
    det = 1.0 - s_h * s_v

    c = (canvas - 1) / 2.0
    x, y = _center_grid(canvas, lams.dtype)

    dx = x - o_h
    dy = y - o_v
    # inverse rotation, then inverse shear, then inverse scale
    rx = dx * torch.cos(r) + dy * torch.sin(r)
    ry = -dx * torch.sin(r) + dy * torch.cos(r)
    sx = (rx - s_h * ry) / det
    sy = (ry - s_v * rx) / det
    return sy / scale + c, sx / scale + c


def _axis_factors(
    modes: torch.Tensor, canvas: int, bandwidth: float, window: int | None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalized Gaussian weights along one axis.

    Returns (weights, indices) of shape (B, P, T). With window=None, T is
    the full canvas and indices cover the whole axis; otherwise T = 2*window+1
    grid cells centered near each mode, clamped to lie inside the axis.
    """
    if window is None or 2 * window + 1 >= canvas:
        idx = torch.arange(canvas, dtype=modes.dtype).reshape(1, 1, canvas)
        idx = idx.expand(modes.shape[0], modes.shape[1], canvas)
    else:
        base = modes.detach().round().clamp(window, canvas - 1 - window)
        offsets = torch.arange(-window, window + 1, dtype=modes.dtype)
        idx = base.unsqueeze(-1) + offsets
    logw = -((idx - modes.unsqueeze(-1)) ** 2) / (2.0 * bandwidth * bandwidth)
    w = torch.exp(logw)
    z = w.sum(dim=-1, keepdim=True)
    if float(z.detach().min()) < 1e-280:
        # mode far outside the window: renormalize around the row max
        w = torch.exp(logw - logw.max(dim=-1, keepdim=True).values)
        z = w.sum(dim=-1, keepdim=True)
    return w / z, idx


def _window_size(bandwidth: float) -> int:
    return max(2, int(math.ceil(4.0 * bandwidth)))


def _mode_jacobians(
    lams: torch.Tensor, canvas: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Derivatives of the mode coordinates wrt the six parameters.

    Returns (J_rows, J_cols), each (B, P, 6), matching _mode_coords.
    """
    r, o_h, o_v, s_h, s_v, a = (lams[:, i : i + 1] for i in range(6))
    scale = 1.0 + a
    det = 1.0 - s_h * s_v
    cr, sr = torch.cos(r), torch.sin(r)

    x, y = _center_grid(canvas, lams.dtype)
    dx = x - o_h
    dy = y - o_v
    rx = dx * cr + dy * sr
    ry = -dx * sr + dy * cr
    sx = (rx - s_h * ry) / det
    sy = (ry - s_v * rx) / det
    ds = det * scale

    shape = sx.shape

    def stack6(terms):
        return torch.stack([t.expand(shape) for t in terms], dim=-1)

    jc = stack6(
        [
            (ry + s_h * rx) / ds,
            (-cr - s_h * sr) / ds,
            (-sr + s_h * cr) / ds,
            (-ry + s_v * sx) / ds,
            s_h * sx / ds,
            -sx / (scale * scale),
        ]
    )
    jr = stack6(
        [
            -(rx + s_v * ry) / ds,
            (sr + s_v * cr) / ds,
            (-cr + s_v * sr) / ds,
            s_v * sy / ds,
            (-rx + s_h * sy) / ds,
            -sy / (scale * scale),
        ]
    )
    return jr, jc


class _WindowedWarp(torch.autograd.Function):
    """Warp through a truncated attention window with analytic gradients.

    Autograd through the two dozen elementwise steps of the windowed
    evaluation costs several times the forward pass; the closed-form
    backward below reuses the saved window weights instead. The dense
    path keeps plain autograd and serves as the cross-check.
    """

    @staticmethod
    def forward(ctx, templates, lams, bandwidth, window):
        b, canvas, _ = templates.shape
        rows, cols = _mode_coords(lams, canvas)
        wr, ir = _axis_factors(rows, canvas, bandwidth, window)
        wc, ic = _axis_factors(cols, canvas, bandwidth, window)
        t = wr.shape[-1]
        flat = (ir.long().unsqueeze(-1) * canvas + ic.long().unsqueeze(-2)).reshape(
            b, -1
        )
        patches = torch.gather(templates.reshape(b, -1), 1, flat).reshape(b, -1, t, t)
        out = torch.einsum("bost,bos,bot->bo", patches, wr, wc)
        ctx.save_for_backward(
            lams, wr, wc, ir - rows.unsqueeze(-1), ic - cols.unsqueeze(-1), flat, patches
        )
        ctx.bandwidth = bandwidth
        ctx.canvas = canvas
        return out.reshape(b, canvas, canvas)

    @staticmethod
    @torch.autograd.function.once_differentiable
    def backward(ctx, grad_out):
        lams, wr, wc, dr, dc, flat, patches = ctx.saved_tensors
        b = patches.shape[0]
        canvas = ctx.canvas
        inv_var = 1.0 / (ctx.bandwidth * ctx.bandwidth)
        go = grad_out.reshape(b, -1)

        gwr = torch.einsum("bost,bot->bos", patches, wc) * go.unsqueeze(-1)
        gwc = torch.einsum("bost,bos->bot", patches, wr) * go.unsqueeze(-1)

        # d/du of window-normalized weights: w_s * (d_s - mean_w(d)) / sigma^2
        def mode_grad(gw, w, d):
            wbar = (w * d).sum(-1)
            return ((gw * w * d).sum(-1) - wbar * (gw * w).sum(-1)) * inv_var

        gu_r = mode_grad(gwr, wr, dr)
        gu_c = mode_grad(gwc, wc, dc)
        jr, jc = _mode_jacobians(lams, canvas)
        grad_lams = torch.einsum("bo,boi->bi", gu_r, jr) + torch.einsum(
            "bo,boi->bi", gu_c, jc
        )

        m = go.unsqueeze(-1).unsqueeze(-1) * wr.unsqueeze(-1) * wc.unsqueeze(-2)
        grad_t = torch.zeros(b, canvas * canvas, dtype=patches.dtype)
        grad_t.scatter_add_(1, flat, m.reshape(b, -1))
        return grad_t.reshape(b, canvas, canvas), grad_lams, None, None


def warp_tensor(
    templates: torch.Tensor,
    lams: torch.Tensor,
    bandwidth: float = DEFAULT_BANDWIDTH,
    exact: bool = False,
) -> torch.Tensor:
    """Warp a batch of images: (B, H, H) templates, (B, 6) parameters.

    Differentiable in both arguments. The windowed evaluation used by
    default matches the dense one to well under 1e-9 at practical
    bandwidths; pass exact=True to force the dense path.
    """
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    if templates.dim() != 3 or templates.shape[-1] != templates.shape[-2]:
        raise ValueError(f"expected (B, H, H) templates, got {tuple(templates.shape)}")
    if lams.shape != (templates.shape[0], 6):
        raise ValueError(f"expected (B, 6) parameters, got {tuple(lams.shape)}")
    canvas = templates.shape[-1]
    window = _window_size(bandwidth)
    if exact or 2 * window + 1 >= canvas:
        rows, cols = _mode_coords(lams, canvas)
        wr, _ = _axis_factors(rows, canvas, bandwidth, None)
        wc, _ = _axis_factors(cols, canvas, bandwidth, None)
        tmp = torch.bmm(wr, templates)  # (B, P, canvas)
        out = (tmp * wc).sum(dim=-1)
        return out.reshape(templates.shape[0], canvas, canvas)
    return _WindowedWarp.apply(templates, lams, bandwidth, window)


def build_attention(
    lam: SpatialParams | torch.Tensor,
    canvas: int,
    bandwidth: float = DEFAULT_BANDWIDTH,
) -> AttentionMap:
    """Dense attention map realizing the warp for one parameter setting."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    lams = _as_param_tensor(lam).reshape(1, 6)
    rows, cols = _mode_coords(lams, canvas)
    wr, _ = _axis_factors(rows, canvas, bandwidth, None)
    wc, _ = _axis_factors(cols, canvas, bandwidth, None)
    dense = torch.einsum("op,oq->opq", wr[0], wc[0]).reshape(
        canvas * canvas, canvas * canvas
    )
    return AttentionMap(weights=dense, canvas=canvas)


def warp(
    template: torch.Tensor | np.ndarray,
    lam: SpatialParams | torch.Tensor,
    bandwidth: float = DEFAULT_BANDWIDTH,
) -> torch.Tensor:
    """Warp one (H, H) template by one parameter set."""
    t = torch.as_tensor(template, dtype=torch.float64) if not torch.is_tensor(template) else template
    lams = _as_param_tensor(lam, dtype=t.dtype).reshape(1, 6)
    return warp_tensor(t.unsqueeze(0), lams, bandwidth)[0]


def inverse_align(
    img: GlyphImage | np.ndarray | torch.Tensor,
    lam: SpatialParams,
    bandwidth: float = DEFAULT_BANDWIDTH,
):
    """Reverse-apply inferred spatial parameters to align an image.

    Applies the warp with component-wise inverted parameters. The return
    type follows the input (GlyphImage in, GlyphImage out).
    """
    inv = lam.inverse() if isinstance(lam, SpatialParams) else SpatialParams.from_tensor(_as_param_tensor(lam)).inverse()
    if isinstance(img, GlyphImage):
        aligned = warp(img.pixels, inv, bandwidth)
        return img.copy_with(aligned.numpy())
    return warp(img, inv, bandwidth)


def align_stack(
    images: np.ndarray, lams: np.ndarray, bandwidth: float = DEFAULT_BANDWIDTH
) -> np.ndarray:
    """Inverse-align a stack of images, one parameter row per image."""
    inv = np.stack(
        [SpatialParams(*row).inverse().to_tensor().numpy() for row in np.asarray(lams)]
    )
    with torch.no_grad():
        out = warp_tensor(
            torch.as_tensor(images, dtype=torch.float64),
            torch.as_tensor(inv, dtype=torch.float64),
            bandwidth,
        )
    return out.numpy()


def log_prior_tensor(lams: torch.Tensor, prior: SpatialPrior) -> torch.Tensor:
    """Sum of independent zero-mean Gaussian log densities, batched (B, 6) -> (B,)."""
    sig = prior.sigmas(dtype=lams.dtype)
    z = lams / sig
    const = math.log(2.0 * math.pi)
    return (-0.5 * z * z - torch.log(sig) - 0.5 * const).sum(dim=-1)


def lambda_log_prior(lam: SpatialParams | torch.Tensor, prior: SpatialPrior) -> float:
    """Log prior density of one parameter setting."""
    lams = _as_param_tensor(lam).reshape(1, 6)
    return float(log_prior_tensor(lams, prior)[0])
