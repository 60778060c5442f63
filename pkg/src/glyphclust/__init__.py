"""Unsupervised typeface discovery for printed-glyph images.

A mixture model clusters fixed-size glyph images into typeface templates.
Each component owns a learnable template; interpretable spatial latents
(rotation, offset, shear, scale) warp the template differentiably, and a
small latent-conditioned convolutional editor absorbs inking and archiving
noise. An inference network restricted to the residual image keeps the
editor from explaining spatial or shape variance.
"""

from glyphclust.corpus import (
    CANVAS_SIZE,
    DatasetManifest,
    GlyphImage,
    binarize,
    load_dataset,
    load_image,
    save_image,
)
from glyphclust.warp import (
    AttentionMap,
    SpatialParams,
    SpatialPrior,
    build_attention,
    inverse_align,
    lambda_log_prior,
    warp,
)
from glyphclust.editor import (
    EditorParams,
    EditorPosterior,
    EncoderParams,
    encode_residual,
    filter_apply,
    kl_to_prior,
    sample_latent,
)
from glyphclust.mixture import (
    LambdaTable,
    MixtureState,
    VARIANTS,
    assign_cluster,
    batch_objective,
    bernoulli_loglik,
    component_elbo,
    init_mixture_state,
    nll_bound,
    ocular_loglik,
)
from glyphclust.synth import PerturbConfig, generate_corpus, morph
from glyphclust.training import TrainConfig, TrainResult, icm_step, train
from glyphclust.metrics import (
    ContingencyTable,
    contingency,
    fowlkes_mallows,
    mutual_info,
    report,
    v_measure,
)

__version__ = "0.1.0"
