"""Clustering-based unsupervised segmentation: tensor I/O, clustering, refinement and evaluation."""

from ._lcseg import (
    Error,
    FormatError,
    InvalidArgument,
    IoError,
    NumericError,
    check_corners,
    combine_masks,
    connected_components,
    cosine_distance,
    crf_mean_field,
    crf_refine,
    default_config,
    evaluate,
    generate_synthetic,
    hungarian,
    kmeans,
    l2_normalize,
    orient_image_mask,
    pca,
    read_tensor,
    remove_small_components,
    run,
    select_foreground_cluster,
    spectral_cluster,
    upsample_bilinear,
    write_synthetic_crop_tokens,
    write_tensor,
)

__version__ = "0.1.0"
