"""Transfer-learning toolkit for 3-D volumetric lesion segmentation.

Thin Python surface over the C++ core: synthetic case generation, case
container I/O, segmentation metrics, the cross-validation split protocol,
desk-scale pre-training, checkpoint inspection, sliding-window inference,
and montage rendering. Volumes and masks are NumPy arrays in (z, y, x)
order; spacings are millimetres per voxel along the same axes.
"""

from ._volseg import (
    ConfigError,
    DataError,
    TrainDivergedError,
    checkpoint_info,
    dsc,
    evaluate_case,
    generate_case,
    load_case,
    make_split,
    nsd,
    poly_lr,
    predict_labels,
    predict_probs,
    pretrain,
    render_montage,
    save_case,
    surface_to_volume,
)

__all__ = [
    "ConfigError",
    "DataError",
    "TrainDivergedError",
    "checkpoint_info",
    "dsc",
    "evaluate_case",
    "generate_case",
    "load_case",
    "make_split",
    "nsd",
    "poly_lr",
    "predict_labels",
    "predict_probs",
    "pretrain",
    "render_montage",
    "save_case",
    "surface_to_volume",
]
