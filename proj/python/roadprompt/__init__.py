"""Patch-constrained promptable road segmentation (C++ core)."""

import json as _json

from ._core import (
    BadUpload,
    InvalidArgument,
    Model,
    ModelError,
    SessionNotFound,
    SessionStore,
    dice_loss,
    dilate,
    erode,
    focal_loss,
    generate_prompts,
    generate_synthetic,
    head_loss,
    highrecall_loss,
    make_negative_label,
    make_positive_label,
    metrics,
    negative_region_loss,
    opening,
    render_synthetic,
    sample_prompts,
    simulate,
    sweep_json,
    train,
)


def sweep(model, data, split="test"):
    """Refinement reports over fnm_kernel {1,3,5,7} x density {1,2,4}."""
    return _json.loads(sweep_json(model, str(data), split))


__all__ = [name for name in dir() if not name.startswith("_")]
