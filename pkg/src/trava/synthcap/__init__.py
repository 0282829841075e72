"""Synthetic light-stage capture: analytic subject, shading, dataset io."""

from .capture import (
    CaptureCamera,
    CaptureDataset,
    FrameRecord,
    background_gain,
    default_cameras,
    eval_pattern,
    generate_dataset,
    load_calib,
    load_dataset,
    make_camera,
    pattern_seed,
    save_calib,
    static_background,
)
from .subject import (
    SyntheticSubject,
    cast_rays,
    make_subject,
    min_face_area,
    shade,
    shading_kernel,
)

__all__ = [
    "CaptureCamera",
    "CaptureDataset",
    "FrameRecord",
    "SyntheticSubject",
    "background_gain",
    "cast_rays",
    "default_cameras",
    "eval_pattern",
    "generate_dataset",
    "load_calib",
    "load_dataset",
    "make_camera",
    "make_subject",
    "min_face_area",
    "pattern_seed",
    "save_calib",
    "shade",
    "shading_kernel",
    "static_background",
]
