"""Template mesh, blendshapes, Laplacian regularization, primitive mounting."""

from .blendshapes import BlendshapeBasis, build_blendshape_basis
from .frames import MountedFrames, apply_rigid, cross3, mount_frames
from .laplacian import build_laplacian, laplacian_loss
from .layout import PrimitiveLayout, build_layout
from .mesh import TemplateMesh, default_weight_mask, load_obj, make_template_sphere, save_obj

__all__ = [
    "BlendshapeBasis",
    "MountedFrames",
    "PrimitiveLayout",
    "TemplateMesh",
    "apply_rigid",
    "build_blendshape_basis",
    "build_laplacian",
    "build_layout",
    "cross3",
    "default_weight_mask",
    "laplacian_loss",
    "load_obj",
    "make_template_sphere",
    "mount_frames",
    "save_obj",
]
