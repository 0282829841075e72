"""Avatar networks: motion encoder, geometry/opacity decoders, and the
lighting-linear appearance decoder, plus the structural audit that keeps the
light path linear by construction."""

from .audit import audit_light_path
from .driver import BlendshapeRegressor
from .networks import AvatarConfig, AvatarNet, EncoderOutput, normalize_views
from .params import ParameterStore, orthogonal_init
from .rotations import rotation_from_6d, rotation_from_axis_angle
from .transforms import PrimitiveCorrections, compose_transforms, identity_corrections

__all__ = [
    "AvatarConfig",
    "AvatarNet",
    "BlendshapeRegressor",
    "EncoderOutput",
    "ParameterStore",
    "PrimitiveCorrections",
    "audit_light_path",
    "compose_transforms",
    "identity_corrections",
    "normalize_views",
    "orthogonal_init",
    "rotation_from_6d",
    "rotation_from_axis_angle",
]
