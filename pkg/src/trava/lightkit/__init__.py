"""Light rigs, capture patterns, environment-map lighting extraction."""

from .envmap import (
    CellAssignment,
    EnvironmentMap,
    assign_cells,
    extract_lighting,
    pixel_directions,
    pixel_weights,
)
from .pfm import read_pfm, write_pfm
from .rgbe import read_rgbe, write_rgbe
from .rig import (
    LightingCondition,
    LightRig,
    build_rig,
    full_on_pattern,
    group_pattern,
    load_rig,
    olat_pattern,
    save_rig,
)

__all__ = [
    "CellAssignment",
    "EnvironmentMap",
    "LightRig",
    "LightingCondition",
    "assign_cells",
    "build_rig",
    "extract_lighting",
    "full_on_pattern",
    "group_pattern",
    "load_rig",
    "olat_pattern",
    "pixel_directions",
    "pixel_weights",
    "read_pfm",
    "read_rgbe",
    "save_rig",
    "write_pfm",
    "write_rgbe",
]
