"""Deformable image registration on regular grids.

Images are numpy arrays of shape ``dims``; displacement fields have shape
``(rank, *dims)`` with component ``a`` displacing along axis ``a`` in voxels.
"""

from ._voxreg import (
    FormatError,
    dice,
    jacobian,
    local_cc,
    mse,
    read_field,
    read_image,
    register,
    smoothness,
    synth_pair,
    warp_image,
    write_field,
    write_image,
)

__all__ = [
    "FormatError",
    "dice",
    "jacobian",
    "local_cc",
    "mse",
    "read_field",
    "read_image",
    "register",
    "smoothness",
    "synth_pair",
    "warp_image",
    "write_field",
    "write_image",
]
