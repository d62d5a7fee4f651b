"""63-bit Morton (Z-order) codes for 3D voxel coordinates.

A Morton code interleaves the bits of three 21-bit unsigned coordinates into
one 63-bit word: bit k of x lands at code bit 3k, bit k of y at 3k+1, bit k
of z at 3k+2. The code doubles as a hash key for sparse voxel storage; the
interleaving keeps spatially close voxels numerically close, and encode /
decode are exact inverses over the whole 21-bit range.

The spread/compact helpers use the classic magic-constant bit twiddle, which
vectorises cleanly over uint64 arrays.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

COORD_BITS = 21
MAX_COORD = 1 << COORD_BITS  # exclusive upper bound per axis


class MortonKey(NamedTuple):
    """A Morton code together with the octree level it lives on."""

    code: int
    level: int


_SPREAD_MASKS = (
    np.uint64(0x1FFFFF),
    np.uint64(0x1F00000000FFFF),
    np.uint64(0x1F0000FF0000FF),
    np.uint64(0x100F00F00F00F00F),
    np.uint64(0x10C30C30C30C30C3),
    np.uint64(0x1249249249249249),
)
_SHIFTS = (32, 16, 8, 4, 2)

_ONE = np.uint64(1)
_TWO = np.uint64(2)
_THREE_MASK = np.uint64(0x7FFFFFFFFFFFFFFF)


def _part1by2(v: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of v so consecutive bits are 3 apart."""
    v = v & _SPREAD_MASKS[0]
    for shift, mask in zip(_SHIFTS, _SPREAD_MASKS[1:]):
        v = (v | (v << np.uint64(shift))) & mask
    return v


def _compact1by2(c: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_part1by2`."""
    c = c & _SPREAD_MASKS[-1]
    for shift, mask in zip(reversed(_SHIFTS), reversed(_SPREAD_MASKS[:-1])):
        c = (c | (c >> np.uint64(shift))) & mask
    return c


def morton_encode(x, y, z):
    """Interleave three coordinate arrays (or scalars) into Morton codes.

    Coordinates must lie in [0, 2**21); anything outside raises ValueError.
    Scalars in, python int out; arrays in, uint64 array out.
    """
    scalar = np.isscalar(x) and np.isscalar(y) and np.isscalar(z)
    xa = np.asarray(x, dtype=np.int64)
    ya = np.asarray(y, dtype=np.int64)
    za = np.asarray(z, dtype=np.int64)
    for name, a in (("x", xa), ("y", ya), ("z", za)):
        if np.any((a < 0) | (a >= MAX_COORD)):
            raise ValueError(f"morton coordinate {name} outside [0, 2^21)")
    code = (
        _part1by2(xa.astype(np.uint64))
        | (_part1by2(ya.astype(np.uint64)) << _ONE)
        | (_part1by2(za.astype(np.uint64)) << _TWO)
    )
    return int(code) if scalar else code


def morton_decode(code):
    """Split Morton codes back into (x, y, z) coordinate arrays or ints."""
    scalar = np.isscalar(code)
    c = np.asarray(code, dtype=np.uint64)
    if np.any(c > _THREE_MASK):
        raise ValueError("morton code exceeds 63 bits")
    x = _compact1by2(c)
    y = _compact1by2(c >> _ONE)
    z = _compact1by2(c >> _TWO)
    if scalar:
        return int(x), int(y), int(z)
    return x.astype(np.int64), y.astype(np.int64), z.astype(np.int64)
