"""Scene checkpoints: OGMP container + ASCII PLY anchor export.

Container layout, all little-endian:

    bytes 0..3    magic "OGMP"
    bytes 4..7    format version (u32)
    bytes 8..15   header length in bytes (u64)
    header        UTF-8 JSON: config, grid, adam step counters, and an
                  ordered tensor table [{name, dtype, shape}, ...]
    payload       raw tensor bytes exactly in table order

Learnable tensors are float32; anchor identity is exact (codes uint64,
levels/flags uint8). Saving the same model twice is byte-identical, and
save -> load -> save round-trips exactly. Checkpoints restore everything a
render/eval needs plus optimizer moments; they do not snapshot RNG streams,
so a resumed run is a new run that starts from the saved weights.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .octree import SparseOctree, VoxelGrid
from .scene import SceneModel

MAGIC = b"OGMP"
VERSION = 1

_DTYPES = {"<f4": "<f4", "<f8": "<f8", "<u8": "<u8", "<i8": "<i8", "|u1": "|u1"}


def _tensor_table(scene: SceneModel, include_optimizer: bool):
    """Ordered (name, array) pairs; the order is the file format."""
    pairs = [
        ("anchor_codes", scene.octree.codes.astype("<u8")),
        ("anchor_levels", scene.levels.astype("|u1")),
        ("offsets", scene.offsets.astype("<f4")),
        ("features", scene.features.astype("<f4")),
        ("grown", scene.grown.astype("|u1")),
        ("opacity_max", scene.opacity_max.astype("<f4")),
        ("seen", scene.seen.astype("|u1")),
    ]
    for name, mlp in scene.decoders.items():
        for key, tensor in mlp.tensors().items():
            pairs.append((f"decoder.{name}.{key}", tensor.astype("<f4")))
    if include_optimizer:
        pairs.append(("adam.offsets.m", scene.offsets_state.m.astype("<f4")))
        pairs.append(("adam.offsets.v", scene.offsets_state.v.astype("<f4")))
        pairs.append(("adam.features.m", scene.features_state.m.astype("<f4")))
        pairs.append(("adam.features.v", scene.features_state.v.astype("<f4")))
        for name in ("color", "opacity", "cov"):
            for key in ("w1", "b1", "w2", "b2"):
                st = scene.decoder_states[name][key]
                pairs.append((f"adam.{name}.{key}.m", st.m.astype("<f4")))
                pairs.append((f"adam.{name}.{key}.v", st.v.astype("<f4")))
    return pairs


def save_checkpoint(path, scene: SceneModel, config: RunConfig, include_optimizer: bool = True) -> None:
    pairs = _tensor_table(scene, include_optimizer)
    adam_t = {
        "offsets": scene.offsets_state.t,
        "features": scene.features_state.t,
    }
    for name in ("color", "opacity", "cov"):
        for key in ("w1", "b1", "w2", "b2"):
            adam_t[f"{name}.{key}"] = scene.decoder_states[name][key].t
    header = {
        "adam_t": adam_t,
        "config": config.to_dict(),
        "grid": {
            "origin": [float(v) for v in scene.grid.origin],
            "base_voxel_size": scene.grid.base_voxel_size,
            "max_level": scene.grid.max_level,
        },
        "include_optimizer": include_optimizer,
        "n_anchors": scene.n_anchors,
        "tensors": [
            {"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in pairs
        ],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for _, arr in pairs:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into (SceneModel, RunConfig).

    Wrong magic, unknown version, or a truncated payload raise ValueError
    without constructing a partial model.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an OGMP checkpoint")
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    header_end = 16 + hlen
    if len(blob) < header_end:
        raise ValueError(f"{path}: truncated header")
    header = json.loads(blob[16:header_end].decode("utf-8"))

    tensors = {}
    offset = header_end
    for spec in header["tensors"]:
        dtype = np.dtype(_DTYPES.get(spec["dtype"], spec["dtype"]))
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        end = offset + nbytes
        if end > len(blob):
            raise ValueError(f"{path}: truncated payload at tensor {spec['name']!r}")
        tensors[spec["name"]] = np.frombuffer(blob[offset:end], dtype=dtype).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after tensor payload")

    config = RunConfig.from_dict(header["config"])
    grid = VoxelGrid(
        header["grid"]["origin"], header["grid"]["base_voxel_size"], header["grid"]["max_level"]
    )
    scene = SceneModel(
        grid,
        seed=config.seed,
        near=config.near,
        margin_scale=config.margin_scale,
    )
    codes = tensors["anchor_codes"]
    levels = tensors["anchor_levels"].astype(np.int64)
    scene.octree = SparseOctree.restore(grid, codes, levels)
    scene.levels = levels
    scene.positions = grid.centers(codes, levels).astype(scene.dtype)
    sizes = (grid.base_voxel_size / 4.0 ** levels.astype(np.float64)).astype(scene.dtype)
    scene.base_scales = np.repeat(sizes[:, None], 3, axis=1)
    scene.offsets = tensors["offsets"].astype(scene.dtype).copy()
    scene.features = tensors["features"].astype(scene.dtype).copy()
    scene.grown = tensors["grown"].astype(bool).copy()
    scene.opacity_max = tensors["opacity_max"].astype(scene.dtype).copy()
    scene.seen = tensors["seen"].astype(bool).copy()
    for name, mlp in scene.decoders.items():
        t = mlp.tensors()
        for key in ("w1", "b1", "w2", "b2"):
            t[key][...] = tensors[f"decoder.{name}.{key}"]
    from .nn import AdamState

    if header.get("include_optimizer"):
        scene.offsets_state = AdamState(
            tensors["adam.offsets.m"].astype(scene.dtype).copy(),
            tensors["adam.offsets.v"].astype(scene.dtype).copy(),
            int(header["adam_t"]["offsets"]),
        )
        scene.features_state = AdamState(
            tensors["adam.features.m"].astype(scene.dtype).copy(),
            tensors["adam.features.v"].astype(scene.dtype).copy(),
            int(header["adam_t"]["features"]),
        )
        for name in ("color", "opacity", "cov"):
            for key in ("w1", "b1", "w2", "b2"):
                scene.decoder_states[name][key] = AdamState(
                    tensors[f"adam.{name}.{key}.m"].astype(scene.dtype).copy(),
                    tensors[f"adam.{name}.{key}.v"].astype(scene.dtype).copy(),
                    int(header["adam_t"][f"{name}.{key}"]),
                )
    else:
        scene.offsets_state = AdamState.zeros(scene.offsets.shape, scene.dtype)
        scene.features_state = AdamState.zeros(scene.features.shape, scene.dtype)
    return scene, config


LEVEL_COLORS = ((217, 72, 56), (86, 176, 92), (70, 110, 220))


def export_ply(path, scene: SceneModel) -> None:
    """Anchor centers as ASCII PLY vertices, refinement level as color."""
    n = scene.n_anchors
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    pos = scene.positions.astype(np.float64)
    for i in range(n):
        r, g, b = LEVEL_COLORS[int(scene.levels[i]) % len(LEVEL_COLORS)]
        x, y, z = pos[i]
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
