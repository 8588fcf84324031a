"""Binary little-endian PLY for Gaussians and point sets; 8-bit PNG renders."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .gaussians import SceneGaussians, ToothGaussians

GAUSSIAN_PROPS = (
    ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)

_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
    "float": "<f4", "double": "<f8",
    "int8": "i1", "uint8": "u1", "int16": "<i2", "uint16": "<u2", "int32": "<i4", "uint32": "<u4",
    "float32": "<f4", "float64": "<f8",
}
_NP_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int", "u4": "uint",
              "f4": "float", "f8": "double"}


class PlyError(ValueError):
    pass


def write_ply(path, data: np.ndarray, comments=()) -> None:
    """Write a structured array as a single binary-LE ``vertex`` element."""
    dt = data.dtype
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {data.shape[0]}")
    for name in dt.names:
        lines.append(f"property {_NP_TO_PLY[dt.fields[name][0].str[1:]]} {name}")
    lines.append("end_header")
    le = data.astype([(name, "<" + dt.fields[name][0].str[1:]) for name in dt.names], copy=False)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(le.tobytes())


def read_ply(path):
    """Return (structured vertex array, comment lines)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise PlyError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    comments, props, count, fmt = [], [], None, None
    in_vertex = False
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            comments.append(line[len("comment "):])
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
            elif count is not None:
                raise PlyError(f"{path}: only a single vertex element is supported")
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                raise PlyError(f"{path}: unsupported property {line!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt != "binary_little_endian":
        raise PlyError(f"{path}: format {fmt!r} not supported")
    if count is None:
        raise PlyError(f"{path}: no vertex element")
    dt = np.dtype(props)
    if len(body) < count * dt.itemsize:
        raise PlyError(f"{path}: truncated vertex data")
    return np.frombuffer(body, dtype=dt, count=count).copy(), comments


# --------------------------------------------------------------------------
# Gaussians


def save_gaussians(path, scene: SceneGaussians) -> None:
    """Gaussian PLY, with one ``comment tooth <id> <start> <end>`` per tooth."""
    flat = scene.flat()
    n = flat["means"].shape[0]
    data = np.zeros(n, dtype=[(p, "<f4") for p in GAUSSIAN_PROPS])
    cols = np.concatenate([flat["means"], flat["colors"], flat["opacity_logits"][:, None],
                           flat["log_scales"], flat["quats"]], axis=1)
    for j, p in enumerate(GAUSSIAN_PROPS):
        data[p] = cols[:, j]
    off = scene.offsets()
    comments = [f"tooth {t.tooth_id} {off[i]} {off[i + 1]}" for i, t in enumerate(scene.teeth)]
    write_ply(path, data, comments)


_TOOTH_RE = re.compile(r"^tooth (\d+) (\d+) (\d+)$")


def load_gaussians(path) -> SceneGaussians:
    data, comments = read_ply(path)
    missing = [p for p in GAUSSIAN_PROPS if p not in data.dtype.names]
    if missing:
        raise PlyError(f"{path}: missing properties {missing}")
    cols = np.stack([data[p].astype(np.float64) for p in GAUSSIAN_PROPS], axis=1)
    ranges = []
    for c in comments:
        m = _TOOTH_RE.match(c.strip())
        if m:
            ranges.append(tuple(int(v) for v in m.groups()))
    if not ranges:
        ranges = [(0, 0, data.shape[0])]
    teeth = []
    for tid, a, b in ranges:
        if not 0 <= a <= b <= data.shape[0]:
            raise PlyError(f"{path}: bad range for tooth {tid}")
        c = cols[a:b]
        teeth.append(ToothGaussians(tooth_id=tid, means=c[:, 0:3], colors=c[:, 3:6], opacity_logits=c[:, 6],
                                    log_scales=c[:, 7:10], quats=c[:, 10:14]))
    return SceneGaussians(teeth)


def save_points(path, points: np.ndarray, comments=()) -> None:
    data = np.zeros(points.shape[0], dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    data["x"], data["y"], data["z"] = points[:, 0], points[:, 1], points[:, 2]
    write_ply(path, data, comments)


def load_points(path) -> np.ndarray:
    data, _ = read_ply(path)
    return np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)


# --------------------------------------------------------------------------
# PNG


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
