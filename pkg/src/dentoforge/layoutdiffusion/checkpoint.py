"""Single-file layout-model checkpoints.

Layout: 8-byte magic, uint32 format version, uint32 header length, UTF-8
JSON header, then every tensor as little-endian float32 in header order.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .denoiser import DenoiserConfig, GraphDenoiser
from .diffusion import LayoutModel, LayoutNorm, TrainState
from .schedule import make_schedule
from .text import TEXT_DIM

MAGIC = b"DFLAYOUT"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: invalid layout checkpoint (format v{FORMAT_VERSION}): {reason}")


def _flatten_optimizer(state: dict):
    """Split a torch Adam state dict into JSON metadata and named tensors."""
    tensors, meta = {}, {"param_groups": state["param_groups"], "state": {}}
    for pid, st in state["state"].items():
        entry = {}
        for k, v in st.items():
            if isinstance(v, torch.Tensor):
                name = f"optim.{pid}.{k}"
                tensors[name] = v
                entry[k] = {"tensor": name, "dtype": str(v.dtype).replace("torch.", "")}
            else:
                entry[k] = v
        meta["state"][str(pid)] = entry
    return meta, tensors


def _unflatten_optimizer(meta: dict, tensors: dict) -> dict:
    state = {}
    for pid, entry in meta["state"].items():
        st = {}
        for k, v in entry.items():
            if isinstance(v, dict) and "tensor" in v:
                st[k] = tensors[v["tensor"]].to(getattr(torch, v["dtype"]))
            else:
                st[k] = v
        state[int(pid)] = st
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(path, model: LayoutModel, state: TrainState | None = None) -> None:
    tensors = {f"model.{k}": v.detach() for k, v in model.denoiser.state_dict().items()}
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.denoiser.cfg.to_dict(),
        "schedule": model.schedule.to_dict(),
        "norm": {"mean": model.norm.mean.tolist(), "std": model.norm.std.tolist()},
        "text_dim": TEXT_DIM,
        "feature_dim": model.denoiser.cfg.feature_dim,
    }
    if state is not None:
        header["train"] = {"epoch": state.epoch, "history": state.history}
        if state.optimizer_state is not None:
            meta, opt_tensors = _flatten_optimizer(state.optimizer_state)
            header["train"]["optimizer"] = meta
            tensors.update(opt_tensors)
    header["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for v in tensors.values():
        buf.write(np.ascontiguousarray(v.cpu().numpy(), dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(LayoutModel, TrainState)``; raises :class:`CheckpointFormatError`."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointFormatError(path, "bad magic")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(path, f"unsupported version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(path, f"corrupt header ({exc})") from None
    offset = 16 + hlen
    tensors = {}
    try:
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            end = offset + 4 * count
            if end > len(raw):
                raise CheckpointFormatError(path, f"truncated tensor {entry['name']}")
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
            tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
            offset = end
        if offset != len(raw):
            raise CheckpointFormatError(path, "trailing bytes")
        cfg = DenoiserConfig(**header["config"])
        net = GraphDenoiser(cfg)
        sd = net.state_dict()
        net.load_state_dict({k: tensors[f"model.{k}"].to(sd[k].dtype) for k in sd})
        sch = header["schedule"]
        norm = LayoutNorm(np.array(header["norm"]["mean"]), np.array(header["norm"]["std"]))
        model = LayoutModel(net, make_schedule(sch["T"], sch["kind"]), norm)
        state = TrainState()
        train = header.get("train")
        if train:
            state.epoch = int(train["epoch"])
            state.history = list(train["history"])
            if "optimizer" in train:
                state.optimizer_state = _unflatten_optimizer(train["optimizer"], tensors)
    except CheckpointFormatError:
        raise
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise CheckpointFormatError(path, f"inconsistent contents ({exc})") from None
    net.eval()
    return model, state
