"""Binary checkpoints with reproducible bytes.

Archive formats that embed timestamps produce different files for
identical contents, which breaks byte-level comparison of repeated runs.
This container holds a JSON header (sorted keys) followed by raw
little-endian array payloads in header order, so equal models serialize
to equal bytes.

Layout: 8-byte magic, uint64 little-endian header length, UTF-8 JSON
header, concatenated C-order array buffers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from glyphclust.editor import EditorParams, EncoderParams
from glyphclust.mixture import LambdaTable, MixtureState
from glyphclust.warp import SpatialPrior

MAGIC = b"GLYPHCK1"

_EDITOR_FIELDS = ("gen_w1", "gen_b1", "gen_w2", "gen_b2", "mix", "skip_gain")
_ENCODER_FIELDS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b")


def _collect_arrays(
    state: MixtureState, table: LambdaTable | None
) -> dict[str, np.ndarray]:
    arrays = {
        "template_logits": state.template_logits,
        "mix_logits": state.mix_logits,
    }
    if state.editor is not None:
        for name in _EDITOR_FIELDS:
            arrays[f"editor.{name}"] = getattr(state.editor, name)
        for name in _ENCODER_FIELDS:
            arrays[f"encoder.{name}"] = getattr(state.encoder, name)
    if table is not None:
        arrays["lambda.values"] = table.values
    return {k: v.detach().numpy() for k, v in arrays.items()}


def save_checkpoint(
    path: str | Path,
    state: MixtureState,
    table: LambdaTable | None = None,
    extra: dict | None = None,
) -> None:
    """Write the model (and optional spatial table) to one file."""
    arrays = _collect_arrays(state, table)
    meta = {
        "version": 1,
        "variant": state.variant,
        "bandwidth": state.bandwidth,
        "z_dim": state.z_dim,
        "prior": {
            "sigma_r": state.prior.sigma_r,
            "sigma_o": state.prior.sigma_o,
            "sigma_s": state.prior.sigma_s,
            "sigma_a": state.prior.sigma_a,
        },
    }
    if state.editor is not None:
        meta["editor"] = {
            "n_kernels": state.editor.n_kernels,
            "kernel_size": state.editor.kernel_size,
        }
    if extra:
        meta["extra"] = extra

    entries = []
    payloads = []
    for name in sorted(arrays):
        # ascontiguousarray promotes 0-dim arrays to 1-dim; keep the shape
        arr = np.ascontiguousarray(arrays[name]).reshape(arrays[name].shape)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
        )
        payloads.append(arr.tobytes())
    header = json.dumps(
        {"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")

    out = Path(path)
    with open(out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for buf in payloads:
            f.write(buf)


def load_checkpoint(path: str | Path) -> tuple[MixtureState, LambdaTable | None, dict]:
    """Read a checkpoint back into a state, table, and metadata dict."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    meta = header["meta"]

    arrays = {}
    offset = 16 + hlen
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dt.itemsize
        buf = raw[offset : offset + nbytes]
        if len(buf) != nbytes:
            raise ValueError(f"{path} is truncated at array {entry['name']}")
        arrays[entry["name"]] = torch.as_tensor(
            np.frombuffer(buf, dtype=dt).reshape(shape).copy()
        )
        offset += nbytes

    prior = SpatialPrior(
        sigma_r=meta["prior"]["sigma_r"],
        sigma_o=meta["prior"]["sigma_o"],
        sigma_s=meta["prior"]["sigma_s"],
        sigma_a=meta["prior"]["sigma_a"],
    )
    editor = encoder = None
    if "editor" in meta:
        editor = EditorParams(
            **{name: arrays[f"editor.{name}"] for name in _EDITOR_FIELDS},
            n_kernels=meta["editor"]["n_kernels"],
            kernel_size=meta["editor"]["kernel_size"],
        )
        encoder = EncoderParams(
            **{name: arrays[f"encoder.{name}"] for name in _ENCODER_FIELDS}
        )
    state = MixtureState(
        variant=meta["variant"],
        template_logits=arrays["template_logits"],
        mix_logits=arrays["mix_logits"],
        editor=editor,
        encoder=encoder,
        prior=prior,
        bandwidth=meta["bandwidth"],
        z_dim=meta["z_dim"],
    )
    table = None
    if "lambda.values" in arrays:
        table = LambdaTable(values=arrays["lambda.values"])
    return state, table, meta
