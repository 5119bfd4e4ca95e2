"""Weight archives and backbone materialization.

Archive layout (documented external interface)::

    bytes 0..7    magic b"MBTENS01"
    bytes 8..15   little-endian u64: header length H
    bytes 16..    H bytes of UTF-8 JSON:
                    {"schema_version": 1,
                     "meta": {...},
                     "tensors": {name: {"shape": [...], "dtype": "float32",
                                        "offset": int, "nbytes": int,
                                        "sha256": "<hex>"}}}
    then          payload: concatenated raw little-endian IEEE-754
                  float32 buffers, C order, at the declared offsets

Foreign checkpoint layouts are adapted by re-serializing into this
archive with the registry entry's ``name_map`` (source name -> canonical
name) applied at load time.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn

from mitobench.backbone.spec import BackboneSpec
from mitobench.backbone.vit import build_backbone, freeze
from mitobench.errors import IntegrityError, ValidationError

MAGIC = b"MBTENS01"
SCHEMA_VERSION = 1


def save_archive(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    meta: dict | None = None,
    checksums: bool = True,
) -> None:
    """Write tensors to the archive layout; values are stored float32."""
    entries = {}
    buffers = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        entry = {
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
        }
        if checksums:
            entry["sha256"] = hashlib.sha256(raw).hexdigest()
        entries[name] = entry
        buffers.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"schema_version": SCHEMA_VERSION, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in buffers:
            fh.write(raw)


def load_archive(path: str | Path, verify: bool = True) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive; returns (tensors, meta). Verifies checksums when present."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise IntegrityError(f"{path}: not a tensor archive (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("schema_version") != SCHEMA_VERSION:
            raise IntegrityError(
                f"{path}: unsupported schema_version {header.get('schema_version')!r}"
            )
        payload = fh.read()
    tensors = {}
    for name, entry in header["tensors"].items():
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise IntegrityError(f"{path}: truncated payload for tensor {name!r}")
        if verify and "sha256" in entry:
            digest = hashlib.sha256(raw).hexdigest()
            if digest != entry["sha256"]:
                raise IntegrityError(f"{path}: checksum mismatch for tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    return tensors, header.get("meta", {})


def state_tensors(module: nn.Module) -> dict[str, np.ndarray]:
    return {
        name: param.detach().cpu().numpy()
        for name, param in module.state_dict().items()
    }


def state_checksum(module: nn.Module) -> str:
    """Digest over the module's parameter names and exact bytes."""
    h = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(param.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def save_weights(module: nn.Module, path: str | Path, meta: dict | None = None) -> None:
    save_archive(path, state_tensors(module), meta=meta)


def init_parameters(module: nn.Module, seed: int) -> nn.Module:
    """Deterministic random initialization driven by one seeded generator."""
    g = torch.Generator().manual_seed(seed)

    def uniform_(tensor, bound):
        with torch.no_grad():
            tensor.copy_(torch.empty_like(tensor).uniform_(-bound, bound, generator=g))

    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight.shape[1:].numel()
            bound = 1.0 / math.sqrt(fan_in)
            uniform_(m.weight, bound)
            if m.bias is not None:
                uniform_(m.bias, bound)
        elif isinstance(m, nn.LayerNorm):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)
    for name, p in module.named_parameters():
        # Token/positional parameters live outside standard layer types.
        if p.ndim == 3 or name.endswith(("cls_token", "pos_embed", "reg_token")):
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=g) * 0.02)
    return module


def _load_state_from_archive(
    module: nn.Module, tensors: dict[str, np.ndarray], name_map: Mapping[str, str]
) -> None:
    mapped = {name_map.get(name, name): arr for name, arr in tensors.items()}
    state = module.state_dict()
    missing = [name for name in state if name not in mapped]
    if missing:
        raise ValidationError(
            f"archive missing {len(missing)} tensors; first absent: {missing[0]!r}"
        )
    unexpected = [name for name in mapped if name not in state]
    if unexpected:
        raise ValidationError(
            f"archive has {len(unexpected)} tensors unknown to the model; "
            f"first: {unexpected[0]!r}"
        )
    for name, current in state.items():
        arr = mapped[name]
        if tuple(arr.shape) != tuple(current.shape):
            raise ValidationError(
                f"shape mismatch for {name!r}: archive {tuple(arr.shape)}, "
                f"model {tuple(current.shape)}"
            )
    module.load_state_dict(
        {name: torch.from_numpy(mapped[name]).to(state[name].dtype) for name in state}
    )


def load_weights(spec: BackboneSpec, source: str | Path | None = None) -> nn.Module:
    """Materialize an executable, frozen, inference-mode backbone.

    ``source`` defaults to ``spec.weights_source``. ``"seed:<n>"`` draws
    random parameters deterministically; any other value is an archive
    path.
    """
    src = str(source) if source is not None else spec.weights_source
    if not src:
        raise ValidationError(
            f"backbone {spec.name!r} has no weights_source; supply one"
        )
    module = build_backbone(spec)
    if src.startswith("seed:"):
        try:
            seed = int(src.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad seeded source {src!r}") from None
        init_parameters(module, seed)
    else:
        tensors, _ = load_archive(src)
        _load_state_from_archive(module, tensors, spec.name_map)
    return freeze(module)
