"""Binary checkpoint persistence (FOPC format).

Layout, all integers little-endian: magic ``FOPC``, u32 version=1,
u32 config length + UTF-8 ``key=value`` lines, u32 tensor count, then per
tensor: u16 name length + name, u8 rank, u32 dims..., float32 row-major
payload.  A trailing u32 CRC32 covers everything after the magic.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import FormatError
from .features import NormStats
from .model import FopConfig, FopParams, LayerParams
from .transfer import FinetuneHead

FOPC_MAGIC = b"FOPC"
FOPC_VERSION = 1

_CFG_FIELDS = ("d_feat", "d_model", "n_heads", "d_ff", "n_layers", "dropout_p", "max_len")


@dataclass
class Checkpoint:
    """A trained model: configuration, parameters, optional fine-tuning head,
    the feature normalization it was trained with, and run provenance."""

    fop_cfg: FopConfig
    params: FopParams
    norm_stats: NormStats
    head: FinetuneHead | None = None
    provenance: dict[str, str] = field(default_factory=dict)
    version: int = FOPC_VERSION


def _named_tensors(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [("norm.mean", ckpt.norm_stats.mean), ("norm.std", ckpt.norm_stats.std)]
    out.extend((name, t.data) for name, t in ckpt.params.named_tensors())
    if ckpt.head is not None:
        out.extend((name, t.data) for name, t in ckpt.head.named_tensors())
    return out


def _config_text(ckpt: Checkpoint) -> str:
    lines = [f"{k}={getattr(ckpt.fop_cfg, k)}" for k in _CFG_FIELDS]
    lines.append(f"has_head={int(ckpt.head is not None)}")
    for k in sorted(ckpt.provenance):
        lines.append(f"prov.{k}={ckpt.provenance[k]}")
    return "\n".join(lines) + "\n"


def _parse_config(text: str) -> tuple[FopConfig, bool, dict[str, str]]:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"malformed config line {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    try:
        cfg = FopConfig(
            d_feat=int(kv["d_feat"]),
            d_model=int(kv["d_model"]),
            n_heads=int(kv["n_heads"]),
            d_ff=int(kv["d_ff"]),
            n_layers=int(kv["n_layers"]),
            dropout_p=float(kv["dropout_p"]),
            max_len=int(kv["max_len"]),
        )
        has_head = bool(int(kv["has_head"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint config block is incomplete or malformed ({exc})") from exc
    prov = {k[len("prov.") :]: v for k, v in kv.items() if k.startswith("prov.")}
    return cfg, has_head, prov


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    body = bytearray()
    body += struct.pack("<I", FOPC_VERSION)
    cfg_bytes = _config_text(ckpt).encode("utf-8")
    body += struct.pack("<I", len(cfg_bytes))
    body += cfg_bytes
    tensors = _named_tensors(ckpt)
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        name_bytes = name.encode("utf-8")
        body += struct.pack("<H", len(name_bytes))
        body += name_bytes
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(FOPC_MAGIC)
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.label}: truncated (needed {n} bytes at offset {self.pos})")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _expected_shapes(cfg: FopConfig, has_head: bool) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "norm.mean": (cfg.d_feat,),
        "norm.std": (cfg.d_feat,),
        "w_e": (cfg.d_feat, cfg.d_model),
        "w_out": (cfg.d_model, cfg.d_feat),
        "b_out": (cfg.d_feat,),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes[p + "w_q"] = shapes[p + "w_k"] = shapes[p + "w_v"] = shapes[p + "w_o"] = (cfg.d_model, cfg.d_model)
        shapes[p + "w1"] = (cfg.d_model, cfg.d_ff)
        shapes[p + "b1"] = (cfg.d_ff,)
        shapes[p + "w2"] = (cfg.d_ff, cfg.d_model)
        shapes[p + "b2"] = (cfg.d_model,)
        for ln in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
            shapes[p + ln] = (cfg.d_model,)
    if has_head:
        shapes["head.w_y"] = (cfg.d_model, 4)
        shapes["head.bias"] = (4,)
    return shapes


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != FOPC_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {FOPC_MAGIC!r}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    body = blob[4:-4]
    if (zlib.crc32(body) & 0xFFFFFFFF) != stored_crc:
        raise FormatError(f"{path}: CRC mismatch, file is corrupt")
    r = _Reader(body, str(path))
    version = r.u32()
    if version != FOPC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {FOPC_VERSION}")
    cfg_len = r.u32()
    cfg, has_head, prov = _parse_config(r.take(cfg_len).decode("utf-8"))
    n_tensors = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        tensors[name] = arr
    if r.pos != len(body):
        raise FormatError(f"{path}: {len(body) - r.pos} trailing bytes after the tensor table")

    expected = _expected_shapes(cfg, has_head)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise FormatError(f"{path}: tensor set inconsistent with config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise FormatError(f"{path}: tensor {name} has shape {tensors[name].shape}, config implies {shape}")

    def t(name: str) -> Tensor:
        return Tensor(tensors[name], requires_grad=True)

    layers = [
        LayerParams(**{f: t(f"layers.{i}.{f}") for f in (
            "w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2",
            "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta")})
        for i in range(cfg.n_layers)
    ]
    params = FopParams(w_e=t("w_e"), layers=layers, w_out=t("w_out"), b_out=t("b_out"))
    head = FinetuneHead(w_y=t("head.w_y"), bias=t("head.bias")) if has_head else None
    stats = NormStats(tensors["norm.mean"], tensors["norm.std"])
    return Checkpoint(fop_cfg=cfg, params=params, norm_stats=stats, head=head, provenance=prov, version=version)
