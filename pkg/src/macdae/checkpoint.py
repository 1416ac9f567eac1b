"""Self-describing binary checkpoints.

Layout, all integers little-endian::

    b"MACDAEv\\0"                  magic (8 bytes)
    u32 version
    u32 n, kind (utf-8)
    u32 n, config (utf-8 JSON, sorted keys)
    u32 tensor count
    per tensor: u32 n, name; u32 ndim; ndim x u64 shape; float64 data (<f8, C order)
    sha256 of everything above (32 bytes)

Floats are written as raw IEEE-754 bytes so a save/load round trip is exact.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .features import EmbeddingTable, FeatureSpace
from .pretrain import PretrainConfig, PretrainModel, init_pretrain_model
from .ranker import RankerConfig, RankerModel, init_ranker

MAGIC = b"MACDAEv\x00"
VERSION = 1
CHECKPOINT_KINDS = ("features", "dae", "vae", "macdae", "ranker")


class CheckpointError(DataError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict
    version: int = VERSION


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_checkpoint(ckpt):
    if ckpt.kind not in CHECKPOINT_KINDS:
        raise CheckpointError(f"unknown checkpoint kind {ckpt.kind!r}")
    parts = [MAGIC, struct.pack("<I", ckpt.version), _pack_str(ckpt.kind),
             _pack_str(json.dumps(ckpt.config, sort_keys=True)),
             struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f8", order="C")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def decode_checkpoint(blob):
    if len(blob) < len(MAGIC) + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = r.string()
    config = json.loads(r.string())
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * count), dtype="<f8")
        tensors[name] = data.astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(kind, config, tensors, version)


def save_checkpoint(path, ckpt):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(ckpt)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}", field=path.name)
    return decode_checkpoint(path.read_bytes())


# ---------------------------------------------------------------------------
# model <-> checkpoint


def _check_shapes(tensors, expected):
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint lacks tensor {name!r}")
        if tensors[name].shape != tuple(shape):
            raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}")


def features_checkpoint(features, extra=None):
    config = {"side_dim": features.side_dim, **(extra or {})}
    tensors = {"emb.user": features.users.weights, "emb.item": features.items.weights}
    return Checkpoint("features", config, tensors)


def features_from_tensors(tensors, side_dim):
    return FeatureSpace(EmbeddingTable("user", tensors["emb.user"].copy()),
                        EmbeddingTable("item", tensors["emb.item"].copy()), side_dim)


def pretrain_checkpoint(model, extra=None):
    return Checkpoint(model.kind, {"model": asdict(model.config), **(extra or {})},
                      dict(model.params))


def pretrain_from_checkpoint(ckpt):
    if ckpt.kind not in ("dae", "vae", "macdae"):
        raise CheckpointError(f"expected a pre-training checkpoint, got {ckpt.kind!r}")
    config = PretrainConfig(**ckpt.config["model"])
    template = init_pretrain_model(config)
    _check_shapes(ckpt.tensors, {k: v.shape for k, v in template.params.items()})
    return PretrainModel(config, {k: ckpt.tensors[k].copy() for k in template.params})


def ranker_checkpoint(model, extra=None):
    cfg = asdict(model.config)
    cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
    config = {
        "model": cfg,
        "side_dim": model.features.side_dim,
        "pretrained": None if model.pretrained is None else asdict(model.pretrained.config),
        **(extra or {}),
    }
    tensors = {f"rk.{k}": v for k, v in model.params.items()}
    tensors["emb.user"] = model.features.users.weights
    tensors["emb.item"] = model.features.items.weights
    if model.pretrained is not None:
        tensors.update({f"pre.{k}": v for k, v in model.pretrained.params.items()})
    return Checkpoint("ranker", config, tensors)


def ranker_from_checkpoint(ckpt):
    if ckpt.kind != "ranker":
        raise CheckpointError(f"expected a ranker checkpoint, got {ckpt.kind!r}")
    cfg = dict(ckpt.config["model"])
    cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
    config = RankerConfig(**cfg)
    features = features_from_tensors(ckpt.tensors, ckpt.config["side_dim"])
    pretrained = None
    if ckpt.config.get("pretrained") is not None:
        pcfg = PretrainConfig(**ckpt.config["pretrained"])
        sub = Checkpoint(pcfg.kind, {"model": ckpt.config["pretrained"]},
                         {k[4:]: v for k, v in ckpt.tensors.items() if k.startswith("pre.")})
        pretrained = pretrain_from_checkpoint(sub)
    template = init_ranker(config, features, pretrained)
    _check_shapes(ckpt.tensors, {f"rk.{k}": v.shape for k, v in template.params.items()})
    params = {k: ckpt.tensors[f"rk.{k}"].copy() for k in template.params}
    return RankerModel(config, params, features, pretrained)
