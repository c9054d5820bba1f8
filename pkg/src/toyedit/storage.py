"""Persistence: binary checkpoints, PNG image codec, dataset manifests.

Checkpoint layout (all integers little-endian uint32):
    magic "SEDT" | version | meta_len | meta (UTF-8 JSON) | tensor_count
    then per tensor: name_len | name | rank | dims... | float32 data (LE)

Round-trips are bit-exact. PNG quantization to 8 bits is the only lossy
step anywhere in the pipeline.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from toyedit import model as M
from toyedit.autograd import Tensor
from toyedit.pairs import PairRecord

MAGIC = b"SEDT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class ImageDecodeError(ValueError):
    pass


def save_checkpoint(params: dict[str, Tensor], config: M.ModelConfig,
                    meta: dict, path) -> None:
    meta_all = dict(meta)
    meta_all["model_config"] = {
        k: getattr(config, k)
        for k in ("image_size", "patch_size", "d_model", "n_heads", "n_layers",
                  "vocab_size", "max_caption_tokens", "max_instruction_tokens",
                  "t_c", "T", "ffn_mult", "sym_wma")
    }
    meta_bytes = json.dumps(meta_all).encode("utf-8")
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode("utf-8")
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(data.tobytes())


def _read(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedCheckpointError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> tuple[dict[str, Tensor], M.ModelConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = struct.unpack("<I", _read(fh, 4, "version"))[0]
        if version != VERSION:
            raise UnsupportedVersionError(
                f"checkpoint version {version} unsupported (this build reads {VERSION})")
        meta_len = struct.unpack("<I", _read(fh, 4, "metadata length"))[0]
        meta = json.loads(_read(fh, meta_len, "metadata").decode("utf-8"))
        config = M.ModelConfig(**meta.pop("model_config"))
        count = struct.unpack("<I", _read(fh, 4, "tensor count"))[0]
        params: dict[str, Tensor] = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read(fh, 4, "name length"))[0]
            name = _read(fh, name_len, "tensor name").decode("utf-8")
            rank = struct.unpack("<I", _read(fh, 4, "rank"))[0]
            dims = tuple(struct.unpack("<I", _read(fh, 4, "dim"))[0] for _ in range(rank))
            n_bytes = int(np.prod(dims)) * 4 if dims else 4
            data = np.frombuffer(_read(fh, n_bytes, f"data of {name}"), dtype="<f4")
            params[name] = Tensor(data.reshape(dims).copy(), requires_grad=True)

    expected = M.param_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise ShapeMismatchError(f"checkpoint missing tensor {name!r}")
        if params[name].data.shape != shape:
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {params[name].data.shape}, config implies {shape}")
    return params, config, meta


# --- PNG codec -------------------------------------------------------------

def encode_image(img01: np.ndarray) -> bytes:
    """[H, W, 3] floats in [0, 1] -> 8-bit RGB non-interlaced PNG bytes."""
    arr = np.asarray(img01, dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    """PNG bytes -> [H, W, 3] float32 in [0, 1]. Any size decodes; callers
    that feed the model validate dimensions themselves."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ImageDecodeError(f"not a decodable image: {exc}") from exc
    rgb = img.convert("RGB")
    return (np.asarray(rgb, dtype=np.float32) / 255.0).astype(np.float32)


# --- dataset manifests -------------------------------------------------------

def write_manifest(records: list[PairRecord], out_dir, name: str = "records") -> Path:
    """Line-delimited JSON manifest; image fields are relative paths to PNG
    files under <out_dir>/images/."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / f"{name}.jsonl"
    with open(manifest, "w") as fh:
        for idx, rec in enumerate(records):
            xc_rel = f"images/{name}_{idx:06d}_in.png"
            x_rel = f"images/{name}_{idx:06d}_out.png"
            (out_dir / xc_rel).write_bytes(encode_image(rec.x_c))
            (out_dir / x_rel).write_bytes(encode_image(rec.x))
            row = {
                "x_c": xc_rel, "x": x_rel,
                "y_c": [int(t) for t in rec.y_c],
                "y": [int(t) for t in rec.y],
                "out_caption": [int(t) for t in rec.out_caption],
                "gamma": rec.gamma, "cfg": rec.cfg, "seed": rec.seed,
                "scores": rec.scores, "provenance": rec.provenance,
            }
            fh.write(json.dumps(row) + "\n")
    return manifest


def read_manifest(manifest_path) -> list[PairRecord]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records = []
    with open(manifest_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            x_c = decode_image((base / row["x_c"]).read_bytes())
            x = decode_image((base / row["x"]).read_bytes())
            records.append(PairRecord(
                x_c=x_c, x=x, y_c=row["y_c"], y=row["y"],
                out_caption=row["out_caption"], gamma=row["gamma"],
                cfg=row["cfg"], seed=row["seed"], scores=row["scores"],
                provenance=row.get("provenance", {})))
    return records
