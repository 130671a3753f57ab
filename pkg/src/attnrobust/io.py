"""Binary checkpoints and dataset files, graymap export and CSV reports.

All integers are little-endian u32; tensor payloads are little-endian
IEEE-754 binary32.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .attention import AttentionMap
from .data import Example
from .encoders import DualEncoder, EncoderConfig

CHECKPOINT_MAGIC = b"TGAC"
DATASET_MAGIC = b"TGAD"
CHECKPOINT_VERSION = 1
DATASET_VERSION = 1

_U32 = struct.Struct("<I")


class FormatError(ValueError):
    """A file does not match its documented layout."""


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated: need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


# -- checkpoints -------------------------------------------------------------

def _config_tensors(config: EncoderConfig) -> dict[str, np.ndarray]:
    return {f"config/{k}": np.asarray(v, dtype=np.float32) for k, v in dataclasses.asdict(config).items()}


def encode_tensors(tensors: dict[str, np.ndarray], version: int = CHECKPOINT_VERSION) -> bytes:
    """Serialise an ordered name → array table (a u32 record count precedes the records)."""
    parts = [CHECKPOINT_MAGIC, _U32.pack(version), _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode_tensors(buf: bytes) -> dict[str, np.ndarray]:
    """Parse a checkpoint table; structure is checked before the checksum."""
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    r = _Reader(buf)
    r.take(4)
    version = r.u32()
    if version > CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version} (max {CHECKPOINT_VERSION})")
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        n = math.prod(shape)
        out[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    body_end = r.pos
    crc = r.u32()
    if r.pos != len(buf):
        raise FormatError(f"trailing bytes after checksum ({len(buf) - r.pos})")
    if zlib.crc32(buf[:body_end]) != crc:
        raise FormatError("corrupted (CRC mismatch)")
    return out


def model_tensors(model: DualEncoder) -> dict[str, np.ndarray]:
    """Parameters, then encoder config, frozen flags and vocabulary, all as float32 tensors."""
    table = {name: p.data for name, p in sorted(model.params.items())}
    table.update(_config_tensors(model.config))
    table.update({f"frozen/{k}": np.asarray(float(v), dtype=np.float32) for k, v in sorted(model.frozen.items())})
    table.update({f"vocab/{w}": np.asarray(i, dtype=np.float32) for w, i in sorted(model.vocab.items())})
    return table


def checkpoint_save(model: DualEncoder, path) -> None:
    Path(path).write_bytes(encode_tensors(model_tensors(model)))


def checkpoint_load(path) -> DualEncoder:
    """Rebuild an encoder with its parameters, vocabulary and frozen flags."""
    table = decode_tensors(Path(path).read_bytes())
    fields = {f.name: f.type for f in dataclasses.fields(EncoderConfig)}
    cfg_kw = {}
    for name in fields:
        key = f"config/{name}"
        if key not in table:
            raise FormatError(f"checkpoint lacks {key}")
        v = table[key].item()
        # the shortest float32 string restores decimal literals such as 0.07 exactly
        cfg_kw[name] = float(str(np.float32(v))) if name == "tau" else int(v)
    vocab = {k[len("vocab/"):]: int(v.item()) for k, v in table.items() if k.startswith("vocab/")}
    model = DualEncoder.init(EncoderConfig(**cfg_kw), vocab)
    for name, p in model.params.items():
        if name not in table:
            raise FormatError(f"checkpoint lacks parameter {name}")
        if table[name].shape != p.data.shape:
            raise FormatError(f"parameter {name}: shape {table[name].shape} != {p.data.shape}")
        p.data = table[name].copy()
    extra = set(table) - set(model.params) - {k for k in table if k.startswith(("config/", "vocab/", "frozen/"))}
    if extra:
        raise FormatError(f"unexpected tensors in checkpoint: {sorted(extra)}")
    flags = {k: bool(table.get(f"frozen/{k}", np.float32(0)).item()) for k in ("image", "text")}
    return model.set_frozen(**flags)


# -- dataset files -----------------------------------------------------------

def encode_dataset(examples: list[Example]) -> bytes:
    if not examples:
        raise ValueError("no examples to write")
    images = np.stack([e.image for e in examples])
    n, c, h, w = images.shape
    labels = np.array([e.label for e in examples], dtype="<u4")
    masks = np.stack([e.mask for e in examples]).astype(np.uint8)
    header = DATASET_MAGIC + b"".join(_U32.pack(v) for v in (DATASET_VERSION, n, c, h, w))
    return header + np.ascontiguousarray(images, dtype="<f4").tobytes() + labels.tobytes() + masks.tobytes()


def decode_dataset(buf: bytes) -> list[Example]:
    if buf[:4] != DATASET_MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    r = _Reader(buf)
    r.take(4)
    version = r.u32()
    if version > DATASET_VERSION:
        raise FormatError(f"unsupported version {version} (max {DATASET_VERSION})")
    n, c, h, w = (r.u32() for _ in range(4))
    expected = 24 + n * c * h * w * 4 + n * 4 + n * h * w
    if len(buf) != expected:
        raise FormatError(f"truncated or padded: header implies {expected} bytes, file has {len(buf)}")
    images = np.frombuffer(r.take(n * c * h * w * 4), dtype="<f4").reshape(n, c, h, w).astype(np.float32)
    labels = np.frombuffer(r.take(n * 4), dtype="<u4").astype(np.int64)
    masks = np.frombuffer(r.take(n * h * w), dtype=np.uint8).reshape(n, h, w).copy()
    return [Example(images[i], int(labels[i]), masks[i]) for i in range(n)]


def save_dataset(examples, path) -> None:
    Path(path).write_bytes(encode_dataset(list(examples)))


def load_dataset(path) -> list[Example]:
    return decode_dataset(Path(path).read_bytes())


# -- attention export --------------------------------------------------------

def to_pixels(values) -> np.ndarray:
    """``round(v * 255)`` with halves rounded up, as uint8."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and (v.min() < 0 or v.max() > 1):
        raise ValueError("attention values must lie in [0, 1]")
    return np.floor(v * 255 + 0.5).astype(np.uint8)


def export_attention(amap: AttentionMap, path) -> None:
    """Write a binary PGM plus a ``.txt`` sidecar with the map's tags."""
    if amap.batched:
        raise ValueError("export one map at a time")
    path = Path(path)
    pixels = to_pixels(amap.values())
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    meta = {"class": int(amap.class_id), "kind": amap.kind, "source": amap.source, "input_kind": amap.input_kind}
    path.with_suffix(".txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h = map(int, parts[1].split())
    data = parts[3]
    if len(data) != w * h:
        raise FormatError(f"PGM payload has {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


# -- CSV ---------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header, rows, comments: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (comments or {}).items():
            fh.write(f"# {k}={_fmt(v)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Return ``(comment key/values, rows as dicts)``."""
    comments, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition("=")
                comments[k] = v
            else:
                lines.append(line)
    return comments, list(csv.DictReader(lines))


def write_loss_trace(path, rows) -> None:
    write_csv(path, ["epoch", "batch", "ce", "larm", "gacm", "total"],
              [(r.epoch, r.batch, r.ce, r.larm, r.gacm, r.total) for r in rows])


def write_metrics(path, reports: list[tuple[str, str, object]], comments: dict | None = None) -> None:
    """``reports`` holds ``(model name, attack name, MetricsReport)`` triples."""
    header = dict(comments or {})
    rows = []
    for model, attack, rep in reports:
        for k, v in rep.echo().items():
            header.setdefault(f"{attack}.{k}" if k.startswith("attack.") else k, v)
        rows += [(model, attack, metric, value) for metric, value in rep.rows()]
    write_csv(path, ["model", "attack", "metric", "value"], rows, header)
