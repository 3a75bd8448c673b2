"""On-disk formats.

Tensor container (checkpoints and corpus samples), all integers little-endian
uint32::

    magic b"GATT" | version | meta_len | meta (utf-8 line records)
    | n_tensors | per tensor: name_len, name, rank, dims..., float64 LE data

Line records are ``key=value`` pairs separated by single spaces, one record
per line, keys in a fixed order. Floats are written with ``repr`` so they
parse back exactly. Values may not contain spaces or '='.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .glyphdata import CorpusManifest, GlyphSample

MAGIC = b"GATT"
VERSION = 1


class FormatError(ValueError):
    pass


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    s = str(v)
    if " " in s or "=" in s or "\n" in s:
        raise FormatError(f"value {s!r} cannot be stored in a line record")
    return s


def format_record(rec) -> str:
    return " ".join(f"{k}={format_value(v)}" for k, v in rec.items())


def parse_record(line: str) -> "OrderedDict[str, str]":
    out: OrderedDict[str, str] = OrderedDict()
    for tok in line.strip().split(" "):
        if not tok:
            continue
        k, sep, v = tok.partition("=")
        if not sep:
            raise FormatError(f"malformed field {tok!r}")
        out[k] = v
    return out


def write_tensor_file(path, meta: str, tensors: "OrderedDict[str, np.ndarray]") -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta.encode()))]
    parts.append(meta.encode())
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    try:
        path.write_bytes(b"".join(parts))
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def read_tensor_file(path) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    meta = buf[off : off + mlen].decode()
    off += mlen
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(n):
        (nl,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + nl].decode()
        off += nl
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(dims)
        off += 8 * count
        tensors[name] = arr.astype(np.float64)
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return meta, tensors


# corpus samples


def write_sample(path, s: "GlyphSample") -> None:
    meta = format_record(OrderedDict(kind="sample", font=s.font_id, n_chars=len(s.text)))
    write_tensor_file(
        path,
        meta,
        OrderedDict(
            image=s.image,
            region_mask=s.region_mask,
            char_masks=s.char_masks,
            text=np.asarray(s.text, dtype=np.float64),
            labels=np.asarray(s.labels, dtype=np.float64),
        ),
    )


def read_sample(path) -> "GlyphSample":
    from .glyphdata import GlyphSample

    meta, t = read_tensor_file(path)
    rec = parse_record(meta)
    return GlyphSample(
        image=t["image"],
        region_mask=t["region_mask"],
        text=[int(v) for v in t["text"]],
        char_masks=t["char_masks"],
        labels=[int(v) for v in t["labels"]],
        font_id=int(rec["font"]),
    )


def write_manifest(path, m: "CorpusManifest") -> None:
    lines = [
        format_record(
            OrderedDict(
                kind="manifest", version=VERSION, count=m.count, height=m.height, width=m.width,
                channels=m.channels, n_max=m.n_max, alphabet=m.alphabet, fonts=m.fonts, seed=m.seed,
            )
        )
    ]
    lines += [format_record(OrderedDict(kind="sample", index=i, file=f)) for i, f in enumerate(m.files)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> "CorpusManifest":
    from .glyphdata import CorpusManifest

    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise OSError(f"cannot read manifest {path}: {e}") from e
    head = parse_record(lines[0])
    if head.get("kind") != "manifest":
        raise FormatError(f"{path}: first record is not a manifest header")
    files = [parse_record(ln)["file"] for ln in lines[1:]]
    if len(files) != int(head["count"]):
        raise FormatError(f"{path}: header says {head['count']} samples, found {len(files)}")
    for f in files:
        if not (path.parent / f).exists():
            raise FormatError(f"{path}: referenced file {f} is missing")
    return CorpusManifest(
        count=int(head["count"]), height=int(head["height"]), width=int(head["width"]),
        channels=int(head["channels"]), n_max=int(head["n_max"]), alphabet=head["alphabet"],
        fonts=int(head["fonts"]), seed=int(head["seed"]), files=files,
    )
