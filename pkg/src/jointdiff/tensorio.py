"""Bit-exact tensor container, checkpoint bundles and dataset manifests.

Container layout (little-endian)::

    0  4 bytes  magic "DKTN"
    4  u8       version (1)
    5  u8       dtype (0 = float32)
    6  u8       ndim (>= 1)
    7  u8       reserved (0)
    8  ndim x u32 extents (each >= 1)
    .. row-major float32 payload
"""
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError

MAGIC = b"DKTN"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBBB")

CKPT_MAGIC = b"DKTC"
MANIFEST_VERSION = 1


def encode_tensor(arr):
    arr = np.asarray(arr)
    if arr.ndim == 0 or arr.size == 0:
        raise ParameterError(f"cannot store an empty-shape tensor {arr.shape}")
    if arr.ndim > 255:
        raise ParameterError("too many dimensions")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise ParameterError("extent does not fit in u32")
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return head + dims + payload


def decode_tensor(buf, offset=0, exact=True):
    """Parse one tensor starting at ``offset``.

    Returns ``(array, end_offset)``. With ``exact`` the buffer must end
    right after the payload.
    """
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated header", offset=len(buf))
    magic, version, dtype, ndim, reserved = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=offset)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=offset + 4)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=offset + 5)
    if ndim == 0:
        raise FormatError("empty shape (ndim = 0)", offset=offset + 6)
    if reserved != 0:
        raise FormatError("reserved byte is not zero", offset=offset + 7)
    pos = offset + _HEADER.size
    if len(buf) - pos < 4 * ndim:
        raise FormatError("truncated extents", offset=len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    for i, d in enumerate(shape):
        if d == 0:
            raise FormatError("zero extent", offset=pos + 4 * i)
    pos += 4 * ndim
    count = 1
    for d in shape:
        count *= d
    nbytes = 4 * count
    if nbytes > len(buf) - pos:
        raise FormatError(
            f"payload needs {nbytes} bytes, only {len(buf) - pos} available", offset=pos
        )
    end = pos + nbytes
    if exact and end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes", offset=end)
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
    return arr.astype(np.float32), end


def tensor_write(path, arr):
    data = encode_tensor(arr)
    with open(path, "wb") as fh:
        fh.write(data)


def tensor_read(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, _ = decode_tensor(buf)
    return arr


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params, header):
    """Write named float32 tensors plus a JSON header into one file.

    Layout: magic "DKTC", u32 header length, UTF-8 JSON header, then one
    container blob per parameter in header order.
    """
    names = list(params)
    blobs = [encode_tensor(params[n]) for n in names]
    meta = dict(header)
    meta["params"] = [{"name": n, "nbytes": len(b)} for n, b in zip(names, blobs)]
    hj = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<I", len(hj)) + hj)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, header)``."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    if len(buf) < 8:
        raise FormatError("truncated checkpoint header", offset=len(buf))
    (hlen,) = struct.unpack_from("<I", buf, 4)
    if 8 + hlen > len(buf):
        raise FormatError("truncated checkpoint header", offset=8)
    try:
        header = json.loads(buf[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not JSON: {exc}", offset=8) from exc
    pos = 8 + hlen
    entries = header.pop("params", None) if isinstance(header, dict) else None
    if not isinstance(entries, list):
        raise FormatError("checkpoint header lacks a parameter table", offset=8)
    params = {}
    for entry in entries:
        try:
            name, nbytes = str(entry["name"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad parameter table entry {entry!r}", offset=8) from exc
        if nbytes < 0:
            raise FormatError(f"negative size for {name}", offset=8)
        end = pos + nbytes
        arr, _ = decode_tensor(buf[:end], pos, exact=True)
        params[name] = arr
        pos = end
    if pos != len(buf):
        raise FormatError("trailing bytes after last parameter", offset=pos)
    return params, header


# -- manifests ---------------------------------------------------------------

@dataclass
class SampleRecord:
    image: str
    target: str
    kind: str  # "onehot" | "logits"
    split: str = "train"
    seed: int = 0
    hard_mask: str | None = None


@dataclass
class DatasetManifest:
    """Index of image/target tensor files.

    Paths are stored relative to the manifest's directory (``root``).
    """

    num_classes: int
    samples: list = field(default_factory=list)
    role: str = "original"
    balancing: dict | None = None
    meta: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION
    root: Path = field(default=Path("."), repr=False, compare=False)

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    @property
    def kind(self):
        kinds = {s.kind for s in self.samples}
        return kinds.pop() if len(kinds) == 1 else None

    def load(self, rec):
        return tensor_read(self.root / rec.image), tensor_read(self.root / rec.target)

    def load_split(self, name):
        """Stack every record of a split as ``(images N x 1 x H x W, targets N x C x H x W)``."""
        recs = self.split(name)
        if not recs:
            return None, None
        pairs = [self.load(r) for r in recs]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def to_dict(self):
        return {
            "version": self.version,
            "num_classes": self.num_classes,
            "role": self.role,
            "balancing": self.balancing,
            "meta": self.meta,
            "samples": [asdict(s) for s in self.samples],
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        self.root = path.parent

    @classmethod
    def from_file(cls, path, validate=True):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except OSError:
            raise
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
        try:
            if d.get("version") != MANIFEST_VERSION:
                raise FormatError(f"unsupported manifest version {d.get('version')}")
            m = cls(
                num_classes=int(d["num_classes"]),
                samples=[SampleRecord(**s) for s in d["samples"]],
                role=d.get("role", "original"),
                balancing=d.get("balancing"),
                meta=d.get("meta", {}),
                root=path.parent,
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"manifest {path} is missing fields: {exc}") from exc
        if validate:
            m.validate()
        return m

    def validate(self):
        if self.samples and self.kind is None:
            raise FormatError("manifest mixes target kinds")
        for s in self.samples:
            if s.kind not in ("onehot", "logits"):
                raise FormatError(f"unknown target kind {s.kind!r}")
            for p in (s.image, s.target):
                if not (self.root / p).is_file():
                    raise FormatError(f"manifest references missing file {p}")

    def checksum(self):
        """SHA-256 over the manifest JSON and every referenced file."""
        h = hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode())
        for s in self.samples:
            for p in (s.image, s.target):
                h.update((self.root / p).read_bytes())
        return h.hexdigest()


def ensure_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path
