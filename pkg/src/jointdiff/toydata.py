"""Procedural SAR-like toy scenes, tiling, and human-viewable exports.

Class indices: 0 sea, 1 oil, 2 look-alike, 3 land, 4 ship. Scenes with
fewer classes use the leading subset.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .numerics import Rng
from .tensorio import DatasetManifest, SampleRecord, ensure_dir, tensor_write

CLASS_NAMES = ("sea", "oil", "look-alike", "land", "ship")
SEA, OIL, LOOKALIKE, LAND, SHIP = range(5)

PALETTE = np.array(
    [
        (0, 0, 0),        # sea
        (0, 255, 255),    # oil
        (255, 0, 0),      # look-alike
        (0, 153, 0),      # land
        (153, 76, 0),     # ship
    ],
    dtype=np.uint8,
)

# mean backscatter intensities before speckle
SEA_LEVEL = 0.40
OIL_LEVEL = 0.08
LOOKALIKE_DEPTH = 0.55
LAND_LEVEL = 0.85
SHIP_LEVEL = 1.40
# intensity mapped to +1
INTENSITY_CEIL = 1.6


@dataclass
class SceneSpec:
    size: int = 32
    num_classes: int = 5
    probs: dict = field(default_factory=lambda: {"oil": 0.7, "look-alike": 0.6, "land": 0.35, "ship": 0.4})
    looks: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.size < 4 or self.size % 2:
            raise ParameterError("scene size must be an even number >= 4")
        if not 2 <= self.num_classes <= 5:
            raise ParameterError("num_classes must be in [2, 5]")
        if self.looks < 1:
            raise ParameterError("speckle looks must be >= 1")
        for k, p in self.probs.items():
            if k not in CLASS_NAMES[1:]:
                raise ParameterError(f"unknown class {k!r}")
            if not 0 <= p <= 1:
                raise ParameterError(f"probability for {k} outside [0, 1]")

    def prob(self, cls):
        return float(self.probs.get(CLASS_NAMES[cls], 0.0)) if cls < self.num_classes else 0.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _ellipse_dist(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return np.sqrt(u * u + v * v)


def generate_scene(spec, rng):
    """Paint one scene; returns (image 1 x H x W in [-1, 1], one-hot C x H x W)."""
    n = spec.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) + 0.5
    label = np.zeros((n, n), dtype=np.int64)

    # sea with a gentle wind gradient
    ang = rng.uniform(()) * 2 * np.pi
    ramp = (np.cos(ang) * (xx / n - 0.5) + np.sin(ang) * (yy / n - 0.5))
    intensity = SEA_LEVEL * (1.0 + 0.25 * ramp)

    if rng.uniform(()) < spec.prob(LOOKALIKE):
        for _ in range(1 + int(rng.uniform(()) < 0.4)):
            cy, cx = rng.uniform((2,)) * n
            ry, rx = (0.12 + 0.14 * rng.uniform((2,))) * n
            d = _ellipse_dist(yy, xx, cy, cx, ry, rx, rng.uniform(()) * np.pi)
            # soft edge: half depth at the labelled boundary
            profile = 1.0 / (1.0 + np.exp(-(1.0 - d) * 4.0))
            intensity = intensity * (1.0 - LOOKALIKE_DEPTH * profile)
            label[d < 1.0] = LOOKALIKE

    if rng.uniform(()) < spec.prob(OIL):
        for _ in range(1 + int(rng.uniform(()) < 0.3)):
            cy, cx = (0.15 + 0.7 * rng.uniform((2,))) * n
            rx = (0.18 + 0.2 * rng.uniform(())) * n
            ry = rx * (0.15 + 0.2 * rng.uniform(()))
            d = _ellipse_dist(yy, xx, cy, cx, max(ry, 1.0), rx, rng.uniform(()) * np.pi)
            inside = d < 1.0
            intensity = np.where(inside, OIL_LEVEL, intensity)
            label[inside] = OIL

    if rng.uniform(()) < spec.prob(LAND):
        side = int(rng.uniform(()) * 4)
        depth = (0.15 + 0.2 * rng.uniform(())) * n
        phase, freq = rng.uniform((2,)) * (2 * np.pi, 3.0)
        along, across = [(xx, yy), (yy, xx), (xx, n - yy), (yy, n - xx)][side]
        coast = depth * (1.0 + 0.25 * np.sin(2 * np.pi * (freq + 1.0) * along / n + phase))
        land = across < coast
        p1, p2 = rng.uniform((2,)) * 2 * np.pi
        texture = 1.0 + 0.2 * np.sin(xx * 0.9 + p1) * np.cos(yy * 0.7 + p2)
        intensity = np.where(land, LAND_LEVEL * texture, intensity)
        label[land] = LAND

    if rng.uniform(()) < spec.prob(SHIP):
        for _ in range(1 + int(rng.uniform(()) * 2)):
            for _attempt in range(10):
                y, x = (rng.uniform((2,)) * (n - 1)).astype(int)
                if label[y, x] != LAND:
                    break
            else:
                continue
            cells = [(y, x)]
            if rng.uniform(()) < 0.5:
                cells.append((y, x + 1) if rng.uniform(()) < 0.5 else (y + 1, x))
            for cy, cx in cells:
                if label[cy, cx] != LAND:
                    intensity[cy, cx] = SHIP_LEVEL
                    label[cy, cx] = SHIP

    speckle = rng.gamma(spec.looks, 1.0 / spec.looks, intensity.shape)
    observed = intensity * speckle
    image = np.clip(observed / INTENSITY_CEIL, 0.0, 1.0) * 2.0 - 1.0
    onehot = np.zeros((spec.num_classes, n, n), dtype=np.float32)
    np.put_along_axis(onehot, label[None], 1.0, axis=0)
    return image[None].astype(np.float32), onehot


def generate_arrays(spec, n, stream_offset=0):
    """Generate ``n`` scenes from per-sample streams ``stream_offset + i``."""
    images = np.zeros((n, 1, spec.size, spec.size), dtype=np.float32)
    onehots = np.zeros((n, spec.num_classes, spec.size, spec.size), dtype=np.float32)
    for i in range(n):
        images[i], onehots[i] = generate_scene(spec, Rng(spec.seed, stream_offset + i))
    return images, onehots


def generate_dataset(spec, n_train, n_test, out_dir):
    """Write ``n_train + n_test`` scenes as tensor files plus ``manifest.json``."""
    out_dir = ensure_dir(out_dir)
    ensure_dir(out_dir / "data")
    samples = []
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        img, oh = generate_scene(spec, Rng(spec.seed, i))
        img_name = f"data/{split}_{i:05d}_image.dktn"
        mask_name = f"data/{split}_{i:05d}_mask.dktn"
        tensor_write(out_dir / img_name, img)
        tensor_write(out_dir / mask_name, oh)
        samples.append(SampleRecord(image=img_name, target=mask_name, kind="onehot", split=split, seed=i))
    manifest = DatasetManifest(
        num_classes=spec.num_classes,
        samples=samples,
        role="original",
        meta={"dataset_id": f"toy-{spec.size}-c{spec.num_classes}-s{spec.seed}", "scene_spec": spec.to_dict()},
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def crop_tiles(image, mask, tile, keep_all_sea=1.0, rng=None):
    """Cut (image, mask) into ``tile`` x ``tile`` pairs covering every pixel.

    Tiles lie on a non-overlapping grid; when an extent is not a multiple of
    ``tile`` the last row/column is shifted inwards so it overlaps its
    neighbour. Tiles made entirely of sea are kept with probability
    ``keep_all_sea`` (needs ``rng`` when < 1).
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    h, w = image.shape[-2:]
    if tile < 1 or tile > h or tile > w:
        raise ParameterError(f"tile {tile} does not fit a {h} x {w} image")
    if keep_all_sea < 1.0 and rng is None:
        raise ParameterError("rng required for all-sea filtering")

    def starts(extent):
        s = list(range(0, extent - tile + 1, tile))
        if s[-1] + tile < extent:
            s.append(extent - tile)
        return s

    tiles = []
    for y in starts(h):
        for x in starts(w):
            m = mask[..., y:y + tile, x:x + tile]
            all_sea = bool(np.all(m[SEA] == 1)) if m.ndim == 3 else bool(np.all(m == SEA))
            if all_sea and keep_all_sea < 1.0 and not rng.uniform(()) < keep_all_sea:
                continue
            tiles.append((image[..., y:y + tile, x:x + tile].copy(), m.copy()))
    return tiles


# -- exports -----------------------------------------------------------------

def to_gray8(image):
    """Linear map of [-1, 1] to 0..255."""
    return np.round((np.clip(np.asarray(image, dtype=np.float64), -1, 1) + 1.0) * 127.5).astype(np.uint8)


def colorize(label):
    return PALETTE[np.asarray(label)]


def write_pgm(path, gray):
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(gray.tobytes())


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def read_pnm(path):
    """Minimal reader for the binary P5/P6 files written above."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    kind, dims, _maxval, payload = parts
    w, h = map(int, dims.split())
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(h, w) if kind == b"P5" else arr.reshape(h, w, 3)


def load_spec(path):
    return SceneSpec.from_dict(json.loads(Path(path).read_text()))
