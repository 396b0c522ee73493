"""Planted photo corpora for controlled experiments.

Three photo classes are synthesized:

* relevant -- "cloudy sky" photos: high blue mean, smooth texture. These
  pass the sky query and are the ground-truth targets.
* decoy -- photos that also pass the sky query (smooth, blue) but are not
  relevant. They keep the query imperfect, the way real content predicates
  are, so success rates can differ between device-selection strategies.
* clutter -- noisy multi-colored photos that fail the query.

Relevance locality is planted directly: a `locality` fraction of all
relevant photos is concentrated on the first ceil(0.1 * devices) "hot"
devices; decoys and clutter spread uniformly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from theia.predicates import Photo, write_photo


@dataclass(frozen=True)
class CorpusSpec:
    devices: int
    photos_per_device: int
    locality: float
    relevant_fraction: float = 0.08
    decoy_fraction: float = 0.06
    width: int = 64
    height: int = 48
    seed: int = 0

    def __post_init__(self) -> None:
        if self.devices < 1 or self.photos_per_device < 1:
            raise ValueError("devices and photos_per_device must be >= 1")
        if not 0.0 <= self.locality <= 1.0:
            raise ValueError("locality must be in [0, 1]")


@dataclass
class CorpusManifest:
    spec: CorpusSpec
    device_ids: list[str]
    hot_devices: list[str]
    relevant: dict[str, list[str]] = field(default_factory=dict)
    decoys: dict[str, list[str]] = field(default_factory=dict)

    def relevant_ids(self) -> set[tuple[str, str]]:
        return {(d, p) for d, ids in self.relevant.items() for p in ids}

    def total_relevant(self) -> int:
        return sum(len(v) for v in self.relevant.values())

    def total_photos(self) -> int:
        return self.spec.devices * self.spec.photos_per_device

    def to_json(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "device_ids": self.device_ids,
            "hot_devices": self.hot_devices,
            "relevant": self.relevant,
            "decoys": self.decoys,
        }

    @staticmethod
    def from_json(data: dict) -> "CorpusManifest":
        return CorpusManifest(
            spec=CorpusSpec(**data["spec"]),
            device_ids=list(data["device_ids"]),
            hot_devices=list(data["hot_devices"]),
            relevant={k: list(v) for k, v in data["relevant"].items()},
            decoys={k: list(v) for k, v in data["decoys"].items()},
        )


def _sky_photo(rng: np.random.Generator, pid: str, w: int, h: int, base: tuple[int, int, int]) -> Photo:
    """Smooth bluish raster with a gentle vertical gradient."""
    r, g, b = base
    rows = np.linspace(-6, 6, h)[:, None, None]
    pixels = np.empty((h, w, 3), dtype=np.float64)
    pixels[:, :, 0] = r
    pixels[:, :, 1] = g
    pixels[:, :, 2] = b
    pixels = pixels + rows + rng.normal(0.0, 2.0, size=(h, w, 3))
    return Photo(id=pid, pixels=np.clip(pixels, 0, 255).astype(np.uint8), ts=float(rng.integers(1, 2**30)))


def _clutter_photo(rng: np.random.Generator, pid: str, w: int, h: int) -> Photo:
    """Blocky multicolored noise; fails both the blue-mean and texture tests."""
    pixels = rng.integers(0, 256, size=(h, w, 3)).astype(np.float64)
    for _ in range(6):
        x0, y0 = int(rng.integers(0, w)), int(rng.integers(0, h))
        x1, y1 = min(w, x0 + int(rng.integers(4, w))), min(h, y0 + int(rng.integers(4, h)))
        block = rng.integers(0, 256, size=3) + rng.normal(0.0, 25.0, size=(y1 - y0, x1 - x0, 3))
        pixels[y0:y1, x0:x1] = block
    return Photo(
        id=pid,
        pixels=np.clip(pixels, 0, 255).astype(np.uint8),
        ts=float(rng.integers(1, 2**30)),
    )


RELEVANT_BASE = (150, 170, 215)  # cloudy sky
DECOY_BASE = (125, 145, 205)  # smooth blue, but not a sky


def generate_photos(spec: CorpusSpec) -> tuple[dict[str, list[Photo]], CorpusManifest]:
    """Synthesize the corpus in memory, deterministically from the seed."""
    rng = np.random.default_rng(spec.seed)
    device_ids = [f"dev{d:03d}" for d in range(spec.devices)]
    n_hot = math.ceil(0.1 * spec.devices)
    hot = device_ids[:n_hot]
    cold = device_ids[n_hot:] or hot

    total = spec.devices * spec.photos_per_device
    n_relevant = round(total * spec.relevant_fraction)
    n_decoy = round(total * spec.decoy_fraction)
    n_hot_relevant = round(spec.locality * n_relevant)

    capacity = {d: spec.photos_per_device for d in device_ids}

    def place(count: int, pool: list[str]) -> list[str]:
        placed = []
        i = 0
        guard = 0
        while len(placed) < count and guard < count * (len(pool) + 1):
            d = pool[i % len(pool)]
            i += 1
            guard += 1
            if capacity[d] > 0:
                capacity[d] -= 1
                placed.append(d)
        return placed

    relevant_homes = place(n_hot_relevant, hot) + place(n_relevant - n_hot_relevant, cold)
    # look-alike photos that pass the query without being relevant cluster
    # away from the hot devices, mirroring how relevance does the opposite
    decoy_homes = place(n_decoy, cold)

    manifest = CorpusManifest(spec=spec, device_ids=device_ids, hot_devices=hot)
    photos: dict[str, list[Photo]] = {d: [] for d in device_ids}
    counters = {d: 0 for d in device_ids}

    def next_id(device: str) -> str:
        counters[device] += 1
        return f"{device}_p{counters[device]:04d}"

    for device in relevant_homes:
        pid = next_id(device)
        photos[device].append(_sky_photo(rng, pid, spec.width, spec.height, RELEVANT_BASE))
        manifest.relevant.setdefault(device, []).append(pid)
    for device in decoy_homes:
        pid = next_id(device)
        photos[device].append(_sky_photo(rng, pid, spec.width, spec.height, DECOY_BASE))
        manifest.decoys.setdefault(device, []).append(pid)
    for device in device_ids:
        while capacity[device] > 0:
            capacity[device] -= 1
            photos[device].append(_clutter_photo(rng, next_id(device), spec.width, spec.height))
    return photos, manifest


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> CorpusManifest:
    """Write the corpus to disk: corpus/<device_id>/<photo_id>.ppm + .meta."""
    out_dir = Path(out_dir)
    photos, manifest = generate_photos(spec)
    for device_id, plist in photos.items():
        for photo in plist:
            write_photo(out_dir / device_id, photo)
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(corpus_dir: str | Path) -> CorpusManifest:
    return CorpusManifest.from_json(json.loads((Path(corpus_dir) / "manifest.json").read_text()))
