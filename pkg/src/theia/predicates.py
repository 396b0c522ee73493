"""Content predicates over RGB rasters plus the name-keyed predicate registry.

A predicate is a pure accept/reject function of one photo with a score in
[0, 1] and a simulated CPU cost. Photos live on disk as binary PPM (P6,
maxval 255) next to a ``<id>.meta`` sidecar of key=value lines.

Heavy detectors are stood in for by a deterministic hash predicate with
configurable selectivity and cost, which keeps experiments controlled and
reproducible while exercising the same ordering/partitioning machinery.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

# One scheduler tick; "free" predicates still consume this much virtual time.
TICK_MS = 0.01

# Nominal per-megapixel CPU costs (simulated milliseconds).
RGB_THRESHOLD_COST_PER_MP = 2.0
HISTOGRAM_COST_PER_MP = 4.0
TEXTURE_COST_PER_MP = 10.0

# Stand-in face detector: deterministic hash predicate with these defaults.
FACE_SELECTIVITY = 0.25
FACE_COST_MS = 30.0
FACE_SALT = 1


class PredicateParameterError(ValueError):
    """A predicate was invoked with malformed parameters."""


@dataclass(frozen=True)
class Photo:
    """An in-memory photo: id, 8-bit RGB raster, capture metadata."""

    id: str
    pixels: np.ndarray  # uint8, shape (height, width, 3)
    ts: float = 0.0
    lat: Optional[float] = None
    lon: Optional[float] = None
    nbytes: int = 0

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"photo {self.id}: raster must be HxWx3")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"photo {self.id}: empty raster")
        if self.nbytes == 0:
            object.__setattr__(self, "nbytes", len(encode_ppm(self.pixels)))

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def megapixels(self) -> float:
        return self.width * self.height / 1e6


@dataclass(frozen=True)
class PredicateVerdict:
    accepted: bool
    score: float
    cpu_time_ms: float


@dataclass(frozen=True)
class TexturePatch:
    """Reference grayscale patch statistics for texture matching."""

    mean: float
    std: float
    grad: float

    def __post_init__(self) -> None:
        if self.std < 0 or self.grad < 0:
            raise ValueError("patch std/grad must be >= 0")


# ---------------------------------------------------------------------------
# Photo file I/O: binary PPM + key=value sidecar
# ---------------------------------------------------------------------------


def encode_ppm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary P6 PPM with maxval 255."""
    fields: list[bytes] = []
    pos = 0
    # Header is ASCII tokens (magic, width, height, maxval) with comments.
    while len(fields) < 4:
        if pos >= len(data):
            raise ValueError("truncated PPM header")
        c = data[pos : pos + 1]
        if c == b"#":
            pos = data.index(b"\n", pos) + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    if fields[0] != b"P6":
        raise ValueError(f"not a binary PPM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=3 * w * h, offset=pos)
    if raster.size != 3 * w * h:
        raise ValueError("truncated PPM raster")
    return raster.reshape(h, w, 3).copy()


def write_photo(directory: str | Path, photo: Photo) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ppm = encode_ppm(photo.pixels)
    (directory / f"{photo.id}.ppm").write_bytes(ppm)
    lines = [f"ts={photo.ts:g}"]
    if photo.lat is not None:
        lines.append(f"lat={photo.lat:g}")
    if photo.lon is not None:
        lines.append(f"lon={photo.lon:g}")
    lines.append(f"bytes={photo.nbytes or len(ppm)}")
    (directory / f"{photo.id}.meta").write_text("\n".join(lines) + "\n")
    return directory / f"{photo.id}.ppm"


def read_photo(directory: str | Path, photo_id: str) -> Photo:
    directory = Path(directory)
    data = (directory / f"{photo_id}.ppm").read_bytes()
    pixels = decode_ppm(data)
    meta: dict[str, str] = {}
    meta_path = directory / f"{photo_id}.meta"
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return Photo(
        id=photo_id,
        pixels=pixels,
        ts=float(meta.get("ts", 0.0)),
        lat=float(meta["lat"]) if "lat" in meta else None,
        lon=float(meta["lon"]) if "lon" in meta else None,
        nbytes=int(meta.get("bytes", len(data))),
    )


# ---------------------------------------------------------------------------
# Built-in predicate evaluators
# ---------------------------------------------------------------------------

_CHANNELS = {"R": 0, "G": 1, "B": 2}


def grayscale(pixels: np.ndarray) -> np.ndarray:
    """Integer luma: (299 R + 587 G + 114 B) / 1000."""
    p = pixels.astype(np.uint32)
    return ((299 * p[:, :, 0] + 587 * p[:, :, 1] + 114 * p[:, :, 2]) // 1000).astype(np.uint8)


def eval_rgb_threshold(photo: Photo, channel: str, cutoff: float) -> PredicateVerdict:
    """Accept photos whose mean intensity on one channel reaches the cutoff."""
    if channel not in _CHANNELS:
        raise PredicateParameterError(f"channel must be one of R/G/B, got {channel!r}")
    if not 0 <= cutoff <= 255:
        raise PredicateParameterError(f"cutoff must be in [0, 255], got {cutoff}")
    mean = float(photo.pixels[:, :, _CHANNELS[channel]].mean())
    return PredicateVerdict(
        accepted=mean >= cutoff,
        score=mean / 255.0,
        cpu_time_ms=RGB_THRESHOLD_COST_PER_MP * photo.megapixels,
    )


def rgb_histogram(pixels: np.ndarray) -> np.ndarray:
    """Normalized 3x16 per-channel histogram (bin = value // 16)."""
    n = pixels.shape[0] * pixels.shape[1]
    hist = np.empty((3, 16), dtype=np.float64)
    for c in range(3):
        hist[c] = np.bincount(pixels[:, :, c].reshape(-1) >> 4, minlength=16)
    return hist / n


def eval_rgb_histogram_match(
    photo: Photo, reference: np.ndarray, threshold: float
) -> PredicateVerdict:
    """Accept photos whose per-channel histogram intersection with the
    reference averages at least the threshold."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != (3, 16):
        raise PredicateParameterError(f"reference must be 3x16, got {reference.shape}")
    sums = reference.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise PredicateParameterError(f"reference histogram not normalized: sums {sums}")
    hist = rgb_histogram(photo.pixels)
    score = float(np.minimum(hist, reference).sum(axis=1).mean())
    return PredicateVerdict(
        accepted=score >= threshold,
        score=score,
        cpu_time_ms=HISTOGRAM_COST_PER_MP * photo.megapixels,
    )


def block_statistics(gray: np.ndarray) -> list[tuple[float, float, float]]:
    """(mean, std, mean gradient magnitude) over a 4x4 block grid."""
    g = gray.astype(np.float64)
    gy, gx = np.gradient(g) if min(g.shape) > 1 else (np.zeros_like(g), np.zeros_like(g))
    mag = np.sqrt(gx * gx + gy * gy)
    stats = []
    for rows_g, rows_m in zip(np.array_split(g, 4, axis=0), np.array_split(mag, 4, axis=0)):
        if rows_g.size == 0:
            continue
        for block_g, block_m in zip(
            np.array_split(rows_g, 4, axis=1), np.array_split(rows_m, 4, axis=1)
        ):
            if block_g.size == 0:
                continue
            stats.append((float(block_g.mean()), float(block_g.std()), float(block_m.mean())))
    return stats

# Normalization constants for the three block statistics.
TEXTURE_MEAN_SCALE = 255.0
TEXTURE_STD_SCALE = 64.0
TEXTURE_GRAD_SCALE = 32.0


def texture_similarity(block: tuple[float, float, float], patch: TexturePatch) -> float:
    d = math.sqrt(
        ((block[0] - patch.mean) / TEXTURE_MEAN_SCALE) ** 2
        + ((block[1] - patch.std) / TEXTURE_STD_SCALE) ** 2
        + ((block[2] - patch.grad) / TEXTURE_GRAD_SCALE) ** 2
    )
    return math.exp(-d)


def eval_texture_match(photo: Photo, patch: TexturePatch, threshold: float) -> PredicateVerdict:
    """Accept photos containing at least one block whose grayscale statistics
    resemble the reference patch."""
    blocks = block_statistics(grayscale(photo.pixels))
    score = max(texture_similarity(b, patch) for b in blocks)
    return PredicateVerdict(
        accepted=score >= threshold,
        score=score,
        cpu_time_ms=TEXTURE_COST_PER_MP * photo.megapixels,
    )


def eval_all_accept(photo: Photo) -> PredicateVerdict:
    """Accept everything without processing; lower bound for retrieval latency."""
    return PredicateVerdict(accepted=True, score=1.0, cpu_time_ms=TICK_MS)


def hash_fraction(photo_id: str, salt: int) -> float:
    """Deterministic uniform draw in [0, 1) keyed by (photo id, salt)."""
    digest = hashlib.blake2b(
        f"{photo_id}\x1f{salt}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") / 2**64


def eval_synthetic(
    photo: Photo, target_selectivity: float, cost_ms: float, salt: int
) -> PredicateVerdict:
    """Deterministic stand-in detector with configurable selectivity and cost.

    Accepts iff the photo's hash fraction falls below the target selectivity,
    so acceptance is reproducible across runs and machines and two salts give
    statistically independent predicates. Accepted photos score in (0.5, 1],
    rejected ones in [0, 0.5], both monotone in the hash draw.
    """
    if not 0.0 <= target_selectivity <= 1.0:
        raise PredicateParameterError(f"selectivity must be in [0,1], got {target_selectivity}")
    u = hash_fraction(photo.id, salt)
    accepted = u < target_selectivity
    if accepted:
        score = 1.0 - 0.5 * (u / target_selectivity)
    elif target_selectivity < 1.0:
        score = 0.5 * (1.0 - u) / (1.0 - target_selectivity)
    else:  # pragma: no cover - selectivity 1 accepts everything
        score = 0.0
    return PredicateVerdict(accepted=accepted, score=score, cpu_time_ms=float(cost_ms))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegistryEntry:
    """One resolvable predicate template.

    `arity` is the exact parameter count, or None when extra parameters are
    legal and ignored (detector stand-ins keep wire compatibility with
    queries that carry native detector parameters).
    """

    name: str
    evaluate: Callable[[Photo, Sequence, float], PredicateVerdict]
    arity: Optional[int]
    score_range: tuple[float, float] = (0.0, 1.0)
    nominal_cost_ms: float = TICK_MS
    uses_threshold: bool = True


def _rgb_threshold_entry(photo: Photo, params: Sequence, threshold: float) -> PredicateVerdict:
    (channel,) = params
    return eval_rgb_threshold(photo, str(channel), cutoff=threshold * 255.0)


def _histogram_entry(photo: Photo, params: Sequence, threshold: float) -> PredicateVerdict:
    if len(params) != 48:
        raise PredicateParameterError(f"need 48 reference bins, got {len(params)}")
    reference = np.asarray([float(p) for p in params], dtype=np.float64).reshape(3, 16)
    return eval_rgb_histogram_match(photo, reference, threshold)


def _texture_entry(photo: Photo, params: Sequence, threshold: float) -> PredicateVerdict:
    mean, std, grad = (float(p) for p in params)
    return eval_texture_match(photo, TexturePatch(mean, std, grad), threshold)


def _all_accept_entry(photo: Photo, params: Sequence, threshold: float) -> PredicateVerdict:
    return eval_all_accept(photo)


def _synthetic_entry(photo: Photo, params: Sequence, threshold: float) -> PredicateVerdict:
    selectivity, cost_ms, salt = float(params[0]), float(params[1]), int(float(params[2]))
    return eval_synthetic(photo, selectivity, cost_ms, salt)


def _face_entry(photo: Photo, params: Sequence, threshold: float) -> PredicateVerdict:
    # Detector parameters from the wire format are accepted and ignored.
    return eval_synthetic(photo, FACE_SELECTIVITY, FACE_COST_MS, FACE_SALT)


@dataclass(frozen=True)
class PredicateRegistry:
    entries: dict[str, RegistryEntry] = field(default_factory=dict)

    def resolve(self, name: str) -> RegistryEntry:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"unknown predicate {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def with_entry(self, entry: RegistryEntry) -> "PredicateRegistry":
        merged = dict(self.entries)
        merged[entry.name] = entry
        return PredicateRegistry(merged)


def default_registry() -> PredicateRegistry:
    entries = [
        RegistryEntry("All_Accept", _all_accept_entry, arity=0, uses_threshold=False),
        RegistryEntry(
            "RGB_Threshold", _rgb_threshold_entry, arity=1,
            nominal_cost_ms=RGB_THRESHOLD_COST_PER_MP,
        ),
        RegistryEntry(
            "RGB_Histogram", _histogram_entry, arity=48,
            nominal_cost_ms=HISTOGRAM_COST_PER_MP,
        ),
        RegistryEntry(
            "Texture_Match", _texture_entry, arity=3,
            nominal_cost_ms=TEXTURE_COST_PER_MP,
        ),
        RegistryEntry(
            "Synthetic", _synthetic_entry, arity=3, uses_threshold=False,
            nominal_cost_ms=FACE_COST_MS,
        ),
        RegistryEntry(
            "Face (front)", _face_entry, arity=None, uses_threshold=False,
            nominal_cost_ms=FACE_COST_MS,
        ),
    ]
    return PredicateRegistry({e.name: e for e in entries})
