"""Synthetic log-power clip generator with strong event annotations.

Every clip is reproducible from its recorded seed: background noise power is
exponentially distributed per cell, events add class-specific spectral
patterns on top, and the sum is log-compressed. One class pair (tone_low,
tone_high) shares every property except its frequency band, so models that
pool frequency information away cannot separate the two.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np

from .config import DataConfig
from .errors import CheckpointError, ConfigurationError
from .events import (Event, read_events_tsv, write_durations_tsv,
                     write_events_tsv)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.txt"
FEATURES_NAME = "features.f32"
SPLITS = ("train", "valid", "test")

TWIN_PAIR = ("tone_low", "tone_high")

_BANDS = {
    "tone_low": (16, 24),
    "tone_high": (72, 80),
    "burst_wide": (8, 120),
    "ramp": (32, 96),
}
_PATTERNS = {
    "tone_low": "tonal",
    "tone_high": "tonal",
    "burst_wide": "burst",
    "ramp": "ramp",
}


@dataclass(frozen=True)
class EventPrototype:
    """Recipe for one event class: spectral pattern and parameter ranges."""

    name: str
    pattern: str
    band: tuple[int, int]
    duration_s: tuple[float, float]
    amplitude: tuple[float, float]


def build_prototypes(config: DataConfig) -> list[EventPrototype]:
    protos = []
    for name in config.classes:
        if name not in _BANDS:
            raise ConfigurationError(
                f"no event prototype named {name!r}; "
                f"known: {sorted(_BANDS)}")
        lo, hi = _BANDS[name]
        if hi > config.n_mels:
            raise ConfigurationError(
                f"prototype {name} band {(lo, hi)} exceeds "
                f"{config.n_mels} frequency bins")
        protos.append(EventPrototype(
            name=name, pattern=_PATTERNS[name], band=(lo, hi),
            duration_s=(config.min_event_s, config.max_event_s),
            amplitude=(0.5, 2.0)))
    return protos


def frames_per_clip(config: DataConfig) -> int:
    return int(config.clip_seconds / config.hop_seconds)


def rasterize_events(events: list[tuple[str, float, float]],
                     class_names: tuple[str, ...], n_frames: int,
                     hop_seconds: float) -> np.ndarray:
    """Strong label grid [C, T]: frame t is active for a class when events
    of that class cover at least half of the frame [t*hop, (t+1)*hop)."""
    index = {name: i for i, name in enumerate(class_names)}
    strong = np.zeros((len(class_names), n_frames), dtype=np.float32)
    for label, onset, offset in events:
        if label not in index:
            raise ConfigurationError(f"unknown event label {label!r}")
        if not onset < offset:
            raise ConfigurationError(
                f"event {label}: onset {onset} must precede offset {offset}")
        for t in range(n_frames):
            frame_a, frame_b = t * hop_seconds, (t + 1) * hop_seconds
            overlap = min(offset, frame_b) - max(onset, frame_a)
            if overlap >= 0.5 * hop_seconds:
                strong[index[label], t] = 1.0
    return strong


def _active_frames(onset: float, offset: float, n_frames: int,
                   hop: float) -> np.ndarray:
    starts = np.arange(n_frames) * hop
    overlap = np.minimum(offset, starts + hop) - np.maximum(onset, starts)
    return overlap >= 0.5 * hop


def _tonal_profile(width: int) -> np.ndarray:
    xs = (np.arange(width) + 0.5) / width
    return 0.6 + 0.4 * np.sin(np.pi * xs)


def generate_clip(prototypes: list[EventPrototype], config: DataConfig,
                  seed: int) -> tuple[np.ndarray,
                                      list[tuple[str, float, float]]]:
    """One clip from one seed: features [1, T, F] float32 plus its events.

    Event energy lands exactly on the frames the rasterizer marks active, so
    strong labels and visible evidence agree frame for frame.
    """
    rng = np.random.default_rng(seed)
    n_frames = frames_per_clip(config)
    power = config.noise_power * rng.exponential(
        size=(n_frames, config.n_mels))

    n_events = int(rng.integers(config.polyphony_min,
                                config.polyphony_max + 1))
    events = []
    for _ in range(n_events):
        proto = prototypes[int(rng.integers(len(prototypes)))]
        dur = float(rng.uniform(*proto.duration_s))
        dur = min(dur, config.clip_seconds)
        onset = float(rng.uniform(0.0, config.clip_seconds - dur))
        offset = onset + dur
        amp = float(rng.uniform(*proto.amplitude))
        frames = _active_frames(onset, offset, n_frames, config.hop_seconds)
        b_lo, b_hi = proto.band
        if proto.pattern == "tonal":
            power[frames, b_lo:b_hi] += amp * _tonal_profile(b_hi - b_lo)
        elif proto.pattern == "burst":
            ripple = 0.7 + 0.3 * rng.random(b_hi - b_lo)
            power[frames, b_lo:b_hi] += amp * ripple
        elif proto.pattern == "ramp":
            idx = np.nonzero(frames)[0]
            span = max(len(idx) - 1, 1)
            bins = np.arange(config.n_mels)
            for j, t in enumerate(idx):
                center = b_lo + 4 + (b_hi - b_lo - 8) * j / span
                power[t] += amp * np.exp(-0.5 * ((bins - center) / 3.0) ** 2)
        else:
            raise ConfigurationError(f"unknown pattern {proto.pattern!r}")
        events.append((proto.name, onset, offset))
    features = 10.0 * np.log10(power + 1e-10)
    return features[np.newaxis, :, :].astype(np.float32), events


def split_counts(n_clips: int,
                 ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Floor each split, then hand leftover clips to the earliest splits."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")
    counts = [int(n_clips * r) for r in ratios]
    for i in range(n_clips - sum(counts)):
        counts[i % len(counts)] += 1
    return tuple(counts)


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    split: str
    seed: int
    byte_offset: int


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    config: DataConfig
    n_frames: int
    features_crc32: int
    clips: tuple[ClipEntry, ...]

    def split_clips(self, split: str) -> list[ClipEntry]:
        if split not in SPLITS:
            raise ConfigurationError(
                f"unknown split {split!r}; expected one of {SPLITS}")
        return [c for c in self.clips if c.split == split]


def _clip_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, index])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_dataset(out_dir: str | os.PathLike,
                     config: DataConfig) -> DatasetManifest:
    """Materialize a dataset directory: manifest, packed features, and
    per-split ground-truth and duration tables."""
    os.makedirs(out_dir, exist_ok=True)
    prototypes = build_prototypes(config)
    n_frames = frames_per_clip(config)
    counts = split_counts(config.n_clips, config.split_ratios)
    split_of = [s for s, c in zip(SPLITS, counts) for _ in range(c)]

    clip_bytes = 4 * n_frames * config.n_mels
    entries = []
    gt: dict[str, list[Event]] = {s: [] for s in SPLITS}
    durations: dict[str, dict[str, float]] = {s: {} for s in SPLITS}
    crc = 0
    with open(os.path.join(out_dir, FEATURES_NAME), "wb") as payload:
        for i in range(config.n_clips):
            seed = _clip_seed(config.master_seed, i)
            features, events = generate_clip(prototypes, config, seed)
            raw = features.astype("<f4").tobytes()
            crc = zlib.crc32(raw, crc)
            payload.write(raw)
            clip_id = f"clip_{i:05d}"
            split = split_of[i]
            entries.append(ClipEntry(clip_id, split, seed, i * clip_bytes))
            for label, onset, offset in events:
                gt[split].append(Event(clip_id, onset, offset, label))
            durations[split][clip_id] = config.clip_seconds

    for split in SPLITS:
        write_events_tsv(os.path.join(out_dir, f"{split}_ground_truth.tsv"),
                         gt[split])
        write_durations_tsv(os.path.join(out_dir, f"{split}_durations.tsv"),
                            durations[split])

    manifest = DatasetManifest(root=str(out_dir), config=config,
                               n_frames=n_frames, features_crc32=crc,
                               clips=tuple(entries))
    _write_manifest(os.path.join(out_dir, MANIFEST_NAME), manifest)
    return manifest


def _write_manifest(path: str | os.PathLike,
                    manifest: DatasetManifest) -> None:
    cfg = manifest.config
    lines = [
        "# synthetic dataset manifest",
        f"version = {MANIFEST_VERSION}",
        f"n_clips = {cfg.n_clips}",
        f"n_mels = {cfg.n_mels}",
        f"hop_seconds = {cfg.hop_seconds!r}",
        f"clip_seconds = {cfg.clip_seconds!r}",
        f"frames_per_clip = {manifest.n_frames}",
        f"classes = {','.join(cfg.classes)}",
        f"polyphony = {cfg.polyphony_min},{cfg.polyphony_max}",
        f"noise_power = {cfg.noise_power!r}",
        f"event_margin_db = {cfg.event_margin_db!r}",
        f"min_event_s = {cfg.min_event_s!r}",
        f"max_event_s = {cfg.max_event_s!r}",
        f"split_ratios = {','.join(repr(r) for r in cfg.split_ratios)}",
        f"master_seed = {cfg.master_seed}",
        f"features_file = {FEATURES_NAME}",
        f"features_crc32 = {manifest.features_crc32}",
        "[clips]",
    ]
    for c in manifest.clips:
        lines.append(f"{c.clip_id}\t{c.split}\t{c.seed}\t{c.byte_offset}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(root: str | os.PathLike) -> DatasetManifest:
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        raise CheckpointError(f"no {MANIFEST_NAME} in {root}")
    header: dict[str, str] = {}
    clips = []
    in_clips = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if line == "[clips]":
                in_clips = True
                continue
            if in_clips:
                cells = line.split("\t")
                if len(cells) != 4:
                    raise CheckpointError(
                        f"{path}:{lineno}: expected 4 clip columns")
                clips.append(ClipEntry(cells[0], cells[1], int(cells[2]),
                                       int(cells[3])))
            else:
                key, sep, value = line.partition(" = ")
                if not sep:
                    raise CheckpointError(
                        f"{path}:{lineno}: expected 'key = value'")
                header[key] = value
    version = int(header.get("version", "-1"))
    if version != MANIFEST_VERSION:
        raise CheckpointError(
            f"manifest version {version} unsupported "
            f"(expected {MANIFEST_VERSION})")
    try:
        ratios = tuple(float(r) for r in header["split_ratios"].split(","))
        poly = tuple(int(p) for p in header["polyphony"].split(","))
        config = DataConfig(
            n_clips=int(header["n_clips"]),
            split_ratios=ratios,
            master_seed=int(header["master_seed"]),
            n_mels=int(header["n_mels"]),
            hop_seconds=float(header["hop_seconds"]),
            clip_seconds=float(header["clip_seconds"]),
            polyphony_min=poly[0],
            polyphony_max=poly[1],
            noise_power=float(header["noise_power"]),
            event_margin_db=float(header["event_margin_db"]),
            min_event_s=float(header["min_event_s"]),
            max_event_s=float(header["max_event_s"]),
            classes=tuple(header["classes"].split(",")))
        n_frames = int(header["frames_per_clip"])
        crc = int(header["features_crc32"])
    except KeyError as exc:
        raise CheckpointError(f"manifest {path} missing key {exc}") from exc
    if len(clips) != config.n_clips:
        raise CheckpointError(
            f"manifest lists {len(clips)} clips, header says "
            f"{config.n_clips}")
    return DatasetManifest(root=str(root), config=config, n_frames=n_frames,
                           features_crc32=crc, clips=tuple(clips))


@dataclass(frozen=True)
class ClipData:
    clip_id: str
    features: np.ndarray
    events: list[tuple[str, float, float]]
    strong: np.ndarray
    weak: np.ndarray


def read_dataset(manifest: DatasetManifest,
                 split: str | None = None) -> list[ClipData]:
    """Load features (checksum-verified) and labels for one or all splits."""
    payload_path = os.path.join(manifest.root, FEATURES_NAME)
    with open(payload_path, "rb") as fh:
        raw = fh.read()
    crc = zlib.crc32(raw)
    if crc != manifest.features_crc32:
        raise CheckpointError(
            f"{payload_path}: checksum {crc} does not match manifest "
            f"{manifest.features_crc32}")
    cfg = manifest.config
    n_frames = manifest.n_frames
    clip_bytes = 4 * n_frames * cfg.n_mels
    if len(raw) != clip_bytes * cfg.n_clips:
        raise CheckpointError(
            f"{payload_path}: {len(raw)} bytes, expected "
            f"{clip_bytes * cfg.n_clips}")

    by_clip: dict[str, list[tuple[str, float, float]]] = {}
    splits = SPLITS if split is None else (split,)
    for s in splits:
        gt_path = os.path.join(manifest.root, f"{s}_ground_truth.tsv")
        for e in read_events_tsv(gt_path):
            by_clip.setdefault(e.filename, []).append(
                (e.label, e.onset, e.offset))

    entries = manifest.clips if split is None else \
        manifest.split_clips(split)
    out = []
    for entry in entries:
        flat = np.frombuffer(raw, dtype="<f4", count=n_frames * cfg.n_mels,
                             offset=entry.byte_offset)
        features = flat.reshape(1, n_frames, cfg.n_mels).copy()
        events = by_clip.get(entry.clip_id, [])
        strong = rasterize_events(events, cfg.classes, n_frames,
                                  cfg.hop_seconds)
        weak = (strong.max(axis=1) > 0).astype(np.float32)
        out.append(ClipData(entry.clip_id, features, events, strong, weak))
    return out
