"""Dataset ingestion, synthetic audiovisual data, and batching.

Manifest format: UTF-8 CSV with header `id,audio,video,labels`. Audio points
at a 16-bit PCM mono 16 kHz WAV; video at a directory of numbered PNG/JPEG
frames or a raw uint8 blob (16-byte header: magic, T, H, W as uint32 LE).
Labels are `;`-separated: one int (single label), several ints (multilabel),
or `head=idx` pairs (multi-head, e.g. verb=3;noun=17).

The synthetic generator emits class-coded audiovisual pairs: a bright square
translating at class-dependent velocity on a dark field, and a pair of
class-dependent mel-bin stripes, with audio agreeing with the video class
with probability rho. Fully determined by (config, sample index).
"""

import csv
import os
import wave
from dataclasses import dataclass, field

import numpy as np

from . import audio as audio_mod
from . import rng as rngmod
from .errors import InvalidInput, ManifestError

BLOB_MAGIC = 0x31425641  # "AVB1" little-endian


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

def read_wav(path: str) -> np.ndarray:
    """16-bit PCM mono WAV -> float waveform in [-1, 1]."""
    if not os.path.exists(path):
        raise ManifestError(f"audio file not found: {path}")
    with wave.open(path, "rb") as w:
        if w.getsampwidth() != 2:
            raise InvalidInput(f"{path}: expected 16-bit PCM")
        if w.getnchannels() != 1:
            raise InvalidInput(f"{path}: expected mono audio")
        if w.getframerate() != audio_mod.SAMPLE_RATE:
            raise InvalidInput(f"{path}: expected {audio_mod.SAMPLE_RATE} Hz")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path: str, samples: np.ndarray):
    x = np.clip(np.asarray(samples), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio_mod.SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def read_video_blob(path: str) -> np.ndarray:
    """Raw uint8 clip blob -> (T, H, W, 3) array in [0, 255]."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise InvalidInput(f"{path}: truncated blob header")
        magic, t, h, w = np.frombuffer(header, dtype="<u4")
        if magic != BLOB_MAGIC:
            raise InvalidInput(f"{path}: bad blob magic 0x{magic:08x}")
        data = f.read(int(t) * int(h) * int(w) * 3)
    if len(data) != t * h * w * 3:
        raise InvalidInput(f"{path}: blob payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(int(t), int(h), int(w), 3)


def write_video_blob(path: str, frames: np.ndarray):
    frames = np.asarray(frames, dtype=np.uint8)
    t, h, w, c = frames.shape
    assert c == 3
    with open(path, "wb") as f:
        f.write(np.array([BLOB_MAGIC, t, h, w], dtype="<u4").tobytes())
        f.write(frames.tobytes())


def read_frame_dir(path: str) -> np.ndarray:
    """Directory of numbered PNG/JPEG frames -> (T, H, W, 3) uint8."""
    from PIL import Image

    names = [n for n in os.listdir(path)
             if n.lower().endswith((".png", ".jpg", ".jpeg"))]
    if not names:
        raise ManifestError(f"no frames in directory: {path}")
    names.sort(key=lambda n: int("".join(ch for ch in os.path.splitext(n)[0] if ch.isdigit()) or 0))
    frames = []
    for n in names:
        img = Image.open(os.path.join(path, n)).convert("RGB")
        frames.append(np.asarray(img, dtype=np.uint8))
    return np.stack(frames)


def load_video(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ManifestError(f"video path not found: {path}")
    if os.path.isdir(path):
        return read_frame_dir(path)
    return read_video_blob(path)


# ---------------------------------------------------------------------------
# manifest datasets
# ---------------------------------------------------------------------------

def parse_labels(text: str, row: int) -> dict:
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if not parts:
        return {}
    if any("=" in p for p in parts):
        if not all("=" in p for p in parts):
            raise ManifestError(f"row {row}: mixed head=idx and bare labels")
        out = {}
        for p in parts:
            head, _, idx = p.partition("=")
            try:
                out[head.strip()] = int(idx)
            except ValueError:
                raise ManifestError(f"row {row}: bad label index in {p!r}") from None
        return out
    try:
        ints = [int(p) for p in parts]
    except ValueError:
        raise ManifestError(f"row {row}: labels must be integers, got {text!r}") from None
    if len(ints) == 1:
        return {"label": ints[0]}
    return {"label": tuple(sorted(set(ints)))}


@dataclass
class SampleRecord:
    id: str
    audio: str = None  # path or None
    video: str = None
    labels: dict = field(default_factory=dict)


class ManifestDataset:
    """Lazily decoded records in manifest order."""

    def __init__(self, records):
        self.records = list(records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i: int) -> dict:
        rec = self.records[i]
        out = {"id": rec.id, "labels": rec.labels}
        if rec.audio:
            out["audio"] = audio_mod.compute_log_mel(read_wav(rec.audio))
        if rec.video:
            from .video import normalize_rgb

            out["video"] = normalize_rgb(load_video(rec.video).astype(np.float64))
        return out


def load_manifest(path: str) -> ManifestDataset:
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest (missing header)") from None
        if [h.strip() for h in header] != ["id", "audio", "video", "labels"]:
            raise ManifestError(f"{path}: header must be id,audio,video,labels")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ManifestError(f"row {row_no}: expected 4 fields, got {len(row)}")
            rid, a, v, labels = (c.strip() for c in row)
            if not a and not v:
                raise ManifestError(f"row {row_no}: record needs at least one modality")
            records.append(SampleRecord(
                id=rid,
                audio=os.path.join(base, a) if a else None,
                video=os.path.join(base, v) if v else None,
                labels=parse_labels(labels, row_no),
            ))
    return ManifestDataset(records)


# ---------------------------------------------------------------------------
# synthetic correlated audiovisual data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    rho: float = 1.0  # probability the audio class matches the video class
    num_samples: int = 64
    frames: int = 8
    image_size: int = 32
    spec_frames: int = 64
    spec_bins: int = 128
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise InvalidInput(f"rho must be in [0, 1], got {self.rho}")
        if self.num_classes < 1:
            raise InvalidInput("need at least one class")


def _class_velocity(c: int, num_classes: int):
    # distinct integer per-frame displacements, spread over direction and speed
    angles = 2.0 * np.pi * c / num_classes
    speed = 1 + (c % 2)
    dx = int(np.round(np.cos(angles))) * speed
    dy = int(np.round(np.sin(angles))) * speed
    if dx == 0 and dy == 0:
        dx = speed
    return dx, dy


class SyntheticDataset:
    """Deterministic audiovisual pairs: (config, index) fixes every value."""

    def __init__(self, config: SynthConfig):
        self.config = config

    def __len__(self):
        return self.config.num_samples

    def class_of(self, i: int) -> int:
        return i % self.config.num_classes

    def _draw_classes(self, g, i: int):
        # miss draws uniformly over all classes, so agreement = rho + (1-rho)/K
        cfg = self.config
        c_video = self.class_of(i)
        if g.random() < cfg.rho:
            c_audio = c_video
        else:
            c_audio = int(g.integers(0, cfg.num_classes))
        return c_video, c_audio

    def classes_of(self, i: int):
        """(video class, audio class) actually realized for sample i."""
        return self._draw_classes(rngmod.stream(self.config.seed, "synth", i), i)

    def __getitem__(self, i: int) -> dict:
        cfg = self.config
        g = rngmod.stream(cfg.seed, "synth", i)
        c_video, c_audio = self._draw_classes(g, i)

        # video: 1-valued square translating on a -1 field, random start
        size = cfg.image_size
        side = max(2, size // 8)
        video = np.full((cfg.frames, size, size, 3), -1.0)
        x0 = int(g.integers(0, size))
        y0 = int(g.integers(0, size))
        dx, dy = _class_velocity(c_video, cfg.num_classes)
        for t in range(cfg.frames):
            cx = (x0 + dx * t) % size
            cy = (y0 + dy * t) % size
            xs = (cx + np.arange(side)) % size
            ys = (cy + np.arange(side)) % size
            video[np.ix_([t], ys, xs)] = 1.0
        if cfg.noise > 0:
            video = video + g.normal(0.0, cfg.noise, size=video.shape)

        # audio: two class-coded mel-bin stripes on a zero background;
        # neighbouring classes share one stripe so audio alone is ambiguous
        spec = np.zeros((cfg.spec_frames, cfg.spec_bins))
        span = cfg.spec_bins // (cfg.num_classes + 1)
        b1 = (c_audio * span) % cfg.spec_bins
        b2 = ((c_audio + 1) * span) % cfg.spec_bins
        for b in (b1, b2):
            spec[:, b : b + max(1, span // 2)] = 2.0
        if cfg.noise > 0:
            spec = spec + g.normal(0.0, cfg.noise, size=spec.shape)

        return {
            "id": f"synth{i:06d}",
            "audio": spec,
            "video": video,
            "labels": {"label": c_video},
        }


def generate_synthetic(config: SynthConfig) -> SyntheticDataset:
    return SyntheticDataset(config)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def make_batches(dataset, batch_size: int, shuffle: bool = False, rng=None,
                 drop_last: bool = False, adapter=None):
    """Yield dict batches with aligned modality rows.

    adapter(sample, rng) may transform each record (frame sampling, per-sample
    augmentation) before stacking; it must return fixed-size arrays.
    """
    if batch_size < 1:
        raise InvalidInput("batch_size must be >= 1")
    order = np.arange(len(dataset))
    if shuffle:
        if rng is None:
            raise InvalidInput("shuffle=True needs an rng")
        order = rng.permutation(len(dataset))
    for lo in range(0, len(order), batch_size):
        idx = order[lo : lo + batch_size]
        if drop_last and len(idx) < batch_size:
            return
        samples = []
        for i in idx:
            s = dataset[int(i)]
            if adapter is not None:
                s = adapter(s, rng)
            samples.append(s)
        batch = {"ids": [s.get("id", str(i)) for s, i in zip(samples, idx)],
                 "labels": [s.get("labels", {}) for s in samples]}
        for m in ("audio", "video"):
            if m in samples[0]:
                batch[m] = np.stack([s[m] for s in samples])
        yield batch
