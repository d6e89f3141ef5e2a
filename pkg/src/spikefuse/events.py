"""Event decoding, binning, cross-modal pairing and synthetic data.

Events are numpy structured arrays with at least the fields ``t``
(microseconds) and ``channel``. Visual channels fold pixel and polarity as
``polarity * 34 * 34 + y * 34 + x``; auditory channels are cochlear unit ids.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spikefuse.errors import DataError, ShapeError

log = logging.getLogger(__name__)

NMNIST_SIZE = 34
NMNIST_CHANNELS = NMNIST_SIZE * NMNIST_SIZE * 2
SHD_CHANNELS = 700
NUM_CLASSES = 10
DEFAULT_NUM_BINS = 100
NMNIST_BIN_US = 3000
SHD_BIN_US = 7000

EVENT_DTYPE = np.dtype([("t", np.int64), ("channel", np.int64)])
NMNIST_DTYPE = np.dtype(
    [("t", np.int64), ("channel", np.int64), ("x", np.int64), ("y", np.int64), ("polarity", np.int64)]
)

EVST_MAGIC = b"EVST"
EVST_VERSION = 1
EVST_HEADER = struct.Struct("<4sHHQ")
EVST_RECORD = np.dtype([("t", "<u4"), ("channel", "<u2"), ("reserved", "<u2")])

MANIFEST_FORMAT = "spikefuse-manifest"


def make_events(t, channel):
    events = np.empty(len(t), dtype=EVENT_DTYPE)
    events["t"] = t
    events["channel"] = channel
    return events


# --- N-MNIST -----------------------------------------------------------------


def decode_nmnist(data: bytes, path=None):
    """Decode N-MNIST 5-byte records.

    byte0 = x, byte1 = y, bit 7 of byte2 = polarity, remaining 23 bits of
    bytes 2-4 = big-endian timestamp in microseconds.
    """
    if len(data) % 5:
        raise DataError(
            f"truncated record: {len(data)} bytes is not a multiple of 5", path, len(data) - len(data) % 5
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    events = np.empty(len(raw), dtype=NMNIST_DTYPE)
    x, y = raw[:, 0], raw[:, 1]
    bad = np.flatnonzero((x >= NMNIST_SIZE) | (y >= NMNIST_SIZE))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"coordinate out of range (x={x[i]}, y={y[i]})", path, 5 * i)
    events["x"] = x
    events["y"] = y
    events["polarity"] = raw[:, 2] >> 7
    events["t"] = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    back = np.flatnonzero(np.diff(events["t"]) < 0)
    if back.size:
        raise DataError("timestamps decrease", path, 5 * (int(back[0]) + 1))
    events["channel"] = events["polarity"] * NMNIST_SIZE * NMNIST_SIZE + y * NMNIST_SIZE + x
    return events


def read_nmnist(path):
    path = Path(path)
    return decode_nmnist(path.read_bytes(), path)


def encode_nmnist(events) -> bytes:
    """Inverse of :func:`decode_nmnist`; used to build fixtures."""
    out = np.empty((len(events), 5), dtype=np.uint8)
    t = np.asarray(events["t"], dtype=np.int64)
    out[:, 0] = events["x"]
    out[:, 1] = events["y"]
    out[:, 2] = (np.asarray(events["polarity"]) << 7) | ((t >> 16) & 0x7F)
    out[:, 3] = (t >> 8) & 0xFF
    out[:, 4] = t & 0xFF
    return out.tobytes()


# --- EVST portable format ----------------------------------------------------


def write_portable_events(events, path, channel_count):
    """Write events in the little-endian EVST interchange format."""
    t = np.asarray(events["t"])
    ch = np.asarray(events["channel"])
    if not 0 < channel_count <= 0xFFFF:
        raise DataError(f"channel_count {channel_count} does not fit u16", path)
    if len(t) and (t.min() < 0 or t.max() > 0xFFFFFFFF):
        raise DataError("timestamp does not fit u32", path)
    if len(ch) and (ch.min() < 0 or ch.max() >= channel_count):
        raise DataError(f"channel out of range for channel_count={channel_count}", path)
    records = np.zeros(len(t), dtype=EVST_RECORD)
    records["t"] = t
    records["channel"] = ch
    with open(path, "wb") as f:
        f.write(EVST_HEADER.pack(EVST_MAGIC, EVST_VERSION, channel_count, len(t)))
        f.write(records.tobytes())


def read_portable_events(path):
    """Read an EVST file. Returns ``(events, channel_count)``."""
    data = Path(path).read_bytes()
    if len(data) < EVST_HEADER.size:
        raise DataError("file shorter than EVST header", path, len(data))
    magic, version, channel_count, count = EVST_HEADER.unpack_from(data)
    if magic != EVST_MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {EVST_MAGIC!r}", path, 0)
    if version != EVST_VERSION:
        raise DataError(f"unsupported EVST version {version}", path, 4)
    expected = EVST_HEADER.size + count * EVST_RECORD.itemsize
    if len(data) != expected:
        raise DataError(f"expected {expected} bytes for {count} events, found {len(data)}", path, len(data))
    records = np.frombuffer(data, dtype=EVST_RECORD, offset=EVST_HEADER.size)
    bad = np.flatnonzero(records["channel"] >= channel_count)
    if bad.size:
        raise DataError("channel out of range", path, EVST_HEADER.size + int(bad[0]) * EVST_RECORD.itemsize + 4)
    return make_events(records["t"], records["channel"]), channel_count


# --- binning -----------------------------------------------------------------


def adaptive_bin_width(events, num_bins=DEFAULT_NUM_BINS):
    """Smallest integer width putting every event inside ``num_bins`` bins."""
    if len(events) == 0:
        return 1
    return max(1, math.ceil((int(np.max(events["t"])) + 1) / num_bins))


def bin_events(events, channels, bin_width_us, num_bins=DEFAULT_NUM_BINS, clip=None, binarize=False):
    """Count events per half-open bin ``[b*w, (b+1)*w)`` and channel -> [T, C] float32."""
    if bin_width_us < 1 or num_bins < 1:
        raise ValueError("bin_width_us and num_bins must be >= 1")
    t = np.asarray(events["t"], dtype=np.int64)
    ch = np.asarray(events["channel"], dtype=np.int64)
    if len(ch) and (ch.min() < 0 or ch.max() >= channels):
        raise ShapeError(f"event channel outside [0, {channels})")
    b = t // bin_width_us
    keep = (b >= 0) & (b < num_bins)
    dropped = len(t) - int(keep.sum())
    if dropped:
        log.debug("dropped %d events beyond %d us", dropped, num_bins * bin_width_us)
    counts = np.bincount(b[keep] * channels + ch[keep], minlength=num_bins * channels)
    frame = counts.reshape(num_bins, channels).astype(np.float32)
    if clip is not None:
        np.minimum(frame, clip, out=frame)
    if binarize:
        frame = (frame > 0).astype(np.float32)
    return frame


def frames_to_events(frame, bin_width_us, rng):
    """Expand a count frame into events with random offsets inside each bin."""
    frame = np.asarray(frame)
    counts = np.rint(frame).astype(np.int64)
    bins, chans = np.nonzero(counts)
    reps = counts[bins, chans]
    b = np.repeat(bins, reps)
    c = np.repeat(chans, reps)
    t = b * bin_width_us + rng.integers(0, bin_width_us, size=len(b))
    order = np.lexsort((c, t))
    return make_events(t[order], c[order])


@dataclass
class BinningConfig:
    num_bins: int = DEFAULT_NUM_BINS
    visual_bin_width_us: int | None = NMNIST_BIN_US
    # None selects a per-instance width of ceil(duration / num_bins)
    auditory_bin_width_us: int | None = None
    clip: float | None = None
    binarize: bool = False

    def width_for(self, modality, events):
        w = self.visual_bin_width_us if modality == "visual" else self.auditory_bin_width_us
        return w if w is not None else adaptive_bin_width(events, self.num_bins)


# --- pairing -----------------------------------------------------------------


@dataclass
class PairedInstance:
    visual: np.ndarray | None
    auditory: np.ndarray | None
    label: int
    key: str = ""
    meta: dict = field(default_factory=dict)


def _by_class(items):
    groups = defaultdict(list)
    for item, label in items:
        groups[int(label)].append(item)
    return groups


def pair_instances(visual, auditory, seed=0):
    """Pair ``(item, label)`` sequences within each class.

    Each modality is shuffled within the class and zipped, so a class yields
    ``min(n_visual, n_auditory)`` pairs.
    """
    vis, aud = _by_class(visual), _by_class(auditory)
    for label in sorted(set(vis) | set(aud)):
        if label not in vis:
            raise DataError(f"class {label} is absent from the visual set")
        if label not in aud:
            raise DataError(f"class {label} is absent from the auditory set")
    rng = np.random.default_rng(seed)
    pairs = []
    for label in sorted(vis):
        v_order = rng.permutation(len(vis[label]))
        a_order = rng.permutation(len(aud[label]))
        for i, (vi, ai) in enumerate(zip(v_order, a_order)):
            pairs.append(PairedInstance(vis[label][vi], aud[label][ai], label, key=f"{label}-{i}"))
    return pairs


# --- synthetic data ----------------------------------------------------------

VISUAL_PEAK_RATE = 0.5
VISUAL_BLOB_SIGMA = 1.5
VISUAL_BACKGROUND = 0.001
AUDITORY_PEAK_RATE = 0.4
AUDITORY_BAND_SIGMA = 12.0
AUDITORY_BACKGROUND = 0.002
# a corrupted stream shows a wrong class, weakly, over a noisier background
CORRUPT_GAIN = 0.3
CORRUPT_BACKGROUND_FACTOR = 10.0


@functools.lru_cache(maxsize=64)
def visual_template(label, num_bins=DEFAULT_NUM_BINS):
    """Poisson rate [T, 2312] for a blob at a class-specific position that drifts over time."""
    cx = 5 + 6 * (label % 5)
    cy = 10 + 14 * (label // 5)
    phase = 2 * np.pi * np.arange(num_bins) / num_bins
    dx = 2.0 * np.sin(phase)
    dy = 1.5 * np.sin(2 * phase)
    grid = np.arange(NMNIST_SIZE)
    gx = np.exp(-((grid[None, :] - (cx + dx)[:, None]) ** 2) / (2 * VISUAL_BLOB_SIGMA**2))
    gy = np.exp(-((grid[None, :] - (cy + dy)[:, None]) ** 2) / (2 * VISUAL_BLOB_SIGMA**2))
    blob = gy[:, :, None] * gx[:, None, :]  # [T, y, x]
    on = VISUAL_PEAK_RATE * blob.reshape(num_bins, -1)
    rate = np.concatenate([0.5 * on, on], axis=1)
    rate.setflags(write=False)
    return rate


@functools.lru_cache(maxsize=64)
def auditory_template(label, num_bins=DEFAULT_NUM_BINS):
    """Poisson rate [T, 700] for a class-specific rising band with class-specific onset."""
    t = np.arange(num_bins)
    onset = 5 + 4 * label
    duration = 40
    active = (t >= onset) & (t < onset + duration)
    center = 35 + 70 * label + 10.0 * (t - onset) / duration
    ch = np.arange(SHD_CHANNELS)
    band = np.exp(-((ch[None, :] - center[:, None]) ** 2) / (2 * AUDITORY_BAND_SIGMA**2))
    rate = AUDITORY_PEAK_RATE * band * active[:, None]
    rate.setflags(write=False)
    return rate


def _render(template_fn, background, label, corrupt, rng, num_bins):
    if corrupt:
        wrong = int(rng.choice([k for k in range(NUM_CLASSES) if k != label]))
        rate = CORRUPT_GAIN * template_fn(wrong, num_bins) + CORRUPT_BACKGROUND_FACTOR * background
    else:
        wrong = None
        rate = template_fn(label, num_bins) + background
    return rng.poisson(rate).astype(np.float32), wrong


def generate_synthetic(num_per_class, noise=(0.0, 0.0), seed=0, test_per_class=None, num_bins=DEFAULT_NUM_BINS):
    """Paired visual/auditory digits drawn from class rate templates.

    ``noise = (p_visual, p_auditory)``: with that probability an instance's
    stream is replaced by a weak rendering of a uniformly drawn wrong class.
    Returns ``(train, test)`` lists ordered by class.
    """
    p_vis, p_aud = noise
    rng = np.random.default_rng(seed)
    test_per_class = num_per_class if test_per_class is None else test_per_class
    splits = []
    for split, count in (("train", num_per_class), ("test", test_per_class)):
        instances = []
        for label in range(NUM_CLASSES):
            for i in range(count):
                vis, vis_wrong = _render(visual_template, VISUAL_BACKGROUND, label, rng.random() < p_vis, rng, num_bins)
                aud, aud_wrong = _render(auditory_template, AUDITORY_BACKGROUND, label, rng.random() < p_aud, rng, num_bins)
                meta = {"visual_shown": label if vis_wrong is None else vis_wrong,
                        "auditory_shown": label if aud_wrong is None else aud_wrong}
                instances.append(PairedInstance(vis, aud, label, key=f"{split}-{label}-{i:04d}", meta=meta))
        splits.append(instances)
    return splits[0], splits[1]


# --- manifests ---------------------------------------------------------------


def write_manifest(path, entries):
    """Write ``entries`` (dicts with path, label, modality, split, ...) as JSON."""
    path = Path(path)
    doc = {"format": MANIFEST_FORMAT, "version": 1, "instances": list(entries)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    """Entries with ``path`` resolved relative to the manifest's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest: {exc}", path) from exc
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise DataError("not a spikefuse manifest", path)
    entries = []
    for i, entry in enumerate(doc.get("instances", [])):
        missing = {"path", "label", "modality", "split"} - set(entry)
        if missing:
            raise DataError(f"manifest entry {i} lacks {sorted(missing)}", path)
        if entry["modality"] not in ("visual", "auditory"):
            raise DataError(f"manifest entry {i} has unknown modality {entry['modality']!r}", path)
        entries.append({**entry, "path": str(path.parent / entry["path"])})
    return entries


def load_frames(entry, binning: BinningConfig):
    events, channel_count = read_portable_events(entry["path"])
    expected = NMNIST_CHANNELS if entry["modality"] == "visual" else SHD_CHANNELS
    if channel_count != expected:
        raise DataError(f"{entry['modality']} file declares {channel_count} channels, expected {expected}", entry["path"])
    width = entry.get("bin_width_us") or binning.width_for(entry["modality"], events)
    return bin_events(events, channel_count, width, binning.num_bins, binning.clip, binning.binarize)


def load_dataset(manifests, split, binning: BinningConfig | None = None, seed=0, modalities=("visual", "auditory")):
    """Load one split from one or more manifests as a list of PairedInstance.

    Entries sharing a ``pair`` key are joined directly; otherwise both
    modalities are paired by class with :func:`pair_instances`. Single-modality
    data yields instances whose other stream is ``None``.
    """
    binning = binning or BinningConfig()
    if isinstance(manifests, (str, Path)):
        manifests = [manifests]
    entries = [e for m in manifests for e in read_manifest(m) if e["split"] == split]
    entries = [e for e in entries if e["modality"] in modalities]
    if not entries:
        raise DataError(f"no {split} instances found in {', '.join(map(str, manifests))}")
    by_mod = {m: [e for e in entries if e["modality"] == m] for m in ("visual", "auditory")}
    if not by_mod["visual"] or not by_mod["auditory"]:
        return [
            PairedInstance(
                load_frames(e, binning) if e["modality"] == "visual" else None,
                load_frames(e, binning) if e["modality"] == "auditory" else None,
                int(e["label"]),
                key=e.get("pair", Path(e["path"]).stem),
            )
            for e in entries
        ]
    if all("pair" in e for e in entries):
        aud = {e["pair"]: e for e in by_mod["auditory"]}
        pairs = []
        for v in by_mod["visual"]:
            a = aud.get(v["pair"])
            if a is None:
                raise DataError(f"pair {v['pair']!r} has no auditory instance")
            if int(a["label"]) != int(v["label"]):
                raise DataError(f"pair {v['pair']!r} joins different labels")
            pairs.append(PairedInstance(v, a, int(v["label"]), key=v["pair"]))
    else:
        pairs = pair_instances(
            [(e, e["label"]) for e in by_mod["visual"]],
            [(e, e["label"]) for e in by_mod["auditory"]],
            seed,
        )
    for p in pairs:
        p.visual = load_frames(p.visual, binning)
        p.auditory = load_frames(p.auditory, binning)
    return pairs
