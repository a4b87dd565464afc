"""Synthetic hierarchical corpora and the on-disk dataset format.

A corpus directory contains:

* ``manifest.json`` -- ids, counts, query-to-video mapping, train/val
  split, and an echo of the generation spec.
* ``video_feats.bin`` / ``query_feats.bin`` -- little-endian records:
  u32 id length, id bytes (utf-8), u32 rows, u32 cols, then rows*cols
  float32 values in row-major order.
* ``ground_truth.json`` -- latent moment boundaries and query-to-moment
  assignments. Generation and diagnostics only; nothing in the training
  or evaluation path reads it.

Features are float32 end to end so an in-memory corpus and its saved
round trip are bit-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DimensionError, FormatError

MANIFEST_NAME = "manifest.json"
VIDEO_FEATS_NAME = "video_feats.bin"
QUERY_FEATS_NAME = "query_feats.bin"
GROUND_TRUTH_NAME = "ground_truth.json"


@dataclass
class SyntheticCorpusSpec:
    num_videos: int = 200
    moments_per_video: int = 4
    frames_per_moment_min: int = 8
    frames_per_moment_max: int = 16
    d_vid: int = 64
    d_text: int = 48
    queries_per_video: int = 4
    words_per_query_min: int = 4
    words_per_query_max: int = 8
    frame_jitter: float = 0.1
    query_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        counts = (self.num_videos, self.moments_per_video, self.frames_per_moment_min,
                  self.frames_per_moment_max, self.d_vid, self.d_text,
                  self.queries_per_video, self.words_per_query_min,
                  self.words_per_query_max)
        if any(c < 1 for c in counts):
            raise ArgumentError("all corpus spec counts must be at least 1")
        if self.frames_per_moment_max < self.frames_per_moment_min:
            raise ArgumentError("frames_per_moment range is inverted")
        if self.words_per_query_max < self.words_per_query_min:
            raise ArgumentError("words_per_query range is inverted")
        if self.frame_jitter < 0 or self.query_jitter < 0:
            raise ArgumentError("noise levels must be non-negative")


@dataclass
class VideoRecord:
    video_id: str
    frames: np.ndarray  # (M_f, d_vid) float32


@dataclass
class QueryRecord:
    query_id: str
    video_id: str
    words: np.ndarray   # (N_q, d_text) float32
    split: str = "train"


@dataclass
class GenerationTruth:
    """Moment boundaries and assignments; diagnostics only."""

    moment_bounds: dict = field(default_factory=dict)   # video_id -> [[lo, hi), ...]
    query_moments: dict = field(default_factory=dict)   # query_id -> moment index


@dataclass
class Corpus:
    videos: list
    queries: list
    spec: dict | None = None

    @property
    def d_vid(self):
        return int(self.videos[0].frames.shape[1])

    @property
    def d_text(self):
        return int(self.queries[0].words.shape[1])

    def video_ids(self):
        return [v.video_id for v in self.videos]

    def video_by_id(self, video_id):
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise ArgumentError(f"unknown video id '{video_id}'")

    def query_by_id(self, query_id):
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise ArgumentError(f"unknown query id '{query_id}'")

    def queries_for_split(self, split):
        if split == "all":
            return list(self.queries)
        if split not in ("train", "val"):
            raise ArgumentError(f"unknown split '{split}'")
        return [q for q in self.queries if q.split == split]


def validate_corpus(corpus):
    """Cheap structural checks used by the estimator and the harness."""
    if not corpus.videos or not corpus.queries:
        raise ArgumentError("corpus must contain at least one video and one query")
    d_vid = corpus.d_vid
    d_text = corpus.d_text
    ids = set()
    for v in corpus.videos:
        if v.frames.ndim != 2 or v.frames.shape[0] < 1 or v.frames.shape[1] != d_vid:
            raise DimensionError(f"video '{v.video_id}' has inconsistent frame features")
        ids.add(v.video_id)
    for q in corpus.queries:
        if q.words.ndim != 2 or q.words.shape[0] < 1 or q.words.shape[1] != d_text:
            raise DimensionError(f"query '{q.query_id}' has inconsistent word features")
        if q.video_id not in ids:
            raise ArgumentError(f"query '{q.query_id}' references unknown video "
                                f"'{q.video_id}'")
    return corpus


# ---------------------------------------------------------------------------
# generation

def _rng(seed, stream):
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def query_projection(spec):
    """The fixed random map from video space to text space used by queries."""
    rng = _rng(spec.seed, 1)
    return (rng.normal(size=(spec.d_vid, spec.d_text))
            / np.sqrt(spec.d_vid)).astype(np.float32)


def gen_synthetic_corpus(spec):
    """Deterministically sample a corpus with latent moment structure.

    Each video concatenates a few latent moments; every frame is its
    moment vector plus scaled unit noise; every query is a fixed random
    projection of one moment vector plus jitter. The last query of each
    video (when there are at least two) is held out as validation.
    Returns the corpus and the generation-only ground truth.
    """
    projection = query_projection(spec).astype(np.float64)
    videos = []
    queries = []
    truth = GenerationTruth()
    for i in range(spec.num_videos):
        rng = _rng(spec.seed, 10_000 + i)
        video_id = f"v{i:05d}"
        moments = rng.normal(size=(spec.moments_per_video, spec.d_vid))
        moments /= np.linalg.norm(moments, axis=1, keepdims=True)
        chunks = []
        bounds = []
        cursor = 0
        for m in range(spec.moments_per_video):
            n_frames = int(rng.integers(spec.frames_per_moment_min,
                                        spec.frames_per_moment_max + 1))
            noise = rng.normal(size=(n_frames, spec.d_vid))
            chunks.append(moments[m] + spec.frame_jitter * noise)
            bounds.append([cursor, cursor + n_frames])
            cursor += n_frames
        frames = np.concatenate(chunks, axis=0).astype(np.float32)
        videos.append(VideoRecord(video_id=video_id, frames=frames))
        truth.moment_bounds[video_id] = bounds
        for k in range(spec.queries_per_video):
            moment_idx = k % spec.moments_per_video
            n_words = int(rng.integers(spec.words_per_query_min,
                                       spec.words_per_query_max + 1))
            base = moments[moment_idx] @ projection
            words = (base + spec.query_jitter * rng.normal(size=(n_words, spec.d_text)))
            split = "val" if (spec.queries_per_video >= 2
                              and k == spec.queries_per_video - 1) else "train"
            query_id = f"{video_id}_q{k}"
            queries.append(QueryRecord(query_id=query_id, video_id=video_id,
                                       words=words.astype(np.float32), split=split))
            truth.query_moments[query_id] = moment_idx
    corpus = Corpus(videos=videos, queries=queries, spec=asdict(spec))
    return corpus, truth


# ---------------------------------------------------------------------------
# binary feature records

def _write_records(path, records):
    with open(path, "wb") as fh:
        for rec_id, matrix in records:
            ident = rec_id.encode("utf-8")
            rows, cols = matrix.shape
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def _read_records(path):
    records = []
    raw = Path(path).read_bytes()
    offset = 0
    total = len(raw)

    def need(nbytes, what):
        nonlocal offset
        if offset + nbytes > total:
            raise FormatError(f"truncated {what} in '{path}'", offset=offset)
        chunk = raw[offset:offset + nbytes]
        offset += nbytes
        return chunk

    while offset < total:
        (id_len,) = struct.unpack("<I", need(4, "id length"))
        ident = need(id_len, "record id").decode("utf-8")
        rows, cols = struct.unpack("<II", need(8, "record dims"))
        data = need(rows * cols * 4, f"payload of '{ident}'")
        matrix = np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()
        records.append((ident, matrix))
    return records


def save_corpus(corpus, out_dir, truth=None):
    """Write the dataset directory; ground truth only when provided."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "d_vid": corpus.d_vid,
        "d_text": corpus.d_text,
        "num_videos": len(corpus.videos),
        "num_queries": len(corpus.queries),
        "spec": corpus.spec,
        "videos": [{"id": v.video_id, "frames": int(v.frames.shape[0])}
                   for v in corpus.videos],
        "queries": [{"id": q.query_id, "video_id": q.video_id,
                     "words": int(q.words.shape[0]), "split": q.split}
                    for q in corpus.queries],
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    _write_records(out / VIDEO_FEATS_NAME,
                   [(v.video_id, v.frames) for v in corpus.videos])
    _write_records(out / QUERY_FEATS_NAME,
                   [(q.query_id, q.words) for q in corpus.queries])
    if truth is not None:
        payload = {"moment_bounds": truth.moment_bounds,
                   "query_moments": truth.query_moments}
        (out / GROUND_TRUTH_NAME).write_text(json.dumps(payload, indent=1, sort_keys=True))
    return out


def load_corpus(data_dir):
    """Load a dataset directory; the ground-truth file is ignored."""
    root = Path(data_dir)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"missing {MANIFEST_NAME} in '{data_dir}'")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != 1:
        raise FormatError(f"unsupported dataset format version "
                          f"{manifest.get('format_version')!r}")
    video_feats = dict(_read_records(root / VIDEO_FEATS_NAME))
    query_feats = dict(_read_records(root / QUERY_FEATS_NAME))
    videos = []
    for entry in manifest["videos"]:
        if entry["id"] not in video_feats:
            raise FormatError(f"video '{entry['id']}' listed in manifest but missing "
                              f"from {VIDEO_FEATS_NAME}")
        videos.append(VideoRecord(video_id=entry["id"], frames=video_feats[entry["id"]]))
    queries = []
    for entry in manifest["queries"]:
        if entry["id"] not in query_feats:
            raise FormatError(f"query '{entry['id']}' listed in manifest but missing "
                              f"from {QUERY_FEATS_NAME}")
        queries.append(QueryRecord(query_id=entry["id"], video_id=entry["video_id"],
                                   words=query_feats[entry["id"]],
                                   split=entry.get("split", "train")))
    return validate_corpus(Corpus(videos=videos, queries=queries,
                                  spec=manifest.get("spec")))
