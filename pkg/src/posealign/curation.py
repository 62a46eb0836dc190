"""Dataset curation over per-video pose tracks.

Input is JSONL, one track per line:

    {"video_id": str, "width": int, "height": int,
     "frames": [{"i": int, "faces": int,
                 "bbox": [x1, y1, x2, y2],   # present iff faces >= 1
                 "euler": [pitch, yaw, roll] # present iff bbox present
                }]}

A track passes when no frame exceeds the face limit, at least one frame has
a face, and the summed per-axis Euler ranges exceed the variation
threshold (strictly). Accepted tracks contribute one manifest entry with a
sampled frame pair and enlarged, integer-rounded face crops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import BBox, EulerAngles, FrameDims, crop_rect, enlarge_bbox
from .seeding import STREAM_TRACK, stable_string_key, sub_rng

DEFAULT_THRESHOLD = 120.0
DEFAULT_ENLARGE = 1.5
REASONS = ("ok", "no_face", "multi_face", "low_variation")


class SchemaError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class FrameRecord:
    index: int
    face_count: int
    bbox: BBox | None = None
    euler: EulerAngles | None = None


@dataclass(frozen=True)
class PoseTrack:
    video_id: str
    frames: tuple[FrameRecord, ...]
    dims: FrameDims

    def faced_frames(self) -> list[FrameRecord]:
        return [f for f in self.frames if f.face_count >= 1]

    def single_face_frames(self) -> list[FrameRecord]:
        return [f for f in self.frames if f.face_count == 1]


@dataclass(frozen=True)
class CurationDecision:
    video_id: str
    accepted: bool
    reason: str
    var_score: float | None = None


@dataclass(frozen=True)
class PairFrame:
    frame_index: int
    crop: tuple[int, int, int, int]
    euler: EulerAngles


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    prompt: str
    pair: tuple[PairFrame, PairFrame]
    var_score: float


@dataclass
class ManifestResult:
    entries: list[ManifestEntry] = field(default_factory=list)
    summary: dict[str, int] = field(default_factory=dict)
    decisions: list[CurationDecision] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# parsing

def _require(obj: dict, key: str, kind, line: int):
    if key not in obj:
        raise SchemaError(f"missing field {key!r}", line)
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"field {key!r} must be a number, got {value!r}", line)
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchemaError(f"field {key!r} must be {kind.__name__}, got {value!r}", line)
    return value


def _parse_frame(obj, line: int, previous_index: int | None) -> FrameRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"frame entries must be objects, got {obj!r}", line)
    index = _require(obj, "i", int, line)
    faces = _require(obj, "faces", int, line)
    if faces < 0:
        raise SchemaError(f"field 'faces' must be >= 0, got {faces}", line)
    if previous_index is not None and index <= previous_index:
        raise SchemaError(
            f"frame_index must be strictly increasing, got {index} after {previous_index}", line
        )
    has_bbox = "bbox" in obj and obj["bbox"] is not None
    has_euler = "euler" in obj and obj["euler"] is not None
    if faces >= 1 and not has_bbox:
        raise SchemaError(f"frame {index}: 'bbox' required when faces >= 1", line)
    if faces == 0 and has_bbox:
        raise SchemaError(f"frame {index}: 'bbox' must be absent when faces == 0", line)
    if has_bbox != has_euler:
        raise SchemaError(f"frame {index}: 'euler' must be present exactly when 'bbox' is", line)
    bbox = euler = None
    if has_bbox:
        coords = obj["bbox"]
        if not isinstance(coords, list) or len(coords) != 4:
            raise SchemaError(f"frame {index}: 'bbox' must be a list of 4 numbers", line)
        try:
            bbox = BBox(*(float(v) for v in coords))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"frame {index}: invalid bbox: {exc}", line) from exc
        angles = obj["euler"]
        if not isinstance(angles, list) or len(angles) != 3:
            raise SchemaError(f"frame {index}: 'euler' must be a list of 3 numbers", line)
        try:
            euler = EulerAngles(*(float(v) for v in angles))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"frame {index}: invalid euler angles: {exc}", line) from exc
    return FrameRecord(index=index, face_count=faces, bbox=bbox, euler=euler)


def parse_track(obj: dict, line: int) -> PoseTrack:
    video_id = _require(obj, "video_id", str, line)
    if not video_id:
        raise SchemaError("field 'video_id' must be a nonempty string", line)
    width = _require(obj, "width", int, line)
    height = _require(obj, "height", int, line)
    try:
        dims = FrameDims(width, height)
    except ValueError as exc:
        raise SchemaError(str(exc), line) from exc
    raw_frames = _require(obj, "frames", list, line)
    frames = []
    previous = None
    for raw in raw_frames:
        frame = _parse_frame(raw, line, previous)
        previous = frame.index
        frames.append(frame)
    return PoseTrack(video_id=video_id, frames=tuple(frames), dims=dims)


def parse_tracks(lines: Iterable[str]) -> list[PoseTrack]:
    """Parse JSONL pose tracks; schema violations name the field and line."""
    tracks = []
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from exc
        if not isinstance(obj, dict):
            raise SchemaError("each line must hold a JSON object", line_no)
        tracks.append(parse_track(obj, line_no))
    return tracks


# ---------------------------------------------------------------------------
# filters

def face_filter(track: PoseTrack, max_faces: int = 1) -> str | None:
    """Rejection reason for the face-count rules, or None when the track passes."""
    if any(f.face_count > max_faces for f in track.frames):
        return "multi_face"
    if all(f.face_count == 0 for f in track.frames):
        return "no_face"
    return None


def _median_filter(values: np.ndarray, window: int) -> np.ndarray:
    # Centered window, truncated at the edges; knocks out detector jitter.
    half = window // 2
    return np.array(
        [np.median(values[max(0, i - half): i + half + 1]) for i in range(len(values))]
    )


def pose_variation(track: PoseTrack, median_window: int = 0) -> float:
    """Summed per-axis Euler range over the faced frames of a track."""
    faced = track.faced_frames()
    if not faced:
        raise ValueError(f"track {track.video_id!r} has no faced frames (run face_filter first)")
    if median_window and (median_window < 3 or median_window % 2 == 0):
        raise ValueError(f"median_window must be an odd integer >= 3, got {median_window}")
    series = np.array([f.euler.as_tuple() for f in faced])  # (n, 3)
    if median_window:
        series = np.column_stack(
            [_median_filter(series[:, axis], median_window) for axis in range(3)]
        )
    return float((series.max(axis=0) - series.min(axis=0)).sum())


def threshold_filter(var: float, threshold: float = DEFAULT_THRESHOLD) -> bool:
    """Strict comparison: a score exactly at the threshold is rejected."""
    if var < 0:
        raise ValueError(f"variation score must be nonnegative, got {var}")
    return var > threshold


def curate_track(
    track: PoseTrack,
    threshold: float = DEFAULT_THRESHOLD,
    max_faces: int = 1,
    median_window: int = 0,
) -> CurationDecision:
    reason = face_filter(track, max_faces)
    if reason is not None:
        return CurationDecision(track.video_id, accepted=False, reason=reason)
    var = pose_variation(track, median_window)
    if not threshold_filter(var, threshold):
        return CurationDecision(track.video_id, accepted=False, reason="low_variation", var_score=var)
    return CurationDecision(track.video_id, accepted=True, reason="ok", var_score=var)


# ---------------------------------------------------------------------------
# pair sampling and manifest assembly

def sample_pair(
    track: PoseTrack,
    rng: np.random.Generator,
    extrema_bias: float = 0.5,
    enlarge_factor: float = DEFAULT_ENLARGE,
) -> tuple[PairFrame, PairFrame]:
    """Choose two distinct single-face frames and export enlarged crops.

    With probability ``extrema_bias`` the pair is the (min, max) frames of a
    uniformly chosen Euler axis, biasing pairs toward maximal pose
    separation; otherwise the pair is uniform over eligible frames.
    """
    eligible = track.single_face_frames()
    if len(eligible) < 2:
        raise ValueError(
            f"track {track.video_id!r} has {len(eligible)} single-face frames; need at least 2"
        )
    chosen = None
    if extrema_bias > 0 and rng.random() < extrema_bias:
        axis = int(rng.integers(3))
        values = np.array([f.euler.as_tuple()[axis] for f in eligible])
        lo, hi = int(values.argmin()), int(values.argmax())
        if lo != hi:
            chosen = (eligible[lo], eligible[hi])
    if chosen is None:
        first, second = rng.choice(len(eligible), size=2, replace=False)
        chosen = (eligible[int(first)], eligible[int(second)])
    ordered = sorted(chosen, key=lambda f: f.index)
    return tuple(
        PairFrame(
            frame_index=f.index,
            crop=crop_rect(enlarge_bbox(f.bbox, enlarge_factor, track.dims)),
            euler=f.euler,
        )
        for f in ordered
    )


def build_manifest(
    tracks: list[PoseTrack],
    prompts: dict[str, str] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    max_faces: int = 1,
    median_window: int = 0,
    extrema_bias: float = 0.5,
    seed: int = 0,
) -> ManifestResult:
    """Filter tracks and assemble manifest entries, sorted by video id.

    Per-track randomness is keyed by (seed, video id), so the output is
    independent of processing order.
    """
    prompts = prompts or {}
    seen: set[str] = set()
    for track in tracks:
        if track.video_id in seen:
            raise ValueError(f"duplicate video_id {track.video_id!r}")
        seen.add(track.video_id)

    result = ManifestResult(summary={"accepted": 0, "no_face": 0, "multi_face": 0, "low_variation": 0})
    for track in sorted(tracks, key=lambda t: t.video_id):
        decision = curate_track(track, threshold, max_faces, median_window)
        result.decisions.append(decision)
        if not decision.accepted:
            result.summary[decision.reason] += 1
            continue
        result.summary["accepted"] += 1
        prompt = prompts.get(track.video_id, "")
        if track.video_id not in prompts:
            result.warnings.append(f"no prompt for video {track.video_id!r}; using empty prompt")
        rng = sub_rng(seed, STREAM_TRACK, stable_string_key(track.video_id))
        pair = sample_pair(track, rng, extrema_bias=extrema_bias)
        result.entries.append(
            ManifestEntry(
                video_id=track.video_id,
                prompt=prompt,
                pair=pair,
                var_score=decision.var_score,
            )
        )
    return result


def manifest_payload(result: ManifestResult, threshold: float) -> dict:
    return {
        "format_version": 1,
        "threshold": threshold,
        "entries": [
            {
                "video_id": e.video_id,
                "prompt": e.prompt,
                "pair": [
                    {
                        "frame_index": p.frame_index,
                        "crop": list(p.crop),
                        "euler": [p.euler.pitch, p.euler.yaw, p.euler.roll],
                    }
                    for p in e.pair
                ],
                "var_score": e.var_score,
            }
            for e in result.entries
        ],
        "summary": result.summary,
    }


def write_manifest(path, result: ManifestResult, threshold: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_payload(result, threshold), fh, indent=2, sort_keys=True)
        fh.write("\n")
