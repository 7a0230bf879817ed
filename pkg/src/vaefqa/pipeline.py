"""Per-subject key-frame selection over an ordered stream of detections.

Detections in consecutive frames are linked by bounding-box centre distance
with greedy global-nearest matching; each track keeps the crop with the
highest quality and emits it once, when the track closes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .tabular import TableError, read_table


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    frame_index: int
    bbox: tuple
    crop: np.ndarray = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise PipelineError("frame_index must be >= 0")
        x, y, w, h = self.bbox
        if not (w > 0 and h > 0):
            raise PipelineError(f"bounding box {self.bbox} has non-positive size")

    @property
    def center(self):
        x, y, w, h = self.bbox
        return (x + 0.5 * w, y + 0.5 * h)


@dataclass
class Track:
    track_id: int
    detections: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    state: str = "active"
    misses: int = 0
    best_index: int = -1

    def add(self, det, value):
        if self.detections and det.frame_index <= self.detections[-1].frame_index:
            raise PipelineError("track frame indices must strictly increase")
        self.detections.append(det)
        self.scores.append(value)
        self.misses = 0
        # Strictly greater replaces: ties keep the earliest crop.
        if self.best_index < 0 or value > self.scores[self.best_index]:
            self.best_index = len(self.scores) - 1

    @property
    def last_bbox(self):
        return self.detections[-1].bbox

    @property
    def center(self):
        return self.detections[-1].center


@dataclass(frozen=True)
class BestCropEvent:
    track_id: int
    frame_index: int
    bbox: tuple
    score: object
    crop: np.ndarray
    window: tuple
    track_length: int


@dataclass(frozen=True)
class TrackerConfig:
    gate_scale: float = 0.5
    max_center_distance: float = None
    max_misses: int = 10
    clip_window: int = 0

    def gate(self, track):
        if self.max_center_distance is not None:
            return self.max_center_distance
        _, _, w, h = track.last_bbox
        return self.gate_scale * max(w, h)


def _distance(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def associate(tracks, detections, max_center_distance=None, gate=None):
    """Greedy global-nearest matching of detections to tracks.

    Candidate pairs within the gate are taken in order of increasing centre
    distance; ties go to the lower ``track_id`` and then to the detection
    with the smaller ``(x, y, w, h)``.  ``gate(track)`` overrides the fixed
    ``max_center_distance``.

    Returns ``(matches, unmatched_detection_indices, unmatched_track_ids)``
    with ``matches`` a ``{track_id: detection_index}`` dict.
    """
    if gate is None:
        if max_center_distance is None:
            raise PipelineError("a gate distance is required")

        def gate(_t):
            return max_center_distance

    cands = []
    for t in tracks:
        g = gate(t)
        for j, d in enumerate(detections):
            dist = _distance(t.center, d.center)
            if dist <= g:
                cands.append((dist, t.track_id, tuple(d.bbox), j))
    cands.sort()
    matches, used_t, used_d = {}, set(), set()
    for dist, tid, _, j in cands:
        if tid in used_t or j in used_d:
            continue
        matches[tid] = j
        used_t.add(tid)
        used_d.add(j)
    unmatched_d = [j for j in range(len(detections)) if j not in used_d]
    unmatched_t = [t.track_id for t in tracks if t.track_id not in used_t]
    return matches, unmatched_d, unmatched_t


class Tracker:
    """Sequential tracker; feed frames in increasing order via :meth:`step`.

    ``scorer`` maps a detection to a quality value (anything orderable; a
    :class:`~vaefqa.quality.QualityScore` or a float).
    """

    def __init__(self, scorer, cfg=TrackerConfig()):
        self.scorer = scorer
        self.cfg = cfg
        self.active = []
        self.closed = []
        self.next_id = 0
        self.last_frame = -1

    def step(self, frame_index, detections):
        if frame_index <= self.last_frame:
            raise PipelineError(
                f"frame {frame_index} arrived after frame {self.last_frame}; frames must be in order"
            )
        for d in detections:
            if d.frame_index != frame_index:
                raise PipelineError("all detections in a step must belong to that frame")
        self.last_frame = frame_index
        values = [self.scorer(d) for d in detections]

        matches, unmatched_d, unmatched_t = associate(
            self.active, detections, gate=self.cfg.gate
        )
        by_id = {t.track_id: t for t in self.active}
        for tid, j in matches.items():
            by_id[tid].add(detections[j], values[j])
        for tid in unmatched_t:
            by_id[tid].misses += 1
        for j in sorted(unmatched_d, key=lambda j: tuple(detections[j].bbox)):
            t = Track(self.next_id)
            self.next_id += 1
            t.add(detections[j], values[j])
            self.active.append(t)

        events, still = [], []
        for t in self.active:
            if t.misses > self.cfg.max_misses:
                events.append(self._close(t))
            else:
                still.append(t)
        self.active = still
        return events

    def flush(self):
        events = [self._close(t) for t in self.active]
        self.active = []
        return events

    def _close(self, track):
        track.state = "closed"
        self.closed.append(track)
        best = track.detections[track.best_index]
        w = self.cfg.clip_window
        return BestCropEvent(
            track_id=track.track_id,
            frame_index=best.frame_index,
            bbox=tuple(best.bbox),
            score=track.scores[track.best_index],
            crop=best.crop,
            window=(max(0, best.frame_index - w), best.frame_index + w),
            track_length=len(track.detections),
        )


def run(tracker, frames):
    """Drive ``tracker`` over ``[(frame_index, [Detection, ...]), ...]`` and flush."""
    events = []
    for fi, dets in frames:
        events.extend(tracker.step(fi, dets))
    events.extend(tracker.flush())
    return events


def load_detections(path):
    """Read ``frame_index, x, y, w, h`` rows; returns ``{frame_index: [bbox, ...]}``."""
    try:
        rows = read_table(path, required=("frame_index", "x", "y", "w", "h"))
    except TableError as exc:
        raise PipelineError(str(exc)) from exc
    out = {}
    for lineno, row in rows:
        try:
            fi = int(row["frame_index"])
            box = tuple(float(row[k]) for k in ("x", "y", "w", "h"))
        except ValueError:
            raise PipelineError(f"line {lineno}: malformed detection row") from None
        if fi < 0 or not all(math.isfinite(v) for v in box) or box[2] <= 0 or box[3] <= 0:
            raise PipelineError(f"line {lineno}: invalid frame index or bounding box")
        out.setdefault(fi, []).append(box)
    return out
