"""Procedural stand-ins for face crops and detection streams.

Used by the test-suite, the benchmarks and the CLI demo data generator;
nothing here is needed to score real images.
"""

import numpy as np
from scipy.ndimage import gaussian_filter


def face_blob(rng, side=32):
    """One clean, face-like grayscale image in ``[0, 1]``.

    A bright ellipse on a dark background with two dark eyes and a mouth;
    position, size and brightness are jittered.  Edges are anti-aliased by
    4x supersampling.
    """
    ss = 4
    n = side * ss
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5) / n
    cx = 0.5 + rng.uniform(-0.04, 0.04)
    cy = 0.5 + rng.uniform(-0.04, 0.04)
    rx = rng.uniform(0.28, 0.34)
    ry = rx * rng.uniform(1.15, 1.3)
    skin = rng.uniform(0.7, 0.85)
    bg = rng.uniform(0.05, 0.15)
    img = np.full((n, n), bg)
    face = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    img[face] = skin
    eye_dy = -0.25 * ry
    eye_dx = 0.4 * rx
    er = rx * rng.uniform(0.16, 0.2)
    for sgn in (-1.0, 1.0):
        eye = ((xx - cx - sgn * eye_dx) ** 2 + ((yy - cy - eye_dy) / 0.7) ** 2) <= er ** 2
        img[eye] = 0.1
    mouth = (np.abs(yy - cy - 0.45 * ry) <= 0.06 * ry) & (np.abs(xx - cx) <= 0.4 * rx)
    img[mouth] = 0.25
    img = img.reshape(side, ss, side, ss).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0)


def face_blobs(n, side=32, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([face_blob(rng, side) for _ in range(n)])


def blur(img, sigma=2.0):
    return np.clip(gaussian_filter(np.asarray(img, dtype=np.float64), sigma, mode="reflect"), 0.0, 1.0)


def add_noise(img, sigma, rng):
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)


def _well_separated(paths, spans, box, gate_scale, max_misses, margin):
    """True if greedy centre matching is unambiguous for these trajectories.

    Each detection must be inside its own track's gate and outside the gate
    (plus ``margin``) of every other track still alive at that frame.
    """
    gate = gate_scale * box
    n_frames = paths.shape[1]
    last_seen = {}
    for f in range(n_frames):
        present = [s for s, (a, b) in enumerate(spans) if a <= f < b]
        for s in present:
            c = paths[s, f]
            if s in last_seen and np.hypot(*(c - last_seen[s][1])) > gate - margin:
                return False
            for t, (ft, pt) in last_seen.items():
                if t != s and f - ft <= max_misses + 1 and np.hypot(*(c - pt)) <= gate + margin:
                    return False
        for s in present:
            last_seen[s] = (f, paths[s, f])
    return True


def trajectories(rng, n_subjects=3, n_frames=40, canvas=(180, 320), box=40, crossing=False,
                 gate_scale=0.5, max_misses=10, margin=2.0, max_tries=2000):
    """Random constant-velocity subject paths with ground-truth identities.

    Returns ``(frames, spans)`` where ``frames[f]`` is a list of
    ``(subject_id, (x, y, w, h))`` and ``spans[s] = (first, end)``.  With
    ``crossing=True`` the first two subjects move towards each other on
    parallel lines so their horizontal positions swap mid-sequence.
    """
    h, w = canvas
    step_max = gate_scale * box - margin - 1.0
    for _ in range(max_tries):
        paths = np.zeros((n_subjects, n_frames, 2))
        spans = []
        for s in range(n_subjects):
            a = int(rng.integers(0, n_frames // 3))
            b = int(rng.integers(2 * n_frames // 3, n_frames + 1))
            spans.append((a, max(b, a + 2)))
            start = rng.uniform([box, box], [w - box, h - box])
            speed = rng.uniform(0.1, 0.4) * step_max
            ang = rng.uniform(0, 2 * np.pi)
            vel = speed * np.array([np.cos(ang), np.sin(ang)])
            paths[s] = start + np.outer(np.arange(n_frames) - a, vel)
        if crossing and n_subjects >= 2:
            y0 = rng.uniform(box, h - 2.5 * box)
            dy = gate_scale * box + margin + rng.uniform(3.0, 8.0)
            speed = min(step_max, (w - 2.0 * box) / (n_frames - 1))
            t = np.arange(n_frames)
            paths[0] = np.stack([box + speed * t, np.full(n_frames, y0)], axis=1)
            paths[1] = np.stack([box + speed * (n_frames - 1) - speed * t, np.full(n_frames, y0 + dy)], axis=1)
            spans[0] = spans[1] = (0, n_frames)
        inside = all(
            np.all((paths[s, a:b] >= box / 2) & (paths[s, a:b] <= [w - box / 2, h - box / 2]))
            for s, (a, b) in enumerate(spans)
        )
        if inside and _well_separated(paths, spans, box, gate_scale, max_misses, margin):
            break
    else:
        raise RuntimeError("could not sample well-separated trajectories")
    frames = []
    for f in range(n_frames):
        row = []
        for s, (a, b) in enumerate(spans):
            if a <= f < b:
                cx, cy = paths[s, f]
                row.append((s, (float(cx - box / 2), float(cy - box / 2), float(box), float(box))))
        frames.append(row)
    return frames, spans


def video(rng, n_frames=40, side=32, n_subjects=2, canvas=(180, 320), box=48):
    """Render a synthetic two-subject clip.

    Each subject's crop sharpness varies smoothly over its lifetime (a
    blur that dips to zero once), giving a well-defined best frame.
    Returns ``(frames, detection_rows)``.
    """
    frames_gt, spans = trajectories(rng, n_subjects, n_frames, canvas, box, crossing=True)
    faces = [face_blob(rng, box) for _ in range(n_subjects)]
    sharp_at = [int(rng.integers(a, b)) for a, b in spans]
    out, rows = [], []
    for f, dets in enumerate(frames_gt):
        img = np.full(canvas, 0.1)
        for s, (x, y, w, h) in dets:
            sig = 0.15 * abs(f - sharp_at[s])
            patch = blur(faces[s], sig) if sig > 0.05 else faces[s]
            x0, y0 = int(round(x)), int(round(y))
            img[y0:y0 + box, x0:x0 + box] = patch
            rows.append((f, x0, y0, box, box))
        out.append(img)
    return out, rows
