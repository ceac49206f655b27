"""Equal error rate computation and score-file handling.

Operating points are swept over the sorted unique scores with the
tie-accept convention: a trial whose score equals the threshold counts
as an accept.  At threshold t,

    FAR(t) = #{nontarget >= t} / #nontarget   (non-increasing in t)
    FRR(t) = #{target    <  t} / #target      (non-decreasing in t)

The EER is where the two rates cross.  Walking thresholds upward from
the minimum score (FAR 1, FRR 0) to a virtual accept-none point
(FAR 0, FRR 1), the first segment on which far - frr reaches or crosses
zero determines it: if far_i == frr_i the EER is that value exactly,
otherwise with d_i = far_i - frr_i > 0 > d_{i+1},

    lam = d_i / (d_i - d_{i+1})
    eer = far_i + lam * (far_{i+1} - far_i)
    thr = t_i   + lam * (t_{i+1}   - t_i)

which is the linear interpolation of the crossing between adjacent
operating points.  EER is a rank statistic: any strictly increasing
transform of all scores leaves it unchanged.
"""

import math

import numpy as np

from .errors import FormatError


def _split_scores(trial_scores):
    tar = np.sort(np.array([s for label, s in trial_scores if label == 1], dtype=np.float64))
    non = np.sort(np.array([s for label, s in trial_scores if label != 1], dtype=np.float64))
    if len(tar) == 0 or len(non) == 0:
        raise ValueError("need at least one target and one nontarget trial")
    if not (np.isfinite(tar).all() and np.isfinite(non).all()):
        raise ValueError("trial scores must be finite")
    return tar, non


def det_points(trial_scores):
    """Operating points (far, frr, threshold) at the sorted unique scores.

    Args:
      trial_scores: iterable of (label, score) with label 1 for target.

    Returns:
      List of (far, frr, threshold), FAR non-increasing and FRR
      non-decreasing as the threshold grows.
    """
    tar, non = _split_scores(trial_scores)
    thresholds = np.unique(np.concatenate([tar, non]))
    n_tar = len(tar)
    n_non = len(non)
    points = []
    for t in thresholds:
        far = (n_non - np.searchsorted(non, t, side="left")) / n_non
        frr = np.searchsorted(tar, t, side="left") / n_tar
        points.append((float(far), float(frr), float(t)))
    return points


def eer(trial_scores):
    """Equal error rate and its threshold.

    Args:
      trial_scores: iterable of (label, score) with label 1 for target.

    Returns:
      (eer, threshold) with the interpolation documented in the module
      docstring.
    """
    points = det_points(trial_scores)
    last_t = points[-1][2]
    points.append((0.0, 1.0, last_t + 1.0))  # virtual accept-none point
    for (f1, r1, t1), (f2, r2, t2) in zip(points, points[1:]):
        d1 = f1 - r1
        if d1 == 0.0:
            return f1, t1
        d2 = f2 - r2
        if d1 > 0.0 and d2 < 0.0:
            lam = d1 / (d1 - d2)
            return f1 + lam * (f2 - f1), t1 + lam * (t2 - t1)
    # d goes from +1 at the first point to -1 at the virtual one, so a
    # crossing always exists; falling through means the last point hit 0.
    f_last, _, t_last = points[-1]
    return f_last, t_last


# -- score files --------------------------------------------------------------


def write_scores(rows, path):
    """One line per trial: label<SP>enroll_id<SP>test_id<SP>score."""
    with open(path, "w") as f:
        for label, enroll_id, test_id, score in rows:
            f.write(f"{label} {enroll_id} {test_id} {score!r}\n")


def read_scores(path):
    """Parse a score file into (label, enroll_id, test_id, score) rows."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(
                    f"score line {lineno}: expected 4 fields, got {len(parts)}"
                )
            label_s, enroll_id, test_id, score_s = parts
            if label_s not in ("0", "1"):
                raise FormatError(
                    f"score line {lineno}: label must be 0 or 1, got {label_s!r}"
                )
            try:
                score = float(score_s)
            except ValueError as exc:
                raise FormatError(f"score line {lineno}: bad score {score_s!r}") from exc
            if not math.isfinite(score):
                raise FormatError(f"score line {lineno}: score must be finite")
            rows.append((int(label_s), enroll_id, test_id, score))
    return rows


def trial_scores_from_rows(rows):
    return [(label, score) for label, _, _, score in rows]
