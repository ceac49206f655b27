"""Synthetic segment-embedding corpora, trial sampling, and file I/O.

The generator stands in for a real embedding extractor: each speaker
gets a unit-norm centroid; each utterance perturbs it (sigma_w Gaussian
offset, renormalized); each segment adds sigma_s Gaussian noise.  With
probability outlier_prob a segment is instead replaced by
centroid + Gaussian(outlier_scale * sigma_s) -- a "noisy crop" that
uniform score averaging cannot down-weight.  Everything is drawn from
the portable xoshiro256** stream (see :mod:`gatsv.rng`) in a fixed
order, so a config generates the identical corpus everywhere.

Embedding files use the SSEF1 binary layout: magic "SSEF1", u32 dim,
u32 utterance count, then per utterance its id and speaker id as
length-prefixed UTF-8, u32 segment count, u32 per-record dim, and the
row-major f64 segment matrix.  Trial lists are text lines
``label enroll_utt test_utt`` with label 1 for target, 0 for nontarget;
multiple enrollment utterances are comma-joined in the second field.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, DomainError, FormatError
from .graph import UtteranceSSEs
from .rng import Xoshiro256StarStar
from .serialize import Reader, write_f64s, write_string, write_u32

EMBEDDING_MAGIC = b"SSEF1"


@dataclass(frozen=True)
class SynthConfig:
    speakers: int = 40
    utterances_per_speaker: int = 10
    segments_per_utterance: int = 10
    dim: int = 32
    within_noise: float = 0.3
    segment_noise: float = 0.4
    outlier_prob: float = 0.2
    outlier_scale: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.speakers, self.utterances_per_speaker,
               self.segments_per_utterance, self.dim) < 1:
            raise ValueError("all counts must be at least 1")
        if self.within_noise < 0 or self.segment_noise < 0 or self.outlier_scale < 0:
            raise ValueError("noise parameters must be non-negative")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must be in [0, 1]")


@dataclass
class Corpus:
    """Utterances with speaker labels for one split."""

    utterances: dict  # utterance_id -> UtteranceSSEs
    speakers: dict  # utterance_id -> speaker_id
    split: str = "train"
    _by_speaker: dict = field(default=None, repr=False)

    def __post_init__(self):
        if set(self.utterances) != set(self.speakers):
            raise DataError("every utterance needs exactly one speaker label")
        by_speaker = {}
        for utt_id in sorted(self.utterances):
            by_speaker.setdefault(self.speakers[utt_id], []).append(utt_id)
        self._by_speaker = by_speaker

    def speaker_ids(self):
        return sorted(self._by_speaker)

    def utterances_of(self, speaker_id):
        return [self.utterances[u] for u in self._by_speaker[speaker_id]]

    @property
    def dim(self):
        first = next(iter(sorted(self.utterances)))
        return self.utterances[first].dim

    def __len__(self):
        return len(self.utterances)


def _unit(v):
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DomainError("cannot normalize a zero vector")
    return v / norm


def generate(config, split="train"):
    """Deterministic synthetic corpus for the given config and split.

    Draw order per speaker: centroid Gaussians, then per utterance the
    offset Gaussians, then per segment one outlier uniform (always
    consumed) followed by the segment Gaussians.
    """
    rng = Xoshiro256StarStar(config.seed)
    d = config.dim
    utterances = {}
    speakers = {}
    for si in range(config.speakers):
        speaker_id = f"{split}-s{si:04d}"
        centroid = _unit(rng.normals(d))
        for ui in range(config.utterances_per_speaker):
            utt_id = f"{speaker_id}-u{ui:03d}"
            utt_vec = _unit(centroid + config.within_noise * rng.normals(d))
            segments = np.empty((config.segments_per_utterance, d))
            for gi in range(config.segments_per_utterance):
                is_outlier = rng.random() < config.outlier_prob
                noise = rng.normals(d)
                if is_outlier:
                    segments[gi] = centroid + config.outlier_scale * config.segment_noise * noise
                else:
                    segments[gi] = utt_vec + config.segment_noise * noise
            utterances[utt_id] = UtteranceSSEs(utt_id, segments)
            speakers[utt_id] = speaker_id
    return Corpus(utterances=utterances, speakers=speakers, split=split)


# -- trial lists ---------------------------------------------------------------


@dataclass(frozen=True)
class Trial:
    label: int  # 1 target, 0 nontarget
    enroll_ids: tuple
    test_id: str


def make_trials(corpus, n_target, n_nontarget, seed):
    """Sample target (same speaker, distinct utterances) and nontarget
    (distinct speakers) trials without duplicates; deterministic."""
    speakers = corpus.speaker_ids()
    multi = [s for s in speakers if len(corpus.utterances_of(s)) >= 2]
    counts = {s: len(corpus.utterances_of(s)) for s in speakers}
    cap_target = sum(c * (c - 1) for c in counts.values())
    total = sum(counts.values())
    cap_nontarget = sum(c * (total - c) for c in counts.values())
    if n_target > cap_target:
        raise DataError(
            f"requested {n_target} target trials but only {cap_target} distinct pairs exist"
        )
    if n_nontarget > cap_nontarget:
        raise DataError(
            f"requested {n_nontarget} nontarget trials but only {cap_nontarget} distinct pairs exist"
        )
    if n_target > 0 and not multi:
        raise DataError("target trials need a speaker with >= 2 utterances")
    if n_nontarget > 0 and len(speakers) < 2:
        raise DataError("nontarget trials need at least 2 speakers")

    rng = Xoshiro256StarStar(seed)
    seen = set()
    trials = []

    def ids_of(speaker):
        return corpus._by_speaker[speaker]

    attempts = 0
    limit = 1000 * (n_target + n_nontarget) + 10000
    n_tar_done = 0
    while n_tar_done < n_target:
        attempts += 1
        if attempts > limit:
            raise DataError("trial sampling did not converge; request fewer trials")
        s = multi[rng.randbelow(len(multi))]
        utts = ids_of(s)
        i, j = rng.two_distinct(len(utts))
        key = (utts[i], utts[j])
        if key not in seen:
            seen.add(key)
            trials.append(Trial(1, (utts[i],), utts[j]))
            n_tar_done += 1
    n_non_done = 0
    while n_non_done < n_nontarget:
        attempts += 1
        if attempts > limit:
            raise DataError("trial sampling did not converge; request fewer trials")
        a, b = rng.two_distinct(len(speakers))
        ua = ids_of(speakers[a])
        ub = ids_of(speakers[b])
        e = ua[rng.randbelow(len(ua))]
        t = ub[rng.randbelow(len(ub))]
        if (e, t) not in seen:
            seen.add((e, t))
            trials.append(Trial(0, (e,), t))
            n_non_done += 1
    return trials


def write_trials(trials, path):
    with open(path, "w") as f:
        for t in trials:
            f.write(f"{t.label} {','.join(t.enroll_ids)} {t.test_id}\n")


def read_trials(path):
    trials = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"trial line {lineno}: expected 3 fields, got {len(parts)}")
            label_s, enroll_s, test_id = parts
            if label_s not in ("0", "1"):
                raise FormatError(f"trial line {lineno}: label must be 0 or 1, got {label_s!r}")
            enroll_ids = tuple(e for e in enroll_s.split(",") if e)
            if not enroll_ids:
                raise FormatError(f"trial line {lineno}: empty enrollment field")
            trials.append(Trial(int(label_s), enroll_ids, test_id))
    return trials


# -- embedding files -------------------------------------------------------------


def write_embeddings(corpus, path):
    """Write the corpus in SSEF1 layout (records sorted by utterance id)."""
    ids = sorted(corpus.utterances)
    d = corpus.dim
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        write_u32(f, d)
        write_u32(f, len(ids))
        for utt_id in ids:
            utt = corpus.utterances[utt_id]
            write_string(f, utt_id)
            write_string(f, corpus.speakers[utt_id])
            write_u32(f, utt.num_segments)
            write_u32(f, utt.dim)
            write_f64s(f, utt.segments)


def read_embeddings(path, split="train"):
    """Read an SSEF1 file back into a Corpus (bit-exact round-trip)."""
    utterances = {}
    speakers = {}
    with open(path, "rb") as f:
        r = Reader(f)
        r.magic(EMBEDDING_MAGIC)
        d = r.u32("embedding dim")
        if d < 1:
            raise FormatError("embedding dim must be positive")
        n = r.u32("utterance count")
        for _ in range(n):
            utt_id = r.string("utterance id")
            speaker_id = r.string("speaker id")
            s = r.u32(f"segment count of {utt_id}")
            d_rec = r.u32(f"dim of {utt_id}")
            if d_rec != d:
                raise FormatError(
                    f"utterance {utt_id!r} has dim {d_rec}, file header says {d}"
                )
            if s < 1:
                raise FormatError(f"utterance {utt_id!r} has no segments")
            values = r.f64s(s * d, f"segments of {utt_id}")
            if utt_id in utterances:
                raise FormatError(f"duplicate utterance id {utt_id!r}")
            try:
                utterances[utt_id] = UtteranceSSEs(utt_id, values.reshape(s, d))
            except (DimensionError, DomainError) as exc:
                raise FormatError(f"utterance {utt_id!r}: {exc}") from exc
            speakers[utt_id] = speaker_id
        r.expect_eof()
    return Corpus(utterances=utterances, speakers=speakers, split=split)
