"""Reference back-end scorers: cosine (with and without score averaging
over segment pairs) and the pairwise-feature MLP classifier.

The MLP scorer builds a feature vector from two embeddings by
concatenating, in fixed order, the elementwise product, sum, difference
and (optionally) the raw pair, then classifies same/different speaker
with a three-hidden-layer network.  Its utterance-level score averages
the per-segment-pair margin (same-speaker logit minus different-speaker
logit), mirroring the averaged pairwise cosine.  Pair reductions use
exact summation, so scores do not depend on segment order.
"""

import math

import numpy as np

from .errors import DimensionError, DomainError, FormatError
from .numeric import Param, Tape
from .rng import Xoshiro256StarStar
from .serialize import Reader, write_f64s, write_u32

BVECTOR_MAGIC = b"BVEC1"
FEATURE_ORDER = ("mul", "add", "sub", "concat")


def cosine_score(a, b):
    """Cosine similarity of two embedding vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def mean_embedding(utterance):
    """Single-embedding view of an utterance: elementwise segment mean."""
    return utterance.segments.mean(axis=0)


def cosine_utterance_score(enroll, test):
    """Cosine over mean-pooled segments (the no-averaging baseline)."""
    return cosine_score(mean_embedding(enroll), mean_embedding(test))


def tta_score(enroll, test):
    """Mean pairwise cosine over all enroll x test segment pairs.

    Exact (order-independent) reduction over the pair grid.
    """
    if enroll.dim != test.dim:
        raise DimensionError(f"embedding dims differ: {enroll.dim} vs {test.dim}")
    pair_scores = [
        cosine_score(e, t) for e in enroll.segments for t in test.segments
    ]
    return math.fsum(pair_scores) / len(pair_scores)


# -- pairwise-feature MLP -------------------------------------------------------


def _canonical_ops(ops):
    ops = tuple(o for o in FEATURE_ORDER if o in set(ops))
    if not ops:
        raise ValueError(f"feature ops must be a non-empty subset of {FEATURE_ORDER}")
    return ops


def feature_width(d, ops):
    return sum(2 * d if op == "concat" else d for op in _canonical_ops(ops))


def bvector_features(a, b, ops):
    """Pair feature vector: blocks in FEATURE_ORDER for the selected ops."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    blocks = []
    for op in _canonical_ops(ops):
        if op == "mul":
            blocks.append(a * b)
        elif op == "add":
            blocks.append(a + b)
        elif op == "sub":
            blocks.append(a - b)
        else:
            blocks.append(np.concatenate([a, b]))
    return np.concatenate(blocks)


def pair_feature_matrix(enroll_segments, test_segments, ops):
    """Features for every (enroll, test) segment pair, row-major over pairs."""
    e = np.asarray(enroll_segments, dtype=np.float64)
    t = np.asarray(test_segments, dtype=np.float64)
    if e.shape[1] != t.shape[1]:
        raise DimensionError(f"embedding dims differ: {e.shape[1]} vs {t.shape[1]}")
    rep = np.repeat(e, t.shape[0], axis=0)
    til = np.tile(t, (e.shape[0], 1))
    blocks = []
    for op in _canonical_ops(ops):
        if op == "mul":
            blocks.append(rep * til)
        elif op == "add":
            blocks.append(rep + til)
        elif op == "sub":
            blocks.append(rep - til)
        else:
            blocks.append(np.concatenate([rep, til], axis=1))
    return np.concatenate(blocks, axis=1)


class BVectorModel:
    """Three-hidden-layer relu MLP over pair features with a 2-way output
    (same speaker vs different speaker)."""

    def __init__(self, dim, ops, hidden, params):
        self.dim = dim
        self.ops = _canonical_ops(ops)
        self.hidden = tuple(hidden)
        self._params = params  # [w1, b1, w2, b2, w3, b3, w_out, b_out]

    def params(self):
        return list(self._params)

    @property
    def feature_width(self):
        return feature_width(self.dim, self.ops)


def init_bvector(dim, ops, seed, hidden=(256, 128, 64)):
    """Fresh MLP with the same uniform fan-based init as the GAT."""
    if len(hidden) != 3:
        raise ValueError("the classifier uses exactly three hidden layers")
    ops = _canonical_ops(ops)
    widths = [feature_width(dim, ops), *hidden, 2]
    rng = Xoshiro256StarStar(seed)
    params = []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniforms(fan_in * fan_out).reshape(fan_in, fan_out)
        name = "w_out" if i == len(widths) - 2 else f"w{i + 1}"
        bname = "b_out" if i == len(widths) - 2 else f"b{i + 1}"
        params.append(Param(name, (2.0 * u - 1.0) * limit))
        params.append(Param(bname, np.zeros((1, fan_out))))
    return BVectorModel(dim, ops, hidden, params)


_MARGIN = np.array([[1.0], [-1.0]])


def _margins_value(tape, model, features):
    """Taped per-pair margins: same-speaker logit minus different-speaker."""
    h = features
    w1, b1, w2, b2, w3, b3, w_out, b_out = model.params()
    for w, b in ((w1, b1), (w2, b2), (w3, b3)):
        h = tape.relu(tape.add_rowvec(tape.matmul(h, tape.param(w)), tape.param(b)))
    logits = tape.add_rowvec(tape.matmul(h, tape.param(w_out)), tape.param(b_out))
    return tape.matmul(logits, tape.const(_MARGIN))


def bvector_score(model, enroll, test):
    """Utterance-level score: exact mean of per-pair margins."""
    feats = pair_feature_matrix(enroll.segments, test.segments, model.ops)
    tape = Tape(record=False)
    margins = _margins_value(tape, model, tape.const(feats)).data
    return math.fsum(margins[:, 0].tolist()) / margins.shape[0]


class BVectorScorer:
    """Train-loop adapter; applies input dropout to the pair features."""

    def __init__(self, model, dropout_rate=0.0):
        self.model = model
        self.dropout_rate = dropout_rate

    def params(self):
        return self.model.params()

    def pair_value(self, tape, enroll, test, training, mask_rng):
        feats = pair_feature_matrix(enroll.segments, test.segments, self.model.ops)
        x = tape.const(feats)
        if training and self.dropout_rate > 0.0:
            if mask_rng is None:
                raise ValueError("training-mode scoring requires a mask rng")
            u = mask_rng.uniforms(feats.size).reshape(feats.shape)
            mask = np.where(u >= self.dropout_rate, 1.0 / (1.0 - self.dropout_rate), 0.0)
            x = tape.mul(x, tape.const(mask))
        return tape.mean_all(_margins_value(tape, self.model, x))


def train_bvector(corpus, config, ops=("mul", "add", "sub"), hidden=(256, 128, 64)):
    """Train the MLP scorer with the shared loop and losses."""
    from .train import train_scorer

    model = init_bvector(corpus.dim, ops, config.seed, hidden)
    scorer = BVectorScorer(model, dropout_rate=config.dropout)
    history = train_scorer(scorer, corpus, config)
    return model, history


def save_bvector(model, path):
    """BVEC1 checkpoint: magic, u32 dim, u32 op count + op codes (indices
    into FEATURE_ORDER), u32 hidden count + widths, u32 parameter count,
    then each parameter as u32 rows, u32 cols, row-major f64 values."""
    params = model.params()
    with open(path, "wb") as f:
        f.write(BVECTOR_MAGIC)
        write_u32(f, model.dim)
        write_u32(f, len(model.ops))
        for op in model.ops:
            write_u32(f, FEATURE_ORDER.index(op))
        write_u32(f, len(model.hidden))
        for h in model.hidden:
            write_u32(f, h)
        write_u32(f, len(params))
        for p in params:
            write_u32(f, p.value.shape[0])
            write_u32(f, p.value.shape[1])
            write_f64s(f, p.value)


def load_bvector(path):
    with open(path, "rb") as f:
        r = Reader(f)
        r.magic(BVECTOR_MAGIC)
        dim = r.u32("embedding dim")
        n_ops = r.u32("op count")
        if n_ops < 1 or n_ops > len(FEATURE_ORDER):
            raise FormatError(f"invalid op count {n_ops}")
        codes = [r.u32(f"op code {i}") for i in range(n_ops)]
        if any(c >= len(FEATURE_ORDER) for c in codes):
            raise FormatError(f"unknown op code in {codes}")
        ops = tuple(FEATURE_ORDER[c] for c in codes)
        n_hidden = r.u32("hidden layer count")
        if n_hidden != 3:
            raise FormatError(f"expected 3 hidden widths, got {n_hidden}")
        hidden = tuple(r.u32(f"hidden width {i}") for i in range(n_hidden))
        nparams = r.u32("parameter count")
        if nparams != 8:
            raise FormatError(f"expected 8 parameters, got {nparams}")
        model = init_bvector(dim, ops, seed=0, hidden=hidden)
        for p in model.params():
            rows = r.u32(f"{p.name} rows")
            cols = r.u32(f"{p.name} cols")
            if (rows, cols) != p.value.shape:
                raise FormatError(
                    f"parameter {p.name} has shape ({rows}, {cols}), expected {p.value.shape}"
                )
            p.value[:] = r.f64s(rows * cols, f"{p.name} values").reshape(rows, cols)
        r.expect_eof()
    return model
