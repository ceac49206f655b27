"""Batch construction, the two training losses, and the training loop.

A batch holds two distinct utterances for each of M speakers.  Scoring
every (x_{i,1}, x_{k,2}) pair gives an M x M score matrix whose diagonal
entries are the same-speaker pairs.  The contrastive loss is the mean
row-wise cross-entropy of the diagonal against the full row; the hard
negative variant keeps only the H highest-scoring impostors per row in
the denominator.  The positive term stays in the denominator (keeping
the loss non-negative and recovering the contrastive loss at H = M-1);
``include_positive=False`` gives the literal impostors-only form.

The learning rate follows cosine annealing without restarts from lr0
down to zero over the configured epochs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingError
from .gat import default_dims, init_model, score_value
from .graph import build_trial_graph
from .numeric import Adam, Tape
from .rng import Xoshiro256StarStar, mix64

LOSS_CONTRASTIVE = "contrastive"
LOSS_HARD_NEGATIVE = "hard_negative"


@dataclass
class TrainBatch:
    """Two distinct utterances for each of M speakers."""

    speaker_ids: list
    first: list  # x_{i,1}
    second: list  # x_{i,2}

    def __post_init__(self):
        if not (len(self.speaker_ids) == len(self.first) == len(self.second)):
            raise ValueError("batch lists must have equal length")
        for a, b in zip(self.first, self.second):
            if a.utterance_id == b.utterance_id:
                raise ValueError(
                    f"speaker pair reuses utterance {a.utterance_id!r}"
                )

    @property
    def M(self):
        return len(self.speaker_ids)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_M: int = 16
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    dropout: float = 0.2
    hard_negative_H: int = 5
    loss: str = LOSS_CONTRASTIVE
    seed: int = 0
    dims: list = field(default=None)
    strict_eq6: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_M < 1:
            raise ValueError("batch_M must be positive")
        if self.hard_negative_H < 1:
            raise ValueError("hard_negative_H must be at least 1")
        if self.loss not in (LOSS_CONTRASTIVE, LOSS_HARD_NEGATIVE):
            raise ValueError(f"unknown loss {self.loss!r}")


# -- losses -------------------------------------------------------------------


def _diag_mean_terms(tape, scores, mask):
    m = scores.data.shape[0]
    lse = tape.logsumexp_rows(scores, mask)
    eye = tape.const(np.eye(m))
    diag_sum = tape.sum_all(tape.mul(scores, eye))
    return tape.scale(tape.sub(tape.sum_all(lse), diag_sum), 1.0 / m)


def contrastive_loss(tape, scores):
    """-(1/M) sum_i log(exp(s_ii) / sum_k exp(s_ik)), log-sum-exp stable."""
    if scores.data.shape[0] != scores.data.shape[1]:
        raise ValueError(f"score matrix must be square, got {scores.data.shape}")
    return _diag_mean_terms(tape, scores, None)


def hard_negative_mask(score_data, H, include_positive=True):
    """0/1 denominator mask: per row the H largest impostors, ties broken
    toward the lower column index, plus the diagonal unless disabled."""
    m = score_data.shape[0]
    if not 1 <= H <= m - 1:
        raise ValueError(f"H must be in [1, M-1] = [1, {m - 1}], got {H}")
    mask = np.zeros((m, m))
    for i in range(m):
        order = np.argsort(-score_data[i], kind="stable")
        picked = [k for k in order if k != i][:H]
        mask[i, picked] = 1.0
        if include_positive:
            mask[i, i] = 1.0
    return mask


def hard_negative_loss(tape, scores, H, include_positive=True):
    """Contrastive loss restricted to the top-H impostors per row."""
    if scores.data.shape[0] != scores.data.shape[1]:
        raise ValueError(f"score matrix must be square, got {scores.data.shape}")
    mask = hard_negative_mask(scores.data, H, include_positive)
    return _diag_mean_terms(tape, scores, mask)


def contrastive_loss_of(score_matrix, kernels=None):
    """Float convenience on a plain matrix."""
    tape = Tape(kernels=kernels, record=False)
    return float(contrastive_loss(tape, tape.const(score_matrix)).data[0, 0])


def hard_negative_loss_of(score_matrix, H, include_positive=True, kernels=None):
    tape = Tape(kernels=kernels, record=False)
    value = hard_negative_loss(tape, tape.const(score_matrix), H, include_positive)
    return float(value.data[0, 0])


# -- batch scoring --------------------------------------------------------------


class GatScorer:
    """Adapter that scores utterance pairs with a GAT model."""

    def __init__(self, model):
        self.model = model

    def params(self):
        return self.model.params()

    def pair_value(self, tape, enroll, test, training, mask_rng):
        graph = build_trial_graph(enroll, test)
        return score_value(tape, self.model, graph, training, mask_rng)


def score_matrix_value(tape, scorer, batch, mask_seed=0, training=True):
    """Taped M x M score matrix; entry (i, k) scores (x_{i,1}, x_{k,2}).

    Each pair's dropout mask stream is seeded from (mask_seed, i, k), so
    any entry can be recomputed in isolation.
    """
    grid = []
    for i in range(batch.M):
        row = []
        for k in range(batch.M):
            mask_rng = Xoshiro256StarStar(mask_seed, i, k) if training else None
            row.append(
                scorer.pair_value(tape, batch.first[i], batch.second[k], training, mask_rng)
            )
        grid.append(row)
    return tape.stack_scalars(grid)


def score_matrix(model, batch, mask_seed=0, training=True, kernels=None):
    """Plain-matrix view of :func:`score_matrix_value` for a GAT model."""
    tape = Tape(kernels=kernels, record=False)
    return score_matrix_value(tape, GatScorer(model), batch, mask_seed, training).data


# -- schedule and batching ------------------------------------------------------


def lr_at(epoch, config):
    """Cosine annealing without restart: lr0 at epoch 0, 0 at the last."""
    if not 0 <= epoch < max(config.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.epochs == 1:
        return config.lr0
    return 0.5 * config.lr0 * (1.0 + math.cos(math.pi * epoch / (config.epochs - 1)))


def make_batches(corpus, M, seed, epoch):
    """One epoch's batches: shuffled speakers in groups of M, two distinct
    utterances per speaker.  Deterministic in (seed, epoch)."""
    eligible = sorted(
        s for s in corpus.speaker_ids() if len(corpus.utterances_of(s)) >= 2
    )
    if len(eligible) < M:
        raise DataError(
            f"need at least {M} speakers with >= 2 utterances, found {len(eligible)}"
        )
    rng = Xoshiro256StarStar(seed, epoch)
    order = list(eligible)
    rng.shuffle(order)
    batches = []
    for b in range(len(order) // M):
        speakers = order[b * M : (b + 1) * M]
        first, second = [], []
        for spk in speakers:
            utts = corpus.utterances_of(spk)
            i, j = rng.two_distinct(len(utts))
            first.append(utts[i])
            second.append(utts[j])
        batches.append(TrainBatch(speakers, first, second))
    return batches


# -- training loop ---------------------------------------------------------------


def train_scorer(scorer, corpus, config, kernels=None):
    """Run the full schedule on any pair scorer; returns the loss history
    as (epoch, mean_loss, lr) tuples."""
    opt = Adam(scorer.params(), weight_decay=config.weight_decay)
    history = []
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        epoch_losses = []
        for b_idx, batch in enumerate(make_batches(corpus, config.batch_M, config.seed, epoch)):
            tape = Tape(kernels=kernels)
            mask_seed = mix64(config.seed, epoch, b_idx)
            scores = score_matrix_value(tape, scorer, batch, mask_seed, training=True)
            if config.loss == LOSS_CONTRASTIVE:
                loss = contrastive_loss(tape, scores)
            else:
                loss = hard_negative_loss(
                    tape,
                    scores,
                    config.hard_negative_H,
                    include_positive=not config.strict_eq6,
                )
            loss_val = float(loss.data[0, 0])
            if not math.isfinite(loss_val):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b_idx}"
                )
            opt.zero_grad()
            tape.backward(loss)
            opt.step(lr)
            epoch_losses.append(loss_val)
        history.append((epoch, float(np.mean(epoch_losses)), lr))
    return history


def train(corpus, config, kernels=None):
    """Train a GAT scorer on the corpus; returns (model, history)."""
    dims = config.dims if config.dims is not None else default_dims(corpus.dim)
    model = init_model(dims, config.seed, dropout_rate=config.dropout)
    history = train_scorer(GatScorer(model), corpus, config, kernels=kernels)
    return model, history


def write_loss_log(history, path):
    """One line per epoch: epoch<TAB>mean_loss<TAB>lr."""
    with open(path, "w") as f:
        for epoch, mean_loss, lr in history:
            f.write(f"{epoch}\t{mean_loss!r}\t{lr!r}\n")
