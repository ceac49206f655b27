"""Losses, schedule, batching and the training loop."""

import math

import numpy as np
import pytest

from conftest import central_diff, worst_rel_err
from gatsv.data import SynthConfig, generate
from gatsv.errors import DataError, TrainingError
from gatsv.gat import default_dims, init_model
from gatsv.graph import UtteranceSSEs
from gatsv.numeric import Tape
from gatsv.rng import Xoshiro256StarStar
from gatsv.train import (
    GatScorer,
    TrainBatch,
    TrainConfig,
    contrastive_loss,
    contrastive_loss_of,
    hard_negative_loss,
    hard_negative_loss_of,
    hard_negative_mask,
    lr_at,
    make_batches,
    score_matrix,
    score_matrix_value,
    train,
    train_scorer,
    write_loss_log,
)


def _batch_from(np_rng, M, S=3, d=8):
    first = [UtteranceSSEs(f"s{i}-a", np_rng.normal(size=(S, d))) for i in range(M)]
    second = [UtteranceSSEs(f"s{i}-b", np_rng.normal(size=(S, d))) for i in range(M)]
    return TrainBatch([f"s{i}" for i in range(M)], first, second)


# -- losses: independent brute-force oracle --------------------------------------


def _loss_oracle(S, H=None, include_positive=True):
    """Direct per-row evaluation with explicit selection and fsum."""
    M = S.shape[0]
    terms = []
    for i in range(M):
        if H is None:
            denom_idx = list(range(M))
        else:
            impostors = sorted(
                (k for k in range(M) if k != i), key=lambda k: (-S[i, k], k)
            )[:H]
            denom_idx = impostors + ([i] if include_positive else [])
        m = max(S[i, k] for k in denom_idx)
        denom = math.fsum(math.exp(S[i, k] - m) for k in denom_idx)
        terms.append(-(S[i, i] - m - math.log(denom)))
    return math.fsum(terms) / M


def test_contrastive_uniform_scores():
    S = np.full((4, 4), 2.5)
    assert abs(contrastive_loss_of(S) - math.log(4)) < 1e-12


def test_contrastive_single_speaker_is_zero():
    assert contrastive_loss_of(np.array([[3.7]])) == 0.0


def test_contrastive_saturated():
    S = np.zeros((3, 3))
    np.fill_diagonal(S, 50.0)
    assert 0.0 <= contrastive_loss_of(S) < 1e-9


def test_contrastive_matches_oracle(np_rng):
    for _ in range(25):
        S = np_rng.normal(size=(5, 5)) * 3.0
        assert abs(contrastive_loss_of(S) - _loss_oracle(S)) < 1e-12


def test_hard_negative_uniform_scores():
    S = np.full((5, 5), -1.3)
    assert abs(hard_negative_loss_of(S, H=2) - math.log(3)) < 1e-12


def test_hard_negative_equals_contrastive_at_full_h(np_rng):
    for _ in range(30):
        M = int(np_rng.integers(2, 7))
        S = np_rng.normal(size=(M, M)) * 2.0
        assert hard_negative_loss_of(S, H=M - 1) == contrastive_loss_of(S)  # exact


def test_hard_negative_row_example():
    # positive 0 with negatives (5, 1, -3), H = 1: only the 5 survives
    S = np.array(
        [
            [0.0, 5.0, 1.0, -3.0],
            [-50.0, 0.0, -50.0, -50.0],
            [-50.0, -50.0, 0.0, -50.0],
            [-50.0, -50.0, -50.0, 0.0],
        ]
    )
    got = hard_negative_loss_of(S, H=1)
    want = _loss_oracle(S, H=1)
    assert abs(got - want) < 1e-12
    # the first row alone contributes log(1 + e^5)/M
    row0 = math.log(1.0 + math.exp(5.0))
    assert abs(got - row0 / 4.0) < 1e-9


def test_hard_negative_matches_oracle_random(np_rng):
    for _ in range(25):
        M = int(np_rng.integers(3, 8))
        H = int(np_rng.integers(1, M))
        S = np_rng.normal(size=(M, M)) * 3.0
        assert abs(hard_negative_loss_of(S, H) - _loss_oracle(S, H)) < 1e-12


def test_hard_negative_strict_eq6(np_rng):
    S = np_rng.normal(size=(5, 5))
    got = hard_negative_loss_of(S, H=2, include_positive=False)
    want = _loss_oracle(S, H=2, include_positive=False)
    assert abs(got - want) < 1e-12
    # the literal form can go negative when the positive dominates
    S2 = np.full((3, 3), 0.0)
    np.fill_diagonal(S2, 30.0)
    assert hard_negative_loss_of(S2, H=1, include_positive=False) < 0.0
    assert hard_negative_loss_of(S2, H=1) >= 0.0


def test_hard_negative_mask_tie_break():
    S = np.array([[0.0, 2.0, 2.0, 1.0]] + [[0.0] * 4] * 3)
    mask = hard_negative_mask(S, H=1)
    assert mask[0, 1] == 1.0 and mask[0, 2] == 0.0  # lower index wins ties


def test_hard_negative_h_out_of_range(np_rng):
    S = np_rng.normal(size=(4, 4))
    for H in (0, 4, 9):
        with pytest.raises(ValueError):
            hard_negative_loss_of(S, H)


def test_losses_shift_invariant(np_rng):
    S = np_rng.normal(size=(6, 6)) * 2.0
    for c in (7.3, -123.0):
        assert abs(contrastive_loss_of(S) - contrastive_loss_of(S + c)) < 1e-9
        assert abs(hard_negative_loss_of(S, 3) - hard_negative_loss_of(S + c, 3)) < 1e-9


def test_losses_nonnegative_and_monotone(np_rng):
    for _ in range(10):
        S = np_rng.normal(size=(5, 5)) * 2.0
        assert contrastive_loss_of(S) >= 0.0
        assert hard_negative_loss_of(S, 2) >= 0.0
    S = np_rng.normal(size=(4, 4))
    losses = []
    for bump in (0.0, 0.5, 1.0, 5.0):
        S2 = S.copy()
        S2[np.diag_indices(4)] += bump
        losses.append(hard_negative_loss_of(S2, 2))
    assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))


# -- score matrix -------------------------------------------------------------------


def test_score_matrix_single_pair(np_rng):
    model = init_model([8, 4], seed=1, dropout_rate=0.0)
    batch = _batch_from(np_rng, M=1)
    S = score_matrix(model, batch, training=False)
    assert S.shape == (1, 1)
    from gatsv.gat import score
    from gatsv.graph import build_trial_graph

    direct = score(model, build_trial_graph(batch.first[0], batch.second[0]))
    assert S[0, 0] == direct


def test_score_matrix_zero_projection(np_rng):
    model = init_model([8, 8, 4], seed=2, dropout_rate=0.0)
    model.w_out.value[:] = 0.0
    model.b_out.value[:] = -0.625
    S = score_matrix(model, _batch_from(np_rng, M=3), training=False)
    assert np.allclose(S, -0.625, atol=1e-15)


def test_score_matrix_per_pair_mask_policy(np_rng):
    model = init_model([8, 8, 4], seed=3, dropout_rate=0.2)
    batch = _batch_from(np_rng, M=3)
    S = score_matrix(model, batch, mask_seed=77, training=True)
    from gatsv.gat import score
    from gatsv.graph import build_trial_graph

    for i in range(3):
        for k in range(3):
            g = build_trial_graph(batch.first[i], batch.second[k])
            solo = score(model, g, training=True, mask_rng=Xoshiro256StarStar(77, i, k))
            assert S[i, k] == solo  # same masks regardless of iteration order


def test_loss_gradients_through_score_matrix(np_rng):
    # tiny config, dropout disabled: both losses against finite differences
    model = init_model([4, 4, 2], seed=4, dropout_rate=0.0)
    batch = _batch_from(np_rng, M=2, S=2, d=4)
    scorer = GatScorer(model)

    def loss_of(kind):
        def f():
            t = Tape(record=False)
            S = score_matrix_value(t, scorer, batch, training=False)
            if kind == "c":
                return float(contrastive_loss(t, S).data[0, 0])
            return float(hard_negative_loss(t, S, H=1).data[0, 0])

        return f

    for kind in ("c", "h"):
        t = Tape()
        S = score_matrix_value(t, scorer, batch, training=False)
        loss = contrastive_loss(t, S) if kind == "c" else hard_negative_loss(t, S, H=1)
        for p in model.params():
            p.zero_grad()
        t.backward(loss)
        for p in model.params():
            fd = central_diff(loss_of(kind), p.value, step=1e-5)
            assert worst_rel_err(p.grad, fd) < 1e-4, (kind, p.name)


# -- schedule -----------------------------------------------------------------------


def test_lr_schedule_full_scale_values():
    cfg = TrainConfig(epochs=200, lr0=1e-3, seed=0)
    assert lr_at(0, cfg) == 1e-3
    assert abs(lr_at(199, cfg)) < 1e-18
    lrs = [lr_at(e, cfg) for e in range(200)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    mid = TrainConfig(epochs=201, lr0=1e-3, seed=0)
    assert abs(lr_at(100, mid) - 5e-4) < 1e-18


def test_lr_single_epoch_and_bounds():
    cfg = TrainConfig(epochs=1, lr0=0.02, seed=0)
    assert lr_at(0, cfg) == 0.02
    with pytest.raises(ValueError):
        lr_at(1, cfg)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


# -- batching ------------------------------------------------------------------------


def test_make_batches_deterministic(tiny_corpus):
    a = make_batches(tiny_corpus, M=4, seed=5, epoch=2)
    b = make_batches(tiny_corpus, M=4, seed=5, epoch=2)
    assert [x.speaker_ids for x in a] == [y.speaker_ids for y in b]
    assert [[u.utterance_id for u in x.first] for x in a] == [
        [u.utterance_id for u in y.first] for y in b
    ]
    c = make_batches(tiny_corpus, M=4, seed=5, epoch=3)
    assert [x.speaker_ids for x in a] != [y.speaker_ids for y in c]


def test_make_batches_exact_m_single_batch(tiny_corpus):
    batches = make_batches(tiny_corpus, M=10, seed=1, epoch=0)
    assert len(batches) == 1
    assert sorted(batches[0].speaker_ids) == tiny_corpus.speaker_ids()


def test_make_batches_no_repeats_distinct_utterances(tiny_corpus):
    for epoch in range(4):
        for batch in make_batches(tiny_corpus, M=4, seed=9, epoch=epoch):
            assert len(set(batch.speaker_ids)) == batch.M
            for spk, u1, u2 in zip(batch.speaker_ids, batch.first, batch.second):
                assert u1.utterance_id != u2.utterance_id
                assert tiny_corpus.speakers[u1.utterance_id] == spk
                assert tiny_corpus.speakers[u2.utterance_id] == spk


def test_make_batches_needs_enough_speakers(tiny_corpus):
    with pytest.raises(DataError):
        make_batches(tiny_corpus, M=11, seed=0, epoch=0)


def test_batch_rejects_reused_utterance(np_rng):
    u = UtteranceSSEs("same", np_rng.normal(size=(2, 4)))
    with pytest.raises(ValueError):
        TrainBatch(["s"], [u], [u])


# -- training loop ----------------------------------------------------------------------


def test_train_zero_epochs_equals_init(tiny_corpus):
    cfg = TrainConfig(epochs=0, batch_M=4, seed=31, dims=[8, 8, 4, 2])
    model, history = train(tiny_corpus, cfg)
    assert history == []
    fresh = init_model([8, 8, 4, 2], seed=31, dropout_rate=cfg.dropout)
    for a, b in zip(model.params(), fresh.params()):
        assert np.array_equal(a.value, b.value)


def test_initial_loss_near_log_m():
    corpus = generate(
        SynthConfig(speakers=10, utterances_per_speaker=3, segments_per_utterance=10,
                    dim=32, seed=5),
        split="train",
    )
    model = init_model(default_dims(32), seed=1, dropout_rate=0.2)
    batch = make_batches(corpus, 8, seed=1, epoch=0)[0]
    S = score_matrix(model, batch, mask_seed=1, training=True)
    assert abs(contrastive_loss_of(S) - math.log(8)) < 0.3 * math.log(8)


def test_train_reduces_loss_and_is_deterministic(tiny_corpus):
    cfg = TrainConfig(epochs=15, batch_M=5, seed=7, dims=[8, 8, 4, 2],
                      loss="hard_negative", hard_negative_H=2, lr0=0.01)
    model1, hist1 = train(tiny_corpus, cfg)
    model2, hist2 = train(tiny_corpus, cfg)
    assert hist1 == hist2
    for a, b in zip(model1.params(), model2.params()):
        assert np.array_equal(a.value, b.value)
    assert hist1[-1][1] < hist1[0][1]
    assert len(hist1) == 15


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_aborts_on_non_finite_loss(tiny_corpus):
    from gatsv.numeric import Param

    class ExplodingScorer:
        def __init__(self):
            self.p = Param("p", [[1.0]])

        def params(self):
            return [self.p]

        def pair_value(self, tape, enroll, test, training, mask_rng):
            sign = 1.0 if enroll.utterance_id == test.utterance_id else -1.0
            return tape.scale(tape.param(self.p), sign * 1e308)

    cfg = TrainConfig(epochs=1, batch_M=4, seed=3)
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train_scorer(ExplodingScorer(), tiny_corpus, cfg)


def test_loss_log_format(tmp_path):
    history = [(0, 1.25, 1e-3), (1, 0.75, 5e-4)]
    path = tmp_path / "loss.tsv"
    write_loss_log(history, path)
    lines = path.read_text().splitlines()
    assert lines == ["0\t1.25\t0.001", "1\t0.75\t0.0005"]
    for line in lines:
        assert len(line.split("\t")) == 3
