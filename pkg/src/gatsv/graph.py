"""Segment-wise embeddings and the trial graph built from two utterances.

A trial graph stacks the enrollment utterance's segment embeddings on
top of the test utterance's and tags each node with the utterance it
came from.  No edge list is stored: every node attends to every node
(self included), so downstream attention is computed dense n x n.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numeric import as_matrix

ENROLL = 0
TEST = 1


@dataclass(frozen=True)
class UtteranceSSEs:
    """An utterance's ordered bag of segment embeddings (S x d)."""

    utterance_id: str
    segments: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "segments", as_matrix(self.segments))

    @property
    def num_segments(self):
        return self.segments.shape[0]

    @property
    def dim(self):
        return self.segments.shape[1]


@dataclass(frozen=True)
class TrialGraph:
    """Node matrix (n x d) plus per-node utterance membership tags."""

    nodes: np.ndarray
    membership: np.ndarray  # int8, ENROLL or TEST per node

    def __post_init__(self):
        if len(self.membership) != self.nodes.shape[0]:
            raise DimensionError("one membership tag per node required")
        if not (set(np.unique(self.membership)) == {ENROLL, TEST}):
            raise DimensionError("a trial graph needs nodes from both utterances")

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def dim(self):
        return self.nodes.shape[1]


def average_enrollment(utterances):
    """Element-wise average of several utterances' segment embeddings.

    Segment j of the output is the mean over utterances of their segment
    j (index-aligned averaging); a single utterance passes through
    unchanged.  All inputs must share segment count and dimension.
    """
    if not utterances:
        raise ValueError("average_enrollment needs at least one utterance")
    first = utterances[0]
    if len(utterances) == 1:
        return first
    for u in utterances[1:]:
        if u.segments.shape != first.segments.shape:
            raise DimensionError(
                f"utterance {u.utterance_id!r} has segments {u.segments.shape}, "
                f"expected {first.segments.shape}"
            )
    stacked = np.stack([u.segments for u in utterances])
    joined = "+".join(u.utterance_id for u in utterances)
    return UtteranceSSEs(joined, stacked.mean(axis=0))


def build_trial_graph(enroll, test):
    """Form the dense trial graph from an enrollment and a test utterance.

    Nodes are the enrollment segments followed by the test segments,
    values copied verbatim (no normalization).
    """
    if enroll.dim != test.dim:
        raise DimensionError(
            f"embedding dims differ: enroll {enroll.dim}, test {test.dim}"
        )
    nodes = np.concatenate([enroll.segments, test.segments], axis=0)
    membership = np.concatenate(
        [
            np.full(enroll.num_segments, ENROLL, dtype=np.int8),
            np.full(test.num_segments, TEST, dtype=np.int8),
        ]
    )
    return TrialGraph(nodes=nodes, membership=membership)


def same_utterance_mask(membership):
    """0/1 matrix: entry (u, v) is 1 iff nodes u and v share an utterance.

    Symmetric with an all-ones diagonal (a node shares its own utterance).
    """
    m = np.asarray(membership)
    return (m[:, None] == m[None, :]).astype(np.float64)
