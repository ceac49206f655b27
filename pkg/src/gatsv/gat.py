"""The graph-attention scorer.

Each layer updates node representations as

    h'_u = relu(Wphi(m_u) + Wpsi(h_u))

where m_u attention-aggregates over all nodes and the attention logit
for a pair (u, v) comes from a one-linear-op map applied to the
elementwise product h_u * h_v: one set of weights (theta1) when u and v
belong to the same utterance, another (theta2) when they do not.  Since
the product commutes and the same branch applies to (u, v) and (v, u),
the logit matrix is bitwise symmetric.  After the last layer each node
is projected to a scalar and the score is the mean over nodes.

Dropout (inverted scaling) is applied to the input node matrix only,
and only when scoring in training mode.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError
from .graph import same_utterance_mask
from .numeric import Param, Tape
from .rng import Xoshiro256StarStar
from .serialize import Reader, write_f64, write_f64s, write_u32

CHECKPOINT_MAGIC = b"GATV1"


@dataclass
class GatLayer:
    w_phi: Param
    b_phi: Param
    w_psi: Param
    b_psi: Param
    w_theta1: Param
    b_theta1: Param
    w_theta2: Param
    b_theta2: Param

    def params(self):
        return [
            self.w_phi,
            self.b_phi,
            self.w_psi,
            self.b_psi,
            self.w_theta1,
            self.b_theta1,
            self.w_theta2,
            self.b_theta2,
        ]


@dataclass
class GatModel:
    layers: list
    w_out: Param
    b_out: Param
    dims: list
    dropout_rate: float

    def params(self):
        """All trainable parameters in checkpoint order."""
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        out.extend([self.w_out, self.b_out])
        return out

    @property
    def num_layers(self):
        return len(self.layers)


@dataclass(frozen=True)
class AttentionMap:
    """One layer's pre-softmax logits and row-stochastic weights."""

    logits: np.ndarray
    alpha: np.ndarray


def default_dims(d):
    """Per-layer widths for a 3-layer model on d-dimensional embeddings."""
    return [d, d, max(d // 2, 1), max(d // 4, 1)]


# -- forward pass (taped) ----------------------------------------------------


def attention_logits(tape, layer, h, same_mask, diff_mask):
    """Pairwise attention logits; theta1 on same-utterance pairs
    (diagonal included), theta2 across utterances."""
    l1 = tape.add_scalarp(
        tape.pair_logits(h, tape.param(layer.w_theta1)), tape.param(layer.b_theta1)
    )
    l2 = tape.add_scalarp(
        tape.pair_logits(h, tape.param(layer.w_theta2)), tape.param(layer.b_theta2)
    )
    return tape.add(tape.mul(l1, same_mask), tape.mul(l2, diff_mask))


def attention_weights(tape, logits):
    """Row-wise softmax over the full node set."""
    return tape.softmax_rows(logits)


def aggregate(tape, alpha, h):
    """m_u = sum_v alpha[u, v] * h_v."""
    return tape.matmul(alpha, h)


def layer_forward(tape, layer, h, same_mask, diff_mask):
    logits = attention_logits(tape, layer, h, same_mask, diff_mask)
    alpha = attention_weights(tape, logits)
    m = aggregate(tape, alpha, h)
    agg = tape.add_rowvec(tape.matmul(m, tape.param(layer.w_phi)), tape.param(layer.b_phi))
    res = tape.add_rowvec(tape.matmul(h, tape.param(layer.w_psi)), tape.param(layer.b_psi))
    return tape.relu(tape.add(agg, res))


def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask: kept entries scaled by 1/(1-rate)."""
    u = rng.uniforms(shape[0] * shape[1]).reshape(shape)
    return np.where(u >= rate, 1.0 / (1.0 - rate), 0.0)


def score_value(tape, model, graph, training=False, mask_rng=None):
    """Taped similarity score (a 1x1 value) for one trial graph."""
    if graph.dim != model.dims[0]:
        raise DimensionError(
            f"graph dim {graph.dim} does not match model input dim {model.dims[0]}"
        )
    h = tape.const(graph.nodes)
    if training and model.dropout_rate > 0.0:
        if mask_rng is None:
            raise ValueError("training-mode scoring requires a mask rng")
        mask = dropout_mask(mask_rng, graph.nodes.shape, model.dropout_rate)
        h = tape.mul(h, tape.const(mask))
    same = same_utterance_mask(graph.membership)
    same_mask = tape.const(same)
    diff_mask = tape.const(1.0 - same)
    for layer in model.layers:
        h = layer_forward(tape, layer, h, same_mask, diff_mask)
    out = tape.add_rowvec(tape.matmul(h, tape.param(model.w_out)), tape.param(model.b_out))
    return tape.mean_all(out)


def score(model, graph, training=False, mask_rng=None, kernels=None):
    """Similarity score as a float.  Deterministic when training=False."""
    tape = Tape(kernels=kernels, record=False)
    return float(score_value(tape, model, graph, training, mask_rng).data[0, 0])


# -- plain-matrix views used for inspection and testing ----------------------


def _masks(membership):
    same = same_utterance_mask(membership)
    return same, 1.0 - same


def attention_logits_matrix(layer, h, membership):
    tape = Tape(record=False)
    same, diff = _masks(membership)
    return attention_logits(
        tape, layer, tape.const(h), tape.const(same), tape.const(diff)
    ).data


def attention_weights_matrix(logits):
    tape = Tape(record=False)
    return attention_weights(tape, tape.const(logits)).data


def aggregate_matrix(alpha, h):
    tape = Tape(record=False)
    return aggregate(tape, tape.const(alpha), tape.const(h)).data


def layer_forward_matrix(layer, h, membership):
    tape = Tape(record=False)
    same, diff = _masks(membership)
    return layer_forward(
        tape, layer, tape.const(h), tape.const(same), tape.const(diff)
    ).data


def attention_map(layer, h, membership):
    logits = attention_logits_matrix(layer, h, membership)
    return AttentionMap(logits=logits, alpha=attention_weights_matrix(logits))


# -- construction and persistence --------------------------------------------


def _glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    u = rng.uniforms(rows * cols).reshape(rows, cols)
    return (2.0 * u - 1.0) * limit


def init_model(dims, seed, dropout_rate=0.2):
    """Fresh model with uniform +-sqrt(6/(fan_in+fan_out)) weights and zero
    biases, reproducible from the seed.

    Weight draw order is fixed: per layer w_phi, w_psi, w_theta1,
    w_theta2 (row-major entries), then w_out.
    """
    if len(dims) < 2:
        raise ValueError("dims needs an input width and at least one layer width")
    if any(d < 1 for d in dims):
        raise ValueError("layer widths must be positive")
    rng = Xoshiro256StarStar(seed)
    layers = []
    for i in range(len(dims) - 1):
        d_in, d_out = dims[i], dims[i + 1]
        layers.append(
            GatLayer(
                w_phi=Param(f"layer{i}.w_phi", _glorot(rng, d_in, d_out)),
                b_phi=Param(f"layer{i}.b_phi", np.zeros((1, d_out))),
                w_psi=Param(f"layer{i}.w_psi", _glorot(rng, d_in, d_out)),
                b_psi=Param(f"layer{i}.b_psi", np.zeros((1, d_out))),
                w_theta1=Param(f"layer{i}.w_theta1", _glorot(rng, d_in, 1)),
                b_theta1=Param(f"layer{i}.b_theta1", np.zeros((1, 1))),
                w_theta2=Param(f"layer{i}.w_theta2", _glorot(rng, d_in, 1)),
                b_theta2=Param(f"layer{i}.b_theta2", np.zeros((1, 1))),
            )
        )
    w_out = Param("w_out", _glorot(rng, dims[-1], 1))
    b_out = Param("b_out", np.zeros((1, 1)))
    return GatModel(
        layers=layers,
        w_out=w_out,
        b_out=b_out,
        dims=list(dims),
        dropout_rate=dropout_rate,
    )


def save_model(model, path):
    """Write a GATV1 checkpoint.

    Layout: magic "GATV1", u32 number of dims, the dims as u32, f64
    dropout rate, u32 parameter count, then per parameter u32 rows, u32
    cols and the row-major f64 values, in ``model.params()`` order.
    Round-trips bit-exactly.
    """
    params = model.params()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        write_u32(f, len(model.dims))
        for d in model.dims:
            write_u32(f, d)
        write_f64(f, model.dropout_rate)
        write_u32(f, len(params))
        for p in params:
            write_u32(f, p.value.shape[0])
            write_u32(f, p.value.shape[1])
            write_f64s(f, p.value)


def load_model(path):
    """Read a GATV1 checkpoint written by :func:`save_model`."""
    with open(path, "rb") as f:
        r = Reader(f)
        r.magic(CHECKPOINT_MAGIC)
        ndims = r.u32("dims count")
        if ndims < 2:
            raise FormatError(f"checkpoint has {ndims} dims, need at least 2")
        dims = [r.u32(f"dim {i}") for i in range(ndims)]
        dropout = r.f64("dropout rate")
        nparams = r.u32("parameter count")
        expected = 8 * (ndims - 1) + 2
        if nparams != expected:
            raise FormatError(
                f"checkpoint has {nparams} parameters, expected {expected} for {ndims - 1} layers"
            )
        model = init_model(dims, seed=0, dropout_rate=dropout)
        for p in model.params():
            rows = r.u32(f"{p.name} rows")
            cols = r.u32(f"{p.name} cols")
            if (rows, cols) != p.value.shape:
                raise FormatError(
                    f"parameter {p.name} has shape ({rows}, {cols}), "
                    f"expected {p.value.shape}"
                )
            p.value[:] = r.f64s(rows * cols, f"{p.name} values").reshape(rows, cols)
        r.expect_eof()
    return model
