"""Dual-path graph convolution autoencoder over the bipartite graphs.

Encoder: one shared propagation transform per head applied to node features
(instances and label one-hots embedded in a common padded feature space),
messages weighted by the link weight and, optionally, by masked graph
attention normalized per node per path; per-path sums are averaged over
heads, passed through ReLU, concatenated with a transformed raw-feature
block and projected to the embedding width.

Decoder: bilinear score per discrete likelihood level, softmax across
levels; the refined link weight is the expectation over levels.  Training
minimizes mean cross-entropy against quantized within-group weights; cross
links are decoded but never contribute to the loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import RowIndex, Tensor
from .errors import ConfigError, ParseError, SchemaError, TrainingError
from .graph import DualBipartiteGraph

ATTENTION_SLOPE = 0.2  # LeakyReLU slope in the attention feed-forward

VARIANTS = {
    "full": {},
    "no_cross": {"use_cross_links": False},
    "no_attention": {"use_attention": False},
    "no_dual": {"use_dual_paths": False},
}


@dataclass(frozen=True)
class ModelConfig:
    gcn_hidden: int = 1000
    dense_hidden: int = 100
    num_heads: int = 4
    rating_levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    epochs: int = 1000
    lr: float = 1e-3
    seed: int = 0
    use_cross_links: bool = True
    use_attention: bool = True
    use_dual_paths: bool = True  # off: single within path with uniform averaged weights
    per_path_weights: bool = False  # distinct propagation transform per path per head

    def validate(self):
        if self.gcn_hidden < 1 or self.dense_hidden < 1:
            raise ConfigError("gcn_hidden and dense_hidden must be >= 1")
        if self.num_heads < 1:
            raise ConfigError("num_heads must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        levels = self.rating_levels
        if len(levels) < 2:
            raise ConfigError("rating_levels needs at least two levels")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("rating_levels must be strictly increasing")
        if levels[0] < 0 or levels[-1] > 1:
            raise ConfigError("rating_levels must lie within [0, 1]")

    def with_variant(self, name: str) -> "ModelConfig":
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant '{name}', expected one of {sorted(VARIANTS)}")
        return replace(self, **VARIANTS[name])


@dataclass
class ModelParams:
    """Named trainable tensors plus the dimensions they were built for."""

    tensors: dict[str, Tensor]
    num_heads: int
    feature_dim: int
    num_classes: int
    gcn_hidden: int
    dense_hidden: int
    rating_levels: tuple[float, ...]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def grads(self) -> dict[str, np.ndarray]:
        return {name: ad.grad_or_zeros(t) for name, t in self.tensors.items()}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, feature_dim: int, num_classes: int) -> ModelParams:
    """Seeded uniform Glorot initialization, drawn in a fixed name order."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    F = feature_dim + num_classes
    H, E = config.gcn_hidden, config.dense_hidden
    tensors: dict[str, Tensor] = {}
    for h in range(config.num_heads):
        if config.per_path_weights:
            tensors[f"W.{h}.within"] = ad.parameter(_glorot(rng, F, H))
            tensors[f"W.{h}.cross"] = ad.parameter(_glorot(rng, F, H))
        else:
            tensors[f"W.{h}"] = ad.parameter(_glorot(rng, F, H))
        tensors[f"Wa.{h}"] = ad.parameter(_glorot(rng, F, H))
        tensors[f"a_self.{h}"] = ad.parameter(_glorot(rng, H, 1))
        tensors[f"a_neigh.{h}"] = ad.parameter(_glorot(rng, H, 1))
    tensors["Wf"] = ad.parameter(_glorot(rng, feature_dim, H))
    tensors["Wn"] = ad.parameter(_glorot(rng, num_classes, H))
    tensors["b"] = ad.parameter(_glorot(rng, 1, H))
    tensors["Wu"] = ad.parameter(_glorot(rng, 3 * H, E))
    tensors["Wv"] = ad.parameter(_glorot(rng, 3 * H, E))
    for r in range(len(config.rating_levels)):
        tensors[f"Q.{r}"] = ad.parameter(_glorot(rng, E, E))
    return ModelParams(
        tensors=tensors,
        num_heads=config.num_heads,
        feature_dim=feature_dim,
        num_classes=num_classes,
        gcn_hidden=H,
        dense_hidden=E,
        rating_levels=tuple(config.rating_levels),
    )


def quantize_levels(weights: np.ndarray, levels) -> np.ndarray:
    """Nearest-level index; exact midpoints round to the higher level."""
    levels = np.asarray(levels, dtype=np.float64)
    midpoints = (levels[:-1] + levels[1:]) / 2.0
    return np.searchsorted(midpoints, np.asarray(weights, dtype=np.float64), side="right")


# ---------------------------------------------------------------------------
# graph preparation: constant tensors and cached edge index structures
# ---------------------------------------------------------------------------


@dataclass
class _Path:
    name: str
    src: RowIndex
    dst: RowIndex
    weight: Tensor  # (E2, 1) constant per directed edge


@dataclass
class PreparedGraph:
    node_feats: Tensor
    x: Tensor
    l: Tensor
    inst_rows: RowIndex
    lab_rows: RowIndex
    paths: dict[str, _Path]
    num_nodes: int
    num_instances: int
    decode_src: RowIndex
    decode_dst: RowIndex
    decode_kind: np.ndarray
    num_within: int
    targets: np.ndarray
    loss_weights: np.ndarray


def _directed(inst: np.ndarray, lab: np.ndarray, weight: np.ndarray, offset: int, name: str) -> _Path:
    dst = np.concatenate([inst, lab + offset])
    src = np.concatenate([lab + offset, inst])
    w = np.concatenate([weight, weight]).reshape(-1, 1)
    return _Path(name=name, src=RowIndex(src), dst=RowIndex(dst), weight=ad.constant(w))


def _empty_path(name: str) -> _Path:
    empty = np.zeros(0, dtype=int)
    return _Path(
        name=name, src=RowIndex(empty), dst=RowIndex(empty), weight=ad.constant(np.zeros((0, 1)))
    )


def prepare_graph(graph: DualBipartiteGraph, config: ModelConfig) -> PreparedGraph:
    n, m = graph.num_instances, graph.num_label_nodes
    d, C = graph.feature_dim, graph.num_classes
    feats = np.zeros((n + m, d + C))
    feats[:n, :d] = graph.instance_features
    feats[n:, d:] = graph.label_onehot()

    w = graph.within
    if config.use_dual_paths:
        within_weight = w.weight
    else:
        # Single shared path: every candidate link of an instance gets the
        # uniform averaged weight 1 / (number of its candidate links).
        deg = np.bincount(w.inst, minlength=n).astype(float)
        within_weight = 1.0 / deg[w.inst] if len(w.inst) else np.zeros(0)

    paths = {"within": _directed(w.inst, w.lab, within_weight, n, "within")}
    include_cross = config.use_dual_paths and config.use_cross_links
    if include_cross and len(graph.cross.inst):
        paths["cross"] = _directed(
            graph.cross.inst, graph.cross.lab, graph.cross.weight, n, "cross"
        )
    else:
        paths["cross"] = _empty_path("cross")

    if include_cross:
        decode_src = np.concatenate([w.inst, graph.cross.inst])
        decode_dst = np.concatenate([w.lab, graph.cross.lab])
        decode_kind = np.concatenate(
            [np.full(len(w.inst), "within"), np.full(len(graph.cross.inst), "cross")]
        )
    else:
        decode_src = w.inst.copy()
        decode_dst = w.lab.copy()
        decode_kind = np.full(len(w.inst), "within")

    return PreparedGraph(
        node_feats=ad.constant(feats),
        x=ad.constant(graph.instance_features),
        l=ad.constant(graph.label_onehot()),
        inst_rows=RowIndex(np.arange(n)),
        lab_rows=RowIndex(np.arange(n, n + m)),
        paths=paths,
        num_nodes=n + m,
        num_instances=n,
        decode_src=RowIndex(decode_src),
        decode_dst=RowIndex(decode_dst),
        decode_kind=decode_kind,
        num_within=len(w.inst),
        targets=quantize_levels(within_weight, config.rating_levels),
        loss_weights=within_weight,
    )


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


def attention_coefficients(
    prep: PreparedGraph, params: ModelParams, head: int
) -> dict[str, Tensor]:
    """Per-edge attention, softmax-normalized over each node's neighborhood
    separately per path.  Nodes with no neighbors on a path contribute no
    coefficients (empty, never NaN)."""
    A = ad.matmul(prep.node_feats, params[f"Wa.{head}"])
    s_self = ad.matmul(A, params[f"a_self.{head}"])
    s_neigh = ad.matmul(A, params[f"a_neigh.{head}"])
    coeffs = {}
    for name, path in prep.paths.items():
        if len(path.src) == 0:
            coeffs[name] = ad.constant(np.zeros((0, 1)))
            continue
        e = ad.leaky_relu(
            ad.add(ad.gather_rows(s_self, path.dst), ad.gather_rows(s_neigh, path.src)),
            ATTENTION_SLOPE,
        )
        coeffs[name] = ad.segment_softmax(e, path.dst)
    return coeffs


def propagation_messages(
    prep: PreparedGraph, params: ModelParams, config: ModelConfig, head: int
) -> dict[str, Tensor]:
    """Per-directed-edge messages: (alpha_ij *) w_ij * W feat_src, per path."""
    if not config.per_path_weights:
        shared = ad.matmul(prep.node_feats, params[f"W.{head}"])
    alphas = attention_coefficients(prep, params, head) if config.use_attention else None
    messages = {}
    for name, path in prep.paths.items():
        if len(path.src) == 0:
            messages[name] = ad.constant(np.zeros((0, params.gcn_hidden)))
            continue
        T = (
            ad.matmul(prep.node_feats, params[f"W.{head}.{name}"])
            if config.per_path_weights
            else shared
        )
        coef = ad.mul(alphas[name], path.weight) if alphas is not None else path.weight
        messages[name] = ad.mul(ad.gather_rows(T, path.src), coef)
    return messages


def aggregate_paths(
    prep: PreparedGraph, params: ModelParams, config: ModelConfig
) -> dict[str, Tensor]:
    """Sum messages per node per path, average over heads, apply ReLU."""
    sums: dict[str, Tensor] = {}
    for head in range(config.num_heads):
        messages = propagation_messages(prep, params, config, head)
        for name, path in prep.paths.items():
            if len(path.src) == 0:
                continue
            node_sum = ad.scatter_rows(messages[name], path.dst, prep.num_nodes)
            sums[name] = node_sum if name not in sums else ad.add(sums[name], node_sum)
    hidden = {}
    for name in prep.paths:
        if name in sums:
            hidden[name] = ad.relu(ad.scale(sums[name], 1.0 / config.num_heads))
        else:
            hidden[name] = ad.constant(np.zeros((prep.num_nodes, params.gcn_hidden)))
    return hidden


def encode(prep: PreparedGraph, params: ModelParams, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Instance embeddings U and label embeddings V (width dense_hidden)."""
    hidden = aggregate_paths(prep, params, config)
    f = ad.relu(ad.add(ad.matmul(prep.x, params["Wf"]), params["b"]))
    n = ad.relu(ad.add(ad.matmul(prep.l, params["Wn"]), params["b"]))
    u_in = ad.concat_cols(
        [
            ad.gather_rows(hidden["within"], prep.inst_rows),
            ad.gather_rows(hidden["cross"], prep.inst_rows),
            f,
        ]
    )
    v_in = ad.concat_cols(
        [
            ad.gather_rows(hidden["within"], prep.lab_rows),
            ad.gather_rows(hidden["cross"], prep.lab_rows),
            n,
        ]
    )
    return ad.relu(ad.matmul(u_in, params["Wu"])), ad.relu(ad.matmul(v_in, params["Wv"]))


# ---------------------------------------------------------------------------
# decoder and loss
# ---------------------------------------------------------------------------


def decode_logits(
    U: Tensor, V: Tensor, params: ModelParams, src: RowIndex, dst: RowIndex
) -> Tensor:
    """Bilinear score u^T Q_r v per edge per rating level, shape (E, R)."""
    Ug = ad.gather_rows(U, src)
    Vg = ad.gather_rows(V, dst)
    cols = [
        ad.row_sum(ad.mul(ad.matmul(Ug, params[f"Q.{r}"]), Vg))
        for r in range(len(params.rating_levels))
    ]
    return ad.concat_cols(cols)


def _decode_values(
    U_val: np.ndarray,
    V_val: np.ndarray,
    params: ModelParams,
    src: np.ndarray,
    dst: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Plain-numpy decode: per-edge level distribution and expected weight."""
    levels = np.asarray(params.rating_levels)
    Ug, Vg = U_val[src], V_val[dst]
    logits = np.stack(
        [np.einsum("ek,ek->e", Ug @ params[f"Q.{r}"].value, Vg) for r in range(len(levels))],
        axis=1,
    )
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    m_hat = np.clip(probs @ levels, levels[0], levels[-1])
    return probs, m_hat


@dataclass
class RatingMatrix:
    """Per-edge categorical distribution over rating levels and its mean."""

    src: np.ndarray  # instance row
    dst: np.ndarray  # label row
    kind: np.ndarray  # "within" | "cross"
    levels: np.ndarray
    probs: np.ndarray  # (E, R)
    m_hat: np.ndarray  # (E,)
    num_instances: int

    def __len__(self):
        return len(self.src)


def decode(
    U: np.ndarray,
    V: np.ndarray,
    params: ModelParams,
    src: np.ndarray,
    dst: np.ndarray,
    kind: np.ndarray,
) -> RatingMatrix:
    """Score the given edges with trained embeddings and parameters."""
    probs, m_hat = _decode_values(U, V, params, np.asarray(src), np.asarray(dst))
    return RatingMatrix(
        src=np.asarray(src, dtype=int),
        dst=np.asarray(dst, dtype=int),
        kind=np.asarray(kind),
        levels=np.asarray(params.rating_levels),
        probs=probs,
        m_hat=m_hat,
        num_instances=len(U),
    )


def reconstruction_loss(logits_within: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log probability of the quantized target level over all
    observed within edges."""
    if logits_within.rows == 0:
        raise TrainingError("reconstruction loss needs at least one observed within edge")
    return ad.mean_all(ad.cross_entropy(logits_within, targets))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    ratings: RatingMatrix
    loss_trace: np.ndarray
    prob_sum_err: np.ndarray  # per epoch: max |sum_r p - 1| over decoded edges
    mhat_min: np.ndarray
    mhat_max: np.ndarray
    config: ModelConfig = field(repr=False, default=None)


def train(
    graph: DualBipartiteGraph,
    config: ModelConfig,
    initial_params: ModelParams | None = None,
) -> TrainResult:
    """Full-graph gradient descent with Adam for ``config.epochs`` epochs.

    Deterministic given the config seed; returns final parameters, decoded
    ratings for every within and cross edge, the per-epoch loss trace and
    per-epoch decoder-normalization diagnostics.  Pass ``initial_params``
    (e.g. a loaded checkpoint) to resume training instead of reinitializing.
    """
    from .optim import AdamState, adam_step

    config.validate()
    prep = prepare_graph(graph, config)
    if prep.num_within == 0:
        raise TrainingError("graph has no observed within edges")
    if initial_params is not None:
        params = initial_params
        if params.feature_dim != graph.feature_dim or params.num_classes != graph.num_classes:
            raise TrainingError("checkpoint dimensions do not match the graph")
    else:
        params = init_params(config, graph.feature_dim, graph.num_classes)
    state = AdamState.for_params(params.tensors, lr=config.lr)

    within_src = RowIndex(prep.decode_src.idx[: prep.num_within])
    within_dst = RowIndex(prep.decode_dst.idx[: prep.num_within])

    loss_trace = np.zeros(config.epochs)
    prob_sum_err = np.zeros(config.epochs)
    mhat_min = np.zeros(config.epochs)
    mhat_max = np.zeros(config.epochs)
    last_finite = None
    for epoch in range(config.epochs):
        U, V = encode(prep, params, config)
        logits = decode_logits(U, V, params, within_src, within_dst)
        loss = reconstruction_loss(logits, prep.targets)
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}"
                + (f", last finite loss {last_finite:.6f}" if last_finite is not None else "")
            )
        last_finite = value
        loss_trace[epoch] = value

        probs, m_hat = _decode_values(
            U.value, V.value, params, prep.decode_src.idx, prep.decode_dst.idx
        )
        prob_sum_err[epoch] = float(np.abs(probs.sum(axis=1) - 1.0).max())
        mhat_min[epoch] = float(m_hat.min())
        mhat_max[epoch] = float(m_hat.max())

        ad.backward(loss)
        try:
            adam_step(params.tensors, params.grads(), state)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        ad.zero_grads(params.tensors.values())

    U, V = encode(prep, params, config)
    ratings = decode(
        U.value, V.value, params, prep.decode_src.idx, prep.decode_dst.idx, prep.decode_kind
    )
    return TrainResult(
        params=params,
        ratings=ratings,
        loss_trace=loss_trace,
        prob_sum_err=prob_sum_err,
        mhat_min=mhat_min,
        mhat_max=mhat_max,
        config=config,
    )


# ---------------------------------------------------------------------------
# checkpoint and ratings files
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_params(params: ModelParams, path):
    payload = {
        "version": _CHECKPOINT_VERSION,
        "meta": {
            "num_heads": params.num_heads,
            "feature_dim": params.feature_dim,
            "num_classes": params.num_classes,
            "gcn_hidden": params.gcn_hidden,
            "dense_hidden": params.dense_hidden,
            "rating_levels": list(params.rating_levels),
        },
        "tensors": {
            name: {"shape": list(t.value.shape), "data": t.value.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))


def load_params(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    meta = payload["meta"]
    tensors = {}
    for name, rec in payload["tensors"].items():
        shape = tuple(rec["shape"])
        data = np.asarray(rec["data"], dtype=np.float64)
        if data.size != shape[0] * shape[1]:
            raise SchemaError(f"{path}: tensor '{name}' data does not match shape {shape}")
        tensors[name] = ad.parameter(data.reshape(shape))
    return ModelParams(
        tensors=tensors,
        num_heads=int(meta["num_heads"]),
        feature_dim=int(meta["feature_dim"]),
        num_classes=int(meta["num_classes"]),
        gcn_hidden=int(meta["gcn_hidden"]),
        dense_hidden=int(meta["dense_hidden"]),
        rating_levels=tuple(meta["rating_levels"]),
    )


def save_ratings(ratings: RatingMatrix, path):
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "levels": [float(x) for x in ratings.levels],
            "num_instances": ratings.num_instances,
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        offset = ratings.num_instances
        for k in range(len(ratings.src)):
            rec = {
                "src": int(ratings.src[k]),
                "dst": offset + int(ratings.dst[k]),
                "kind": str(ratings.kind[k]),
                "m_hat": float(ratings.m_hat[k]),
                "p": [float(x) for x in ratings.probs[k]],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_ratings(path) -> RatingMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
        levels = np.asarray(header["levels"], dtype=np.float64)
        offset = int(header["num_instances"])
        src, dst, kind, m_hat, probs = [], [], [], [], []
        for lineno in range(1, len(lines)):
            rec = json.loads(lines[lineno])
            src.append(int(rec["src"]))
            dst.append(int(rec["dst"]) - offset)
            kind.append(str(rec["kind"]))
            m_hat.append(float(rec["m_hat"]))
            probs.append([float(x) for x in rec["p"]])
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc
    n_rows = len(src)
    return RatingMatrix(
        src=np.asarray(src, dtype=int),
        dst=np.asarray(dst, dtype=int),
        kind=np.asarray(kind),
        levels=levels,
        probs=np.asarray(probs, dtype=np.float64).reshape(n_rows, len(levels)),
        m_hat=np.asarray(m_hat, dtype=np.float64),
        num_instances=offset,
    )


def ratings_equal(a: RatingMatrix, b: RatingMatrix) -> bool:
    return (
        a.num_instances == b.num_instances
        and np.array_equal(a.src, b.src)
        and np.array_equal(a.dst, b.dst)
        and np.array_equal(a.kind, b.kind)
        and np.array_equal(a.levels, b.levels)
        and np.array_equal(a.probs, b.probs)
        and np.array_equal(a.m_hat, b.m_hat)
    )
