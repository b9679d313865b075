"""Multimodal temporal graph attention network.

Pipeline for one sample::

    build_graph -> project_nodes -> L x mtgat_layer (attention + pruning)
                -> mean over surviving nodes -> MLP head

Parameters live in a flat ``dict`` of named float64 arrays so they can be
put on a :class:`~mtgat.autodiff.Tape`, serialized, and updated by the
optimizer without any wrapper classes.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from . import autodiff as ad
from .graphbuild import N_PHI, N_TAU, MultimodalGraph, Temporal, build_graph, positional_table
from .seqdata import MODALITIES, Modality, MultimodalSample, Task

EDGE_TYPE_MODES = {"full27": N_PHI * N_TAU, "modality_only9": N_PHI, "temporal_only3": N_TAU, "untyped1": 1}
PRUNING_MODES = ("topk", "random", "none")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 64
    heads: int = 4
    layers: int = 6
    keep_percent: float = 80.0
    leaky_slope: float = 0.2
    input_dims: tuple = (74, 35, 300)  # audio, video, text
    head_hidden: int = 64  # 0 means a single affine map
    task: Task = Task()
    edge_type_mode: str = "full27"
    pruning_mode: str = "topk"
    enabled_modalities: tuple = ("audio", "video", "text")
    drop_future_edges: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        mods = tuple(sorted({Modality.parse(m) for m in self.enabled_modalities}))
        object.__setattr__(self, "enabled_modalities", tuple(m.key for m in mods))
        if isinstance(self.task, (str, dict)):
            object.__setattr__(self, "task", Task.from_json(self.task))
        self.validate()

    def validate(self) -> None:
        if self.d_emb < 2 or self.d_emb % 2:
            raise ConfigError("d_emb must be an even integer >= 2")
        if self.heads < 1 or self.d_emb % self.heads:
            raise ConfigError("heads must divide d_emb")
        if self.layers < 1:
            raise ConfigError("need at least one layer")
        if not 0 < self.keep_percent <= 100:
            raise ConfigError("keep_percent must lie in (0, 100]")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError("leaky_slope must lie in (0, 1)")
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ConfigError("input_dims needs three positive sizes (audio, video, text)")
        if self.head_hidden < 0:
            raise ConfigError("head_hidden must be >= 0")
        if self.edge_type_mode not in EDGE_TYPE_MODES:
            raise ConfigError(f"edge_type_mode must be one of {sorted(EDGE_TYPE_MODES)}")
        if self.pruning_mode not in PRUNING_MODES:
            raise ConfigError(f"pruning_mode must be one of {PRUNING_MODES}")
        if not self.enabled_modalities:
            raise ConfigError("at least one modality must be enabled")

    @property
    def d_head(self) -> int:
        return self.d_emb // self.heads

    @property
    def n_edge_types(self) -> int:
        return EDGE_TYPE_MODES[self.edge_type_mode]

    @property
    def modalities(self) -> tuple:
        return tuple(Modality.parse(m) for m in self.enabled_modalities)

    def to_json(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.to_json()
        d["input_dims"] = list(self.input_dims)
        d["enabled_modalities"] = list(self.enabled_modalities)
        return d

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**dict(obj))

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


# -- parameters -------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict:
    """Ordered name -> shape map; the order fixes the initialization stream."""
    d, dh = config.d_emb, config.d_head
    shapes = {}
    for m in config.modalities:
        shapes[f"ffn.{m.key}.W"] = (config.input_dims[m], d)
        shapes[f"ffn.{m.key}.b"] = (1, d)
    for layer in range(config.layers):
        for m in config.modalities:
            shapes[f"layer{layer}.M.{m.key}"] = (d, d)
        for h in range(config.heads):
            shapes[f"layer{layer}.attn.h{h}"] = (config.n_edge_types, 2 * dh)
    out = config.task.output_dim
    if config.head_hidden:
        shapes["head.W1"] = (d, config.head_hidden)
        shapes["head.b1"] = (1, config.head_hidden)
        shapes["head.W2"] = (config.head_hidden, out)
        shapes["head.b2"] = (1, out)
    else:
        shapes["head.W"] = (d, out)
        shapes["head.b"] = (1, out)
    return shapes


def init_bound(name: str, shape: tuple, config: ModelConfig) -> float:
    if ".attn." in name:
        return math.sqrt(6.0 / (2 * config.d_head + 1))
    return math.sqrt(6.0 / (shape[0] + shape[1]))


def init_params(config: ModelConfig, seed: int) -> dict:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith((".b", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            s = init_bound(name, shape, config)
            params[name] = rng.uniform(-s, s, size=shape)
    return params


def param_breakdown(config: ModelConfig) -> dict:
    d, H, L = config.d_emb, config.heads, config.layers
    mods = config.modalities
    ffn = sum(config.input_dims[m] * d + d for m in mods)
    transforms = L * len(mods) * d * d
    attention = L * config.n_edge_types * H * 2 * config.d_head
    out = config.task.output_dim
    if config.head_hidden:
        head = d * config.head_hidden + config.head_hidden + config.head_hidden * out + out
    else:
        head = d * out + out
    return {"ffn": ffn, "node_transforms": transforms, "attention": attention, "head": head}


def param_count(config: ModelConfig) -> int:
    return sum(param_breakdown(config).values())


# -- forward pass -----------------------------------------------------------

@dataclass(frozen=True)
class EdgeSet:
    src: np.ndarray
    dst: np.ndarray
    phi: np.ndarray
    tau: np.ndarray

    @classmethod
    def from_graph(cls, g: MultimodalGraph) -> "EdgeSet":
        return cls(g.src, g.dst, g.phi, g.tau)

    def __len__(self):
        return int(self.src.shape[0])

    def subset(self, mask_or_index) -> "EdgeSet":
        return EdgeSet(self.src[mask_or_index], self.dst[mask_or_index],
                       self.phi[mask_or_index], self.tau[mask_or_index])


@dataclass
class LayerAttention:
    """Attention over the edges a layer consumed, plus which survived it."""

    edges: EdgeSet
    alpha: np.ndarray  # (E, H)
    alpha_avg: np.ndarray  # (E,)
    kept: np.ndarray  # (E,) bool

    @property
    def surviving(self) -> EdgeSet:
        return self.edges.subset(self.kept)


@dataclass
class ForwardOutput:
    prediction: np.ndarray
    attention: list  # LayerAttention per layer
    surviving_nodes: np.ndarray
    graph: MultimodalGraph
    output: Optional[ad.Tensor] = field(default=None, repr=False)
    tape: Optional[ad.Tape] = field(default=None, repr=False)


def edge_type_index(edges: EdgeSet, mode: str) -> np.ndarray:
    phi = edges.phi.astype(np.intp)
    tau = edges.tau.astype(np.intp)
    if mode == "full27":
        return phi * N_TAU + tau
    if mode == "modality_only9":
        return phi
    if mode == "temporal_only3":
        return tau
    if mode == "untyped1":
        return np.zeros_like(phi)
    raise ConfigError(f"unknown edge_type_mode {mode!r}")


def n_pruned(n_edges: int, keep_percent: float) -> int:
    # rounding guards against 0.2 * 10 landing on 1.9999...
    return int(math.floor(round((100.0 - keep_percent) * n_edges / 100.0, 9)))


def topk_prune_mask(alpha_avg: np.ndarray, edges: EdgeSet, n_nodes: int, n_delete: int) -> np.ndarray:
    """Drop the ``n_delete`` edges with smallest averaged attention.

    Ties go by ``(dst, src)``: among equal weights the higher-ordered edge
    is deleted first.
    """
    rank = edges.dst.astype(np.int64) * n_nodes + edges.src
    order = np.lexsort((-rank, alpha_avg))
    kept = np.ones(len(alpha_avg), dtype=bool)
    kept[order[:n_delete]] = False
    return kept


def prune_rng(seed: int, sample_id: str, layer: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(sample_id.encode("utf-8")), int(layer)])


def raw_attention(x_i, x_j, a, slope: float = 0.2) -> float:
    """``leaky_relu(a . [x_i || x_j])`` for one edge and head; ``x_i`` is the target."""
    x_i, x_j, a = (np.asarray(v, dtype=np.float64).ravel() for v in (x_i, x_j, a))
    if x_i.shape != x_j.shape or a.shape[0] != 2 * x_i.shape[0]:
        raise ad.ShapeError("raw_attention: need len(a) == 2 * len(x_i) == 2 * len(x_j)")
    s = float(a @ np.concatenate([x_i, x_j]))
    return s if s > 0 else slope * s


def _t(tensors: Mapping, name: str):
    return tensors[name]


def project_nodes(tensors: Mapping, sample: MultimodalSample, config: ModelConfig) -> ad.Tensor:
    """FFN per modality, then the sinusoidal position of each row is added."""
    blocks = []
    for m in config.modalities:
        x = sample.sequences[m]
        if x.shape[1] != config.input_dims[m]:
            raise ConfigError(f"{m.key} input dim {x.shape[1]} != configured {config.input_dims[m]}")
        h = ad.add_row(ad.matmul(x, _t(tensors, f"ffn.{m.key}.W")), _t(tensors, f"ffn.{m.key}.b"))
        blocks.append(ad.add(h, positional_table(np.arange(x.shape[0]), config.d_emb)))
    return blocks[0] if len(blocks) == 1 else ad.concat_rows(blocks)


def mtgat_layer(graph: MultimodalGraph, edges: EdgeSet, feats: ad.Tensor, tensors: Mapping,
                layer: int, config: ModelConfig, rng: Optional[np.random.Generator] = None):
    """One attention layer followed by pruning.

    Returns ``(new_feats, LayerAttention)``; nodes without incoming edges get
    zero rows.
    """
    n = graph.n_nodes
    parts = []
    for m in config.modalities:
        sl = graph.block(m)
        rows = feats if len(config.modalities) == 1 else ad.gather_rows(feats, np.arange(sl.start, sl.stop))
        parts.append(ad.matmul(rows, _t(tensors, f"layer{layer}.M.{m.key}")))
    xp = parts[0] if len(parts) == 1 else ad.concat_rows(parts)

    # a . [x_i || x_j] = a_dst . x_i + a_src . x_j; both halves are first
    # projected per node and edge type (n x T per head), then picked per
    # edge.  Heads run side by side as columns.
    dst = edges.dst.astype(np.intp)
    src = edges.src.astype(np.intp)
    types = edge_type_index(edges, config.edge_type_mode)
    dh, H, T = config.d_head, config.heads, config.n_edge_types
    proj_dst, proj_src = [], []
    for h in range(H):
        xh = ad.slice_cols(xp, h * dh, (h + 1) * dh) if H > 1 else xp
        a = _t(tensors, f"layer{layer}.attn.h{h}")
        proj_dst.append(ad.matmul(xh, ad.transpose(ad.slice_cols(a, 0, dh))))
        proj_src.append(ad.matmul(xh, ad.transpose(ad.slice_cols(a, dh, 2 * dh))))
    if H > 1:
        proj_dst, proj_src = ad.concat_cols(proj_dst), ad.concat_cols(proj_src)
    else:
        proj_dst, proj_src = proj_dst[0], proj_src[0]
    cols = types[:, None] + T * np.arange(H)[None, :]  # (E, H)
    score = ad.add(ad.gather_elements(proj_dst, np.broadcast_to(dst[:, None], cols.shape), cols),
                   ad.gather_elements(proj_src, np.broadcast_to(src[:, None], cols.shape), cols))
    beta = ad.leaky_relu(score, config.leaky_slope)
    alpha_t = ad.segment_softmax(beta, dst, n)
    z = ad.segment_weighted_sum(alpha_t, ad.gather_rows(xp, src), dst, n)

    alpha = alpha_t.data
    alpha_avg = alpha.mean(axis=1)
    n_delete = 0 if config.pruning_mode == "none" else n_pruned(len(edges), config.keep_percent)
    if config.pruning_mode == "topk":
        kept = topk_prune_mask(alpha_avg, edges, n, n_delete)
    elif config.pruning_mode == "random" and n_delete:
        if rng is None:
            raise ValueError("random pruning needs a random stream")
        kept = np.ones(len(edges), dtype=bool)
        kept[rng.choice(len(edges), size=n_delete, replace=False)] = False
    else:
        kept = np.ones(len(edges), dtype=bool)
    return z, LayerAttention(edges, alpha, alpha_avg, kept)


def initial_edges(graph: MultimodalGraph, config: ModelConfig) -> EdgeSet:
    edges = EdgeSet.from_graph(graph)
    if config.drop_future_edges:
        edges = edges.subset(edges.tau != Temporal.FUTURE)
    return edges


def surviving_nodes(edges: EdgeSet, n_nodes: int) -> np.ndarray:
    """Ids of nodes with at least one incoming edge."""
    return np.flatnonzero(np.bincount(edges.dst.astype(np.intp), minlength=n_nodes) > 0)


def readout_and_head(z: ad.Tensor, nodes: np.ndarray, tensors: Mapping, config: ModelConfig) -> ad.Tensor:
    if nodes.size == 0:
        raise ad.ShapeError("empty readout: no node kept an incoming edge")
    r = ad.mean_rows(ad.gather_rows(z, nodes))
    if config.head_hidden:
        hidden = ad.leaky_relu(ad.add_row(ad.matmul(r, _t(tensors, "head.W1")), _t(tensors, "head.b1")),
                               config.leaky_slope)
        return ad.add_row(ad.matmul(hidden, _t(tensors, "head.W2")), _t(tensors, "head.b2"))
    return ad.add_row(ad.matmul(r, _t(tensors, "head.W")), _t(tensors, "head.b"))


def forward_tensors(tensors: Mapping, sample: MultimodalSample, config: ModelConfig, seed: int = 0,
                    graph: Optional[MultimodalGraph] = None, edges: Optional[EdgeSet] = None):
    """Forward pass on caller-supplied tensors (arrays or tape leaves).

    Returns ``(output tensor, [LayerAttention], surviving node ids, graph)``.
    """
    if graph is None:
        graph = build_graph(sample, config.modalities)
    if edges is None:
        edges = initial_edges(graph, config)
    feats = project_nodes(tensors, sample, config)
    records = []
    for layer in range(config.layers):
        rng = prune_rng(seed, sample.id, layer) if config.pruning_mode == "random" else None
        feats, rec = mtgat_layer(graph, edges, feats, tensors, layer, config, rng)
        records.append(rec)
        edges = rec.surviving
    nodes = surviving_nodes(edges, graph.n_nodes)
    return readout_and_head(feats, nodes, tensors, config), records, nodes, graph


def forward(params: Mapping, sample: MultimodalSample, config: ModelConfig, mode: str = "eval",
            seed: int = 0) -> ForwardOutput:
    """Run one sample.  In ``train`` mode the parameters are tape leaves and
    the returned output carries the tape for :func:`autodiff.backward`."""
    if mode == "train":
        tape = ad.Tape()
        tensors = {k: tape.param(v, k) for k, v in params.items()}
    elif mode == "eval":
        tape, tensors = None, params
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out, records, nodes, graph = forward_tensors(tensors, sample, config, seed)
    return ForwardOutput(out.data[0].copy(), records, nodes, graph, out, tape)
