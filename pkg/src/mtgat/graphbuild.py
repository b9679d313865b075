"""Turn a multimodal sample into a directed, typed, fully connected graph.

Every time step of every modality becomes a node.  Every ordered node pair
(self-loops included) becomes an edge labelled with

* ``phi`` -- the (source modality, target modality) pair, 9 values, and
* ``tau`` -- whether the source lies in the past, present or future of the
  target, 3 values.

Cross-modal ``tau`` needs a notion of simultaneity between unaligned
streams.  :func:`pseudo_align` supplies it by treating the shorter sequence
as buckets and sliding a conv1d-style window over the longer one.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .seqdata import MODALITIES, Modality, MultimodalSample


class Temporal(enum.IntEnum):
    PAST = 0
    PRESENT = 1
    FUTURE = 2

    @property
    def label(self) -> str:
        return self.name.lower()


N_PHI = 9
N_TAU = 3


def phi_index(src: Modality, dst: Modality) -> int:
    return 3 * int(src) + int(dst)


def phi_label(phi: int) -> str:
    return f"{Modality(phi // 3).code}-{Modality(phi % 3).code}"


PHI_LABELS = tuple(phi_label(p) for p in range(N_PHI))


def positional_embedding(pos: int, d_emb: int) -> np.ndarray:
    """Sinusoidal embedding with sin on even and cos on odd entries."""
    return positional_table(np.array([pos]), d_emb)[0]


def positional_table(positions, d_emb: int) -> np.ndarray:
    if d_emb < 2 or d_emb % 2:
        raise ValueError(f"embedding size must be an even integer >= 2, got {d_emb}")
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    if np.any(pos < 0):
        raise ValueError("positions must be non-negative")
    freq = 10000.0 ** (-np.arange(0, d_emb, 2, dtype=np.float64) / d_emb)
    out = np.empty((pos.shape[0], d_emb))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq)
    return out


@dataclass(frozen=True)
class AlignmentPlan:
    """Windows of the long sequence (length ``M``), one per bucket of the
    short sequence (length ``N``)."""

    M: int
    N: int
    stride: int
    width: int
    windows: tuple  # N half-open (start, end) intervals over range(M)

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "N": self.N,
            "stride": self.stride,
            "width": self.width,
            "windows": [list(w) for w in self.windows],
        }


@lru_cache(maxsize=None)
def pseudo_align(M: int, N: int) -> AlignmentPlan:
    if N < 1 or M < 1:
        raise ValueError("sequence lengths must be >= 1")
    if N > M:
        raise ValueError(f"bucket sequence longer than windowed sequence ({N} > {M}); swap the pair")
    if N == 1:
        return AlignmentPlan(M, N, 1, M, ((0, M),))
    if 2 * N <= M:
        stride = math.ceil((1 + M // (N - 1)) / 2)
        width = M - (N - 1) * stride
        # a kernel narrower than the stride would leave positions in no
        # bucket; those join the preceding window
        span = max(width, stride)
        windows = tuple((i * stride, min(i * stride + span, M)) for i in range(N))
        return AlignmentPlan(M, N, stride, width, windows)
    # width-2 windows first, width-1 windows on the tail
    n_wide = M - N
    windows = [(2 * i, 2 * i + 2) for i in range(n_wide)]
    windows += [(2 * n_wide + j, 2 * n_wide + j + 1) for j in range(2 * N - M)]
    return AlignmentPlan(M, N, 2, 2, tuple(windows))


class Node(NamedTuple):
    id: int
    modality: Modality
    position: int


class Edge(NamedTuple):
    src: int
    dst: int
    phi: int
    tau: Temporal


@dataclass(frozen=True, eq=False)
class PairAlignment:
    long: Modality
    short: Modality
    plan: AlignmentPlan

    def to_json(self) -> dict:
        return {"long": self.long.key, "short": self.short.key, **self.plan.to_json()}


def pair_alignment(a: Modality, len_a: int, b: Modality, len_b: int) -> PairAlignment:
    # the shorter sequence is the bucket sequence; equal lengths align 1:1
    if len_a >= len_b:
        return PairAlignment(a, b, pseudo_align(len_a, len_b))
    return PairAlignment(b, a, pseudo_align(len_b, len_a))


def relation_block(src_mod: Modality, n_src: int, dst_mod: Modality, n_dst: int,
                   alignment: Optional[PairAlignment]) -> np.ndarray:
    """Temporal type of every edge from a ``src_mod`` node to a ``dst_mod``
    node, as an ``(n_dst, n_src)`` array of :class:`Temporal` codes."""
    if src_mod == dst_mod:
        s = np.arange(n_src)[None, :]
        d = np.arange(n_dst)[:, None]
        return np.where(s < d, Temporal.PAST, np.where(s > d, Temporal.FUTURE, Temporal.PRESENT)).astype(np.int8)
    plan = alignment.plan
    starts = np.array([w[0] for w in plan.windows])[:, None]
    ends = np.array([w[1] for w in plan.windows])[:, None]
    x = np.arange(plan.M)[None, :]
    # order[b, x]: -1 long node x precedes bucket b, 0 inside window, +1 after
    order = np.where(x < starts, -1, np.where(x >= ends, 1, 0))
    if src_mod == alignment.long:
        src_vs_dst = order  # (n_dst buckets, n_src long nodes)
    else:
        src_vs_dst = -order.T  # (n_dst long nodes, n_src buckets)
    return np.where(src_vs_dst < 0, Temporal.PAST,
                    np.where(src_vs_dst > 0, Temporal.FUTURE, Temporal.PRESENT)).astype(np.int8)


def temporal_type(src: Node, dst: Node, alignments: dict) -> Temporal:
    if src.modality == dst.modality:
        if src.position < dst.position:
            return Temporal.PAST
        return Temporal.FUTURE if src.position > dst.position else Temporal.PRESENT
    al = alignments[pair_key(src.modality, dst.modality)]
    if src.modality == al.long:
        x, b = src.position, dst.position
    else:
        x, b = dst.position, src.position
    start, end = al.plan.windows[b]
    if start <= x < end:
        return Temporal.PRESENT
    long_later = x >= end
    src_later = long_later if src.modality == al.long else not long_later
    return Temporal.FUTURE if src_later else Temporal.PAST


def pair_key(a: Modality, b: Modality) -> tuple:
    return (min(a, b), max(a, b))


@dataclass(frozen=True, eq=False)
class MultimodalGraph:
    """Nodes are numbered audio block, then video, then text.  Edge arrays
    are sorted by ``(dst, src)``."""

    lengths: dict  # Modality -> length, enabled modalities only
    node_modality: np.ndarray
    node_position: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    alignments: dict  # (Modality, Modality) -> PairAlignment

    @property
    def n_nodes(self) -> int:
        return int(self.node_modality.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def modalities(self) -> tuple:
        return tuple(self.lengths)

    def block(self, m: Modality) -> slice:
        offset = 0
        for mod, n in self.lengths.items():
            if mod == m:
                return slice(offset, offset + n)
            offset += n
        raise KeyError(m)

    def nodes(self) -> list:
        return [Node(i, Modality(int(m)), int(p))
                for i, (m, p) in enumerate(zip(self.node_modality, self.node_position))]

    def edges(self) -> list:
        return [Edge(int(s), int(d), int(p), Temporal(int(t)))
                for s, d, p, t in zip(self.src, self.dst, self.phi, self.tau)]

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n.id, "modality": n.modality.key, "position": n.position} for n in self.nodes()],
            "edges": [{"src": int(s), "dst": int(d), "phi": PHI_LABELS[p], "tau": Temporal(int(t)).label}
                      for s, d, p, t in zip(self.src, self.dst, self.phi, self.tau)],
            "alignments": {f"{a.key}-{b.key}": al.to_json() for (a, b), al in self.alignments.items()},
        }


def build_graph(sample: MultimodalSample, modalities: Optional[Iterable] = None) -> MultimodalGraph:
    lengths = sample.lengths()
    return graph_from_lengths(lengths, None if modalities is None else tuple(modalities))


@lru_cache(maxsize=4096)
def graph_from_lengths(lengths: Sequence[int], modalities: Optional[tuple] = None) -> MultimodalGraph:
    """Graph structure only depends on sequence lengths, so it is cached."""
    mods = MODALITIES if modalities is None else tuple(sorted(Modality.parse(m) for m in set(modalities)))
    if not mods:
        raise ValueError("at least one modality must be enabled")
    lens = {m: int(lengths[m]) for m in mods}
    if any(n < 1 for n in lens.values()):
        raise ValueError("every enabled modality needs at least one time step")

    alignments = {}
    for i, a in enumerate(mods):
        for b in mods[i + 1:]:
            alignments[(a, b)] = pair_alignment(a, lens[a], b, lens[b])

    node_mod = np.concatenate([np.full(lens[m], int(m), dtype=np.int8) for m in mods])
    node_pos = np.concatenate([np.arange(lens[m]) for m in mods])
    n = node_mod.shape[0]
    tau_full = np.empty((n, n), dtype=np.int8)  # [dst, src]
    offsets = np.cumsum([0] + [lens[m] for m in mods])
    for qi, q in enumerate(mods):
        for pi, p in enumerate(mods):
            al = None if p == q else alignments[pair_key(p, q)]
            tau_full[offsets[qi]:offsets[qi + 1], offsets[pi]:offsets[pi + 1]] = \
                relation_block(p, lens[p], q, lens[q], al)

    dst, src = np.divmod(np.arange(n * n), n)
    phi = (3 * node_mod[src].astype(np.int64) + node_mod[dst]).astype(np.int8)
    g = MultimodalGraph(lens, node_mod, node_pos, src, dst, phi, tau_full[dst, src], alignments)
    for arr in (g.node_modality, g.node_position, g.src, g.dst, g.phi, g.tau):
        arr.setflags(write=False)
    return g
