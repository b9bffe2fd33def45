"""Graph-based relational module: star topologies and stacked graph attention."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, InvariantError

VARIANTS = ("separate", "fused", "inv", "cd", "dc", "single")
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GraphTopology:
    variant: str
    labels: tuple[tuple[str, str], ...]  # (modality, category) per node
    adjacency: np.ndarray  # adjacency[u, v] is True when v -> u

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    def neighborhood(self, u: int) -> list[int]:
        """In-neighbours of ``u``, self first, then by node index."""
        others = [v for v in np.flatnonzero(self.adjacency[u]) if v != u]
        return [u, *others]

    def edges(self) -> list[tuple[int, int]]:
        """Directed (sender, receiver) pairs grouped by receiver."""
        return [(v, u) for u in range(self.n_nodes) for v in self.neighborhood(u)]

    def reachability(self, hops: int = 2) -> np.ndarray:
        """``R[u, v]`` is True when v reaches u in at most ``hops`` steps."""
        a = self.adjacency.astype(np.int64)
        r = np.eye(self.n_nodes, dtype=np.int64)
        for _ in range(hops):
            r = np.minimum(1, r + a @ r)
        return r.astype(bool)

    def node(self, modality: str, category: str) -> int:
        return self.labels.index((modality, category))

    def name(self, u: int) -> str:
        return "_".join(reversed(self.labels[u]))


def _star(adj: np.ndarray, offset: int, n_cat: int) -> None:
    for j in range(1, n_cat):
        adj[offset + j, offset] = True
        adj[offset, offset + j] = True


def build_topology(variant: str, categories: Sequence[str]) -> GraphTopology:
    """Adjacency for one of the GRM variants.

    The first category is the star centre. Dual-modality variants order
    nodes as all dermoscopy categories then all clinical categories.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown GRM variant {variant!r}; choose from {VARIANTS}")
    n = len(categories)
    if variant in ("fused", "single"):
        tag = "F" if variant == "fused" else "D"
        adj = np.eye(n, dtype=bool)
        _star(adj, 0, n)
        return GraphTopology(variant, tuple((tag, c) for c in categories), adj)
    adj = np.eye(2 * n, dtype=bool)
    _star(adj, 0, n)
    _star(adj, n, n)
    for j in range(n):
        if variant in ("dc", "inv"):
            adj[n + j, j] = True  # D_j -> C_j
        if variant in ("cd", "inv"):
            adj[j, n + j] = True  # C_j -> D_j
    labels = tuple(("D", c) for c in categories) + tuple(("C", c) for c in categories)
    return GraphTopology(variant, labels, adj)


@dataclass
class GatLayerParams:
    """Per-head projection ``W[m]`` (F' x F) and attention vector ``a[m]`` (2F')."""

    W: list[Tensor]
    a: list[Tensor]

    @property
    def heads(self) -> int:
        return len(self.W)

    @property
    def width(self) -> int:
        return self.W[0].shape[0]

    @property
    def in_dim(self) -> int:
        return self.W[0].shape[1]


def gat_layer(h: Tensor, layer: GatLayerParams, topology: GraphTopology,
              return_attention: bool = False):
    """One multi-head graph attention layer with head concatenation.

    Args:
        h: node features of shape (B, N, F) or (N, F).
        layer: parameters for every head.
        topology: neighbourhoods; all logits come from the layer input
            (synchronous update).

    Returns:
        Node features (B, N, M*F'), and the attention tensor
        (B, M, N, N) when ``return_attention`` is set.
    """
    h = ad.as_tensor(h)
    squeeze = h.ndim == 2
    if squeeze:
        h = ad.reshape(h, (1, *h.shape))
    b, n, f = h.shape
    if n != topology.n_nodes or f != layer.in_dim:
        raise DimensionError(
            f"gat_layer: node features {h.shape[1:]} vs {topology.n_nodes} nodes x {layer.in_dim}")
    assert topology.adjacency.any(axis=1).all()
    W = ad.stack(layer.W)  # (M, F', F)
    a = ad.stack(layer.a)  # (M, 2F')
    fp = layer.width
    z = ad.einsum("bnf,mgf->bmng", h, W)
    s_recv = ad.einsum("bmng,mg->bmn", z, a[:, :fp])
    s_send = ad.einsum("bmng,mg->bmn", z, a[:, fp:])
    logits = ad.add(ad.reshape(s_recv, (b, layer.heads, n, 1)),
                    ad.reshape(s_send, (b, layer.heads, 1, n)))
    alpha = ad.softmax(ad.leaky_relu(logits, LEAKY_SLOPE), axis=-1, mask=topology.adjacency)
    agg = ad.elu(ad.einsum("bmuv,bmvg->bumg", alpha, z))
    out = ad.reshape(agg, (b, n, layer.heads * fp))
    if squeeze:
        out = ad.reshape(out, (n, layer.heads * fp))
    return (out, alpha) if return_attention else out


def gat_attention(h, layer: GatLayerParams, head: int, topology: GraphTopology) -> np.ndarray:
    """Attention matrix for one head: ``alpha[u, v]`` for edge v -> u, zero elsewhere."""
    _, alpha = gat_layer(ad.Tensor(np.asarray(ad.as_tensor(h).data)), layer, topology,
                         return_attention=True)
    return alpha.data[0, head]


def grm_forward(nodes: Tensor, layers: Sequence[GatLayerParams], topology: GraphTopology,
                return_attention: bool = False):
    """Apply the stacked GAT layers over one topology.

    ``nodes`` holds the per-node input features, (B, N, F). Returns the
    final node features and, optionally, each layer's attention tensor.
    """
    atts = []
    x = nodes
    for layer in layers:
        x, att = gat_layer(x, layer, topology, return_attention=True)
        atts.append(att)
    return (x, atts) if return_attention else x


def attention_rows(attentions: Sequence[Tensor], topology: GraphTopology, example: int = 0):
    """Flatten attention tensors into (layer, head, receiver, sender, coefficient) rows."""
    rows = []
    for li, att in enumerate(attentions, start=1):
        a = att.data[example]
        for m in range(a.shape[0]):
            for u in range(topology.n_nodes):
                nb = topology.neighborhood(u)
                total = a[m, u, nb].sum()
                if abs(total - 1.0) > 1e-9:
                    raise InvariantError(
                        f"attention at layer {li} head {m} node {topology.name(u)} sums to {total}")
                for v in nb:
                    rows.append((li, m, topology.name(u), topology.name(v), float(a[m, u, v])))
    return rows


def attention_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "head", "receiver", "sender", "coefficient"])
    for layer, head, recv, send, coef in rows:
        w.writerow([layer, head, recv, send, repr(coef)])
    return buf.getvalue()
