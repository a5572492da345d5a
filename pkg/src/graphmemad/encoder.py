"""Local-global node encoder: per-node k-hop GCN, Laplacian position fusion,
and pre-LN Transformer blocks with dense (all-pairs) attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ParamRegistry, Tensor
from .errors import ConfigError
from .graph import Graph, LaplacianBundle, extract_k_hop_subgraph


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 2
    d_h: int = 128
    heads: int = 4
    layers: int = 1
    ffn_mult: int = 2
    dropout: float = 0.0  # hook only; dropout is not applied

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.heads < 1 or self.d_h % self.heads:
            raise ConfigError(f"d_h={self.d_h} is not divisible by heads={self.heads}")


@dataclass
class NodeEmbeddings:
    h_sub: Tensor
    h_pos: Tensor
    alpha: Tensor
    h_fused: Tensor
    h_a: Tensor


# ---------------------------------------------------------------- structure extractor


@dataclass(frozen=True, eq=False)
class SubgraphOperator:
    """Stacked k-hop subgraphs of every node as constant sparse operators.

    ``first`` maps node features to the first propagated layer input
    (``P @ G``), ``prop`` is the block-diagonal normalized adjacency, and
    ``root`` picks each subgraph's root row after the final propagation
    (``R @ P``).
    """

    first: sp.csr_matrix
    prop: sp.csr_matrix
    root: sp.csr_matrix
    first_root: sp.csr_matrix  # R @ P @ G, used when k == 1
    sizes: np.ndarray


def _gcn_norm(sub_adj: np.ndarray) -> np.ndarray:
    a = sub_adj + np.eye(sub_adj.shape[0])
    inv = 1.0 / np.sqrt(a.sum(axis=1))
    return inv[:, None] * a * inv[None, :]


def build_subgraph_operator(g: Graph, k: int) -> SubgraphOperator:
    blocks, gather_cols, roots = [], [], []
    offset = 0
    for v in range(g.n):
        nodes, sub = extract_k_hop_subgraph(g, v, k)
        blocks.append(sp.csr_matrix(_gcn_norm(sub)))
        gather_cols.extend(nodes)
        roots.append(offset)
        offset += len(nodes)
    total = offset
    prop = sp.block_diag(blocks, format="csr")
    gather = sp.csr_matrix((np.ones(total), (np.arange(total), gather_cols)), shape=(total, g.n))
    root = sp.csr_matrix((np.ones(g.n), (np.arange(g.n), roots)), shape=(g.n, total))
    return SubgraphOperator(
        first=(prop @ gather).tocsr(),
        prop=prop,
        root=(root @ prop).tocsr(),
        first_root=(root @ prop @ gather).tocsr(),
        sizes=np.array([b.shape[0] for b in blocks]),
    )


def init_encoder_params(reg: ParamRegistry, d_in: int, cfg: EncoderConfig, prefix: str = "enc"):
    widths = [d_in] + [cfg.d_h] * cfg.k
    for layer in range(cfg.k):
        reg.weight(f"{prefix}.gcn{layer}.w", widths[layer], widths[layer + 1])
    reg.weight(f"{prefix}.fuse.w", 2 * cfg.d_h, 1)
    for layer in range(cfg.layers):
        init_transformer_params(reg, f"{prefix}.tf{layer}", cfg.d_h, cfg.heads, cfg.ffn_mult,
                                depth=cfg.layers)


def structure_extract(features: np.ndarray, op: SubgraphOperator, reg: ParamRegistry,
                      k: int, prefix: str = "enc") -> Tensor:
    """k GCN layers on every node's own k-hop subgraph; returns the root rows.

    ReLU sits between layers, not after the last one.
    """
    if k == 1:
        return ad.spmm(op.first_root, Tensor(features)) @ reg[f"{prefix}.gcn0.w"]
    z = Tensor(np.asarray(op.first @ features)) @ reg[f"{prefix}.gcn0.w"]
    for layer in range(1, k):
        z = ad.relu(z)
        prop = op.root if layer == k - 1 else op.prop
        z = ad.spmm(prop, z) @ reg[f"{prefix}.gcn{layer}.w"]
    return z


def fuse(h_pos: Tensor, h_sub: Tensor, w_a: Tensor) -> tuple[Tensor, Tensor]:
    alpha = ad.sigmoid(ad.concat([h_pos, h_sub]) @ w_a)
    h = alpha * h_pos + (1.0 - alpha) * h_sub
    return alpha, h


# ---------------------------------------------------------------- transformer


def init_transformer_params(reg: ParamRegistry, prefix: str, d_h: int, heads: int, ffn_mult: int = 2,
                            depth: int = 1):
    """Register one pre-LN layer. Residual output projections are shrunk by 1/sqrt(2*depth)."""
    d_k = d_h // heads
    residual_scale = 1.0 / np.sqrt(2 * depth)
    reg.ones(f"{prefix}.ln1.g", d_h)
    reg.zeros(f"{prefix}.ln1.b", d_h)
    for h in range(heads):
        reg.weight(f"{prefix}.attn.q{h}", d_h, d_k)
        reg.weight(f"{prefix}.attn.k{h}", d_h, d_k)
        reg.weight(f"{prefix}.attn.v{h}", d_h, d_k)
    reg.weight(f"{prefix}.attn.o", d_h, d_h).data *= residual_scale
    reg.ones(f"{prefix}.ln2.g", d_h)
    reg.zeros(f"{prefix}.ln2.b", d_h)
    reg.weight(f"{prefix}.ffn.w1", d_h, ffn_mult * d_h)
    reg.zeros(f"{prefix}.ffn.b1", ffn_mult * d_h)
    reg.weight(f"{prefix}.ffn.w2", ffn_mult * d_h, d_h).data *= residual_scale
    reg.zeros(f"{prefix}.ffn.b2", d_h)


def attention_weights(x: Tensor, wq: Tensor, wk: Tensor) -> Tensor:
    d_k = wq.shape[1]
    scores = (x @ wq) @ ad.transpose(x @ wk)
    return ad.row_softmax(scores * (1.0 / np.sqrt(d_k)))


def multi_head_attention(x: Tensor, reg: ParamRegistry, prefix: str, heads: int) -> Tensor:
    outs = []
    for h in range(heads):
        attn = attention_weights(x, reg[f"{prefix}.attn.q{h}"], reg[f"{prefix}.attn.k{h}"])
        outs.append(attn @ (x @ reg[f"{prefix}.attn.v{h}"]))
    merged = outs[0] if heads == 1 else ad.concat(outs)
    return merged @ reg[f"{prefix}.attn.o"]


def transformer_layer(h: Tensor, reg: ParamRegistry, prefix: str, heads: int) -> Tensor:
    ln1 = ad.layer_norm(h) * reg[f"{prefix}.ln1.g"] + reg[f"{prefix}.ln1.b"]
    h1 = multi_head_attention(ln1, reg, prefix, heads) + h
    ln2 = ad.layer_norm(h1) * reg[f"{prefix}.ln2.g"] + reg[f"{prefix}.ln2.b"]
    hidden = ad.relu(ln2 @ reg[f"{prefix}.ffn.w1"] + reg[f"{prefix}.ffn.b1"])
    return hidden @ reg[f"{prefix}.ffn.w2"] + reg[f"{prefix}.ffn.b2"] + h1


# ---------------------------------------------------------------- full encoder


def encode(g: Graph, bundle: LaplacianBundle, cfg: EncoderConfig, reg: ParamRegistry,
           op: SubgraphOperator | None = None, use_structure: bool = True,
           prefix: str = "enc") -> NodeEmbeddings:
    """Run the whole encoder. ``use_structure=False`` replaces the fused input with
    the positional encodings alone (the structure-extractor ablation)."""
    if bundle.pe.shape != (g.n, cfg.d_h):
        raise ConfigError(f"positional encodings have shape {bundle.pe.shape}, expected {(g.n, cfg.d_h)}")
    h_pos = Tensor(bundle.pe)
    if use_structure:
        if op is None:
            op = build_subgraph_operator(g, cfg.k)
        h_sub = structure_extract(g.features, op, reg, cfg.k, prefix)
        alpha, h = fuse(h_pos, h_sub, reg[f"{prefix}.fuse.w"])
    else:
        h_sub = Tensor(np.zeros((g.n, cfg.d_h)))
        alpha = Tensor(np.ones((g.n, 1)))
        h = h_pos
    h_fused = h
    for layer in range(cfg.layers):
        h = transformer_layer(h, reg, f"{prefix}.tf{layer}", cfg.heads)
    return NodeEmbeddings(h_sub=h_sub, h_pos=h_pos, alpha=alpha, h_fused=h_fused, h_a=h)
