"""Multi-scale reconstruction heads and the per-node reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamRegistry, Tensor
from .encoder import init_transformer_params, transformer_layer
from .graph import VAR_FLOOR, Graph, NeighborhoodTable


@dataclass
class ReconOutput:
    x_hat: Tensor
    a_hat: Tensor
    c_hat: Tensor  # n x 1
    eps_hat: Tensor
    log_omega_hat: Tensor

    @property
    def omega_hat(self) -> np.ndarray:
        return np.exp(self.log_omega_hat.data)


@dataclass
class PerNodeLosses:
    l_s: Tensor
    l_a: Tensor
    l_n: Tensor
    l_m: Tensor
    l_p: Tensor

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k).data.copy() for k in ("l_s", "l_a", "l_n", "l_m", "l_p")}


def init_decoder_params(reg: ParamRegistry, d_out: int, d_h: int, heads: int, ffn_mult: int = 2,
                        prefix: str = "dec"):
    reg.weight(f"{prefix}.attr.in.w", 2 * d_h, d_h)
    reg.zeros(f"{prefix}.attr.in.b", d_h)
    init_transformer_params(reg, f"{prefix}.attr.tf", d_h, heads, ffn_mult)
    reg.weight(f"{prefix}.attr.out.w", d_h, d_out)
    reg.zeros(f"{prefix}.attr.out.b", d_out)
    for head, width in (("count", 1), ("mean", d_out), ("logvar", d_out)):
        reg.weight(f"{prefix}.{head}.w1", 2 * d_h, d_h)
        reg.zeros(f"{prefix}.{head}.b1", d_h)
        reg.weight(f"{prefix}.{head}.w2", d_h, width)
        reg.zeros(f"{prefix}.{head}.b2", width)


def decode_attributes(h_bar: Tensor, reg: ParamRegistry, heads: int, prefix: str = "dec") -> Tensor:
    h = h_bar @ reg[f"{prefix}.attr.in.w"] + reg[f"{prefix}.attr.in.b"]
    h = transformer_layer(h, reg, f"{prefix}.attr.tf", heads)
    return h @ reg[f"{prefix}.attr.out.w"] + reg[f"{prefix}.attr.out.b"]


def predict_edges(h_bar: Tensor) -> Tensor:
    return ad.sigmoid(h_bar @ ad.transpose(h_bar))


def _ffn(x: Tensor, reg: ParamRegistry, name: str) -> Tensor:
    hidden = ad.relu(x @ reg[f"{name}.w1"] + reg[f"{name}.b1"])
    return hidden @ reg[f"{name}.w2"] + reg[f"{name}.b2"]


def decode_neighborhood(h_bar: Tensor, reg: ParamRegistry, prefix: str = "dec"):
    """Return ``(c_hat, eps_hat, log_omega_hat)``; the predicted variances are
    ``exp(log_omega_hat)``."""
    return (_ffn(h_bar, reg, f"{prefix}.count"),
            _ffn(h_bar, reg, f"{prefix}.mean"),
            _ffn(h_bar, reg, f"{prefix}.logvar"))


def decode(h_bar: Tensor, reg: ParamRegistry, heads: int, prefix: str = "dec") -> ReconOutput:
    c_hat, eps_hat, log_omega = decode_neighborhood(h_bar, reg, prefix)
    return ReconOutput(
        x_hat=decode_attributes(h_bar, reg, heads, prefix),
        a_hat=predict_edges(h_bar),
        c_hat=c_hat,
        eps_hat=eps_hat,
        log_omega_hat=log_omega,
    )


def kl_diag_gaussian(mean1, var1, mean2, var2):
    """KL(N(mean1, diag var1) || N(mean2, diag var2)), summed over the last axis."""
    mean1, var1, mean2, var2 = (np.asarray(v, dtype=np.float64) for v in (mean1, var1, mean2, var2))
    if np.any(var1 <= 0) or np.any(var2 <= 0):
        raise ValueError("variances must be strictly positive")
    return 0.5 * np.sum(np.log(var2 / var1) + (var1 + (mean1 - mean2) ** 2) / var2 - 1.0, axis=-1)


def _kl_to_predicted(mean1: np.ndarray, var1: np.ndarray, mean2: Tensor, log_var2: Tensor) -> Tensor:
    """Row-wise KL with a constant first argument and a predicted (log-variance) second one."""
    inv_var2 = ad.exp(-log_var2)
    diff = ad.square(mean2 - Tensor(mean1))
    terms = log_var2 - Tensor(np.log(var1)) + (diff + Tensor(var1)) * inv_var2 - 1.0
    return ad.sum(terms, axis=1) * 0.5


DIST_EPS = 1e-12


def distance(sq: Tensor, kind: str) -> Tensor:
    """Turn a row-wise squared distance into the configured distance."""
    if kind == "squared":
        return sq
    if kind == "euclidean":
        return ad.sqrt(sq, DIST_EPS)
    raise ValueError(f"unknown distance {kind!r}")


def reconstruction_losses(g: Graph, recon: ReconOutput, stats: NeighborhoodTable,
                          dist: str = "squared") -> tuple[Tensor, Tensor, Tensor]:
    """Per-node edge, attribute and neighborhood losses ``(l_s, l_a, l_n)``.

    The edge loss skips the diagonal. Empirical variances are floored at
    ``VAR_FLOOR`` before the KL so zero-variance dimensions stay finite. Nodes
    without neighbors contribute only the count term.
    """
    n = g.n
    off_diag = 1.0 - np.eye(n)
    l_s = distance(ad.sum(ad.square((Tensor(g.adjacency) - recon.a_hat) * off_diag), axis=1), dist)
    l_a = distance(ad.sum(ad.square(Tensor(g.features) - recon.x_hat), axis=1), dist)

    var1 = np.maximum(stats.var, VAR_FLOOR)
    kl = _kl_to_predicted(stats.mean, var1, recon.eps_hat, recon.log_omega_hat)
    kl = kl * (~stats.degenerate).astype(np.float64)
    count = distance(ad.sum(ad.square(Tensor(stats.count[:, None]) - recon.c_hat), axis=1), dist)
    return l_s, l_a, kl + count
