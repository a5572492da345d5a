"""Training loop, loss/score assembly, AUC and the experiment drivers."""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Adam, ParamRegistry, Tensor
from .config import RunConfig
from .decoder import PerNodeLosses, decode, init_decoder_params, reconstruction_losses
from .encoder import SubgraphOperator, build_subgraph_operator, encode, init_encoder_params
from .errors import DataError, DivergenceError, UnsupportedReportError
from .graph import (Graph, LaplacianBundle, NeighborhoodTable, build_laplacian_bundle,
                    cached_laplacian_bundle, generate_sbm, inject_anomalies, load_graph,
                    neighborhood_table)
from .memory import MemoryBank, select_pseudo_normal

log = logging.getLogger(__name__)

LOSS_NAMES = ("l_s", "l_a", "l_n", "l_m", "l_p")


# ---------------------------------------------------------------- assembly


def total_loss(losses, lambdas):
    """Weighted sum over nodes of all five loss components.

    Works on :class:`PerNodeLosses` of tensors (training) or a mapping of
    arrays (recomputation from stored vectors); both take the same
    arithmetic path, so the results agree bit for bit.
    """
    lam_s, lam_n, lam_m = lambdas
    get = (lambda k: getattr(losses, k)) if isinstance(losses, PerNodeLosses) else losses.__getitem__
    per_node = (get("l_s") + get("l_a")) * lam_s + get("l_n") * lam_n + (get("l_m") + get("l_p")) * lam_m
    return ad.sum(per_node) if isinstance(per_node, Tensor) else np.sum(per_node)


def anomaly_scores(losses, lambdas) -> np.ndarray:
    """Score = lambda_s (l_s + l_a) + lambda_n l_n + lambda_m l_m. The separateness term is not scored."""
    lam_s, lam_n, lam_m = lambdas
    arr = losses.arrays() if isinstance(losses, PerNodeLosses) else losses
    return (np.asarray(arr["l_s"]) + np.asarray(arr["l_a"])) * lam_s \
        + np.asarray(arr["l_n"]) * lam_n + np.asarray(arr["l_m"]) * lam_m


def auc(scores, labels) -> float:
    """Probability that an anomaly outscores a normal node, ties counting half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def overlap_coefficient(scores, labels, bins: int = 20) -> float:
    """Shared mass of the normal and anomalous histograms of min-max normalized scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    span = scores.max() - scores.min()
    norm = (scores - scores.min()) / span if span > 0 else np.zeros_like(scores)
    edges = np.linspace(0.0, 1.0, bins + 1)
    p, _ = np.histogram(norm[labels], bins=edges)
    q, _ = np.histogram(norm[~labels], bins=edges)
    return float(np.minimum(p / p.sum(), q / q.sum()).sum())


# ---------------------------------------------------------------- model state


@dataclass
class GraphContext:
    """Everything derived from the graph alone, computed once before training."""

    graph: Graph
    bundle: LaplacianBundle
    subgraphs: SubgraphOperator
    stats: NeighborhoodTable

    @classmethod
    def build(cls, g: Graph, cfg: RunConfig) -> "GraphContext":
        if cfg.cache_dir:
            bundle = cached_laplacian_bundle(g, cfg.d_h, cfg.cache_dir)
        else:
            bundle = build_laplacian_bundle(g, cfg.d_h)
        return cls(g, bundle, build_subgraph_operator(g, cfg.k), neighborhood_table(g))


@dataclass
class Model:
    cfg: RunConfig
    params: ParamRegistry
    memory: MemoryBank | None

    @classmethod
    def init(cls, cfg: RunConfig, d_in: int) -> "Model":
        reg = ParamRegistry(np.random.default_rng(cfg.seed))
        init_encoder_params(reg, d_in, cfg.encoder)
        init_decoder_params(reg, d_in, cfg.d_h, cfg.heads)
        memory = None if cfg.no_memory else MemoryBank.random(
            cfg.m, cfg.d_h, np.random.default_rng([cfg.seed, 1]),
            similarity=cfg.memory_similarity, unit_queries=cfg.unit_queries)
        return cls(cfg, reg, memory)


@dataclass
class ForwardPass:
    losses: PerNodeLosses
    h_a: Tensor
    recon_error: np.ndarray


def forward(model: Model, ctx: GraphContext) -> ForwardPass:
    cfg = model.cfg
    g = ctx.graph
    emb = encode(g, ctx.bundle, cfg.encoder, model.params, op=ctx.subgraphs,
                 use_structure=not cfg.no_structure_extractor)
    h_a = emb.h_a
    if model.memory is None:
        h_bar = ad.concat([h_a, h_a])
        l_m = l_p = Tensor(np.zeros(g.n))
    else:
        h_bar = model.memory.read(h_a).h_bar
        l_m, l_p = model.memory.losses(h_a, cfg.beta, cfg.distance)
    recon = decode(h_bar, model.params, cfg.heads)
    l_s, l_a, l_n = reconstruction_losses(g, recon, ctx.stats, cfg.distance)
    losses = PerNodeLosses(l_s, l_a, l_n, l_m, l_p)
    return ForwardPass(losses, h_a, l_s.data + l_a.data + l_n.data)


# ---------------------------------------------------------------- training


@dataclass
class ScoreReport:
    losses: dict[str, np.ndarray]
    scores: np.ndarray
    labels: np.ndarray | None
    auc: float | None
    final_loss: float
    loss_curve: list[float]
    config: dict
    wall_time: float
    auc_curve: list[tuple[int, float]] = field(default_factory=list)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n = self.scores.shape[0]
        labels = self.labels if self.labels is not None else np.full(n, -1)
        with open(out / "scores.csv", "w") as fh:
            fh.write("node_id,l_s,l_a,l_n,l_m,score,label\n")
            for i in range(n):
                row = [self.losses[k][i] for k in ("l_s", "l_a", "l_n", "l_m")] + [self.scores[i]]
                fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + f",{int(labels[i])}\n")
        with open(out / "loss_curve.csv", "w") as fh:
            fh.write("epoch,loss\n")
            for e, v in enumerate(self.loss_curve):
                fh.write(f"{e},{v!r}\n")
        summary = {"auc": self.auc, "final_loss": self.final_loss, "wall_time": self.wall_time,
                   "auc_curve": self.auc_curve, "config": self.config}
        (out / "metrics.json").write_text(json.dumps(summary, indent=2))


def load_dataset(cfg: RunConfig) -> Graph:
    if cfg.synthetic:
        s = cfg.sbm_spec()
        g = generate_sbm(s.blocks, s.per_block, s.p_in, s.p_out, s.d, s.seed, s.mean_scale, s.noise)
        if cfg.inject_cliques > 0:
            g = inject_anomalies(g, cfg.injection_spec())
        return g
    try:
        return load_graph(cfg.nodes, cfg.edges, cfg.labels)
    except OSError as exc:
        raise DataError(str(exc)) from exc


def score_model(model: Model, ctx: GraphContext) -> tuple[ForwardPass, np.ndarray]:
    fp = forward(model, ctx)
    return fp, anomaly_scores(fp.losses, model.cfg.lambdas)


def train(cfg: RunConfig, graph: Graph | None = None, ctx: GraphContext | None = None,
          ) -> tuple[Model, ScoreReport]:
    """Full-batch transductive training; returns the final model and its scores.

    Each epoch: forward on the whole graph, backward on the total loss, one
    Adam step, then a memory write from the pseudo-normal nodes of that
    forward pass (all nodes in epoch 0).
    """
    start = time.perf_counter()
    if ctx is None:
        ctx = GraphContext.build(graph if graph is not None else load_dataset(cfg), cfg)
    g = ctx.graph
    model = Model.init(cfg, g.d)
    opt = Adam(model.params, lr=cfg.lr)
    curve: list[float] = []
    auc_curve: list[tuple[int, float]] = []

    last_finite = None  # parameters of the latest epoch whose loss was finite
    for epoch in range(cfg.epochs):
        snapshot = model.params.state()
        fp = forward(model, ctx)
        loss = total_loss(fp.losses, cfg.lambdas)
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", last_state=last_finite,
                                  epoch=epoch - 1)
        last_finite = snapshot
        curve.append(loss.item())
        model.params.zero_grad()
        loss.backward()
        opt.step()
        if model.memory is not None:
            ratio = 1.0 if epoch == 0 else cfg.ratio
            chosen = select_pseudo_normal(fp.recon_error, ratio)
            if chosen.size:
                model.memory.update(fp.h_a.data, chosen)
        if cfg.score_every and g.labels is not None and (epoch + 1) % cfg.score_every == 0:
            auc_curve.append((epoch, auc(anomaly_scores(fp.losses, cfg.lambdas), g.labels)))
        log.debug("epoch %d loss %.6f", epoch, curve[-1])

    fp, scores = score_model(model, ctx)
    final = total_loss(fp.losses.arrays(), cfg.lambdas)
    if not np.isfinite(final):
        raise DivergenceError("non-finite loss after the final epoch", last_state=last_finite,
                              epoch=cfg.epochs - 1)
    report = ScoreReport(
        losses=fp.losses.arrays(),
        scores=scores,
        labels=None if g.labels is None else np.asarray(g.labels),
        auc=None if g.labels is None or len(set(g.labels.tolist())) < 2 else auc(scores, g.labels),
        final_loss=float(final),
        loss_curve=curve,
        config=cfg.to_dict(),
        wall_time=time.perf_counter() - start,
        auc_curve=auc_curve,
    )
    return model, report


# ---------------------------------------------------------------- checkpoints


def save_model(model: Model, path) -> None:
    extra = {} if model.memory is None else {"memory.items": model.memory.items}
    ad.save_checkpoint(path, model.params, extra=extra, meta=json.dumps(model.cfg.to_dict()))


def load_model(path, d_in: int | None = None) -> Model:
    params, extras, meta = ad.load_checkpoint(path)
    cfg = RunConfig(**json.loads(meta))
    if d_in is None:
        d_in = params["dec.attr.out.b"].shape[0]
    model = Model.init(cfg, d_in)
    model.params.load_state(params)
    if model.memory is not None:
        model.memory.items = extras["memory.items"]
    return model


# ---------------------------------------------------------------- experiments


def report_similarity(model: Model, ctx: GraphContext) -> dict[str, np.ndarray]:
    """Per-node max cosine similarity between the node embedding and any memory item."""
    if model.memory is None:
        raise UnsupportedReportError("model was trained without memory; no similarity report")
    emb = encode(ctx.graph, ctx.bundle, model.cfg.encoder, model.params, op=ctx.subgraphs,
                 use_structure=not model.cfg.no_structure_extractor)
    labels = ctx.graph.labels if ctx.graph.labels is not None else np.full(ctx.graph.n, -1)
    return {"node_id": np.arange(ctx.graph.n), "max_cosine": model.memory.max_cosine(emb.h_a.data),
            "label": np.asarray(labels)}


def sweep(cfg: RunConfig, lambda_s, lambda_n, lambda_m, ctx: GraphContext | None = None) -> list[dict]:
    """Train one model per (lambda_s, lambda_n, lambda_m) triple with the same seed.

    A cell that fails records ``auc=nan`` and the error message.
    """
    grid = list(itertools.product(lambda_s, lambda_n, lambda_m))
    if not grid:
        raise ValueError("empty sweep grid")
    if ctx is None:
        ctx = GraphContext.build(load_dataset(cfg), cfg)
    rows = []
    for ls, ln, lm in grid:
        row = {"lambda_s": ls, "lambda_n": ln, "lambda_m": lm, "auc": float("nan"), "error": ""}
        try:
            _, report = train(cfg.replace(lambda_s=ls, lambda_n=ln, lambda_m=lm), ctx=ctx)
            row["auc"] = float("nan") if report.auc is None else report.auc
        except Exception as exc:  # noqa: BLE001 - failures are reported per cell
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


ABLATIONS = {
    "full": {},
    "no_memory": {"no_memory": True},
    "no_structure_extractor": {"no_structure_extractor": True},
}


def ablate(cfg: RunConfig, seeds, variants=tuple(ABLATIONS), ctx: GraphContext | None = None) -> list[dict]:
    if ctx is None:
        ctx = GraphContext.build(load_dataset(cfg), cfg)
    rows = []
    for variant in variants:
        for seed in seeds:
            _, report = train(cfg.replace(seed=seed, **ABLATIONS[variant]), ctx=ctx)
            rows.append({"variant": variant, "seed": seed, "auc": report.auc,
                         "overlap": overlap_coefficient(report.scores, report.labels)})
    return rows
