"""Command-line entry point: ``graphmemad <subcommand> [--config FILE] [--field value ...]``.

Every run-configuration field is also a flag (``d_h`` -> ``--d-h``). Values from
``--config`` are applied first and flags override them.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig, coerce, read_config_file, write_config_file
from .errors import ConfigError, DataError, DivergenceError, UnsupportedReportError
from .graph import generate_sbm, inject_anomalies, load_graph, save_graph
from .trainer import (ABLATIONS, GraphContext, ScoreReport, ablate, auc, load_dataset, load_model,
                      overlap_coefficient, report_similarity, save_model, score_model, sweep,
                      total_loss, train)

log = logging.getLogger("graphmemad")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
CHECKPOINT = "model.npz"
DATA_FIELDS = ("nodes", "edges", "labels") + tuple(
    f.name for f in fields(RunConfig) if f.name.startswith(("sbm_", "inject_")))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with any run-configuration fields")
    group = p.add_argument_group("run configuration (overrides --config)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        aliases = [flag, "--out"] if f.name == "output_dir" else [flag]
        if f.type.startswith("bool"):
            group.add_argument(*aliases, dest=f.name, nargs="?", const="true", default=None,
                               metavar="BOOL")
        else:
            group.add_argument(*aliases, dest=f.name, default=None, metavar=f.name.upper())


def _explicit_values(args) -> dict:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = coerce(f.name, raw)
    return values


def _config(args) -> RunConfig:
    try:
        return RunConfig(**_explicit_values(args))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _seed_list(text: str) -> list[int]:
    """``"0-4"`` or ``"0,3,7"``."""
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(cfg, out / "config.ini")
    try:
        model, report = train(cfg)
    except DivergenceError as exc:
        if exc.last_state is not None:
            reg = ad.ParamRegistry()
            for name, value in exc.last_state.items():
                reg.register(name, value)
            ad.save_checkpoint(out / "last_finite.npz", reg,
                               meta=json.dumps({**cfg.to_dict(), "epoch": exc.epoch}))
        raise
    report.write(out)
    save_model(model, out / CHECKPOINT)
    print(json.dumps({"auc": report.auc, "final_loss": report.final_loss, "output_dir": str(out)}))
    return EXIT_OK


def _model_and_context(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    model = load_model(args.checkpoint)
    data = {k: v for k, v in _explicit_values(args).items() if k in DATA_FIELDS}
    cfg = model.cfg.replace(**data)
    model.cfg = cfg
    g = load_dataset(cfg)
    if g.d != model.params["dec.attr.out.b"].shape[0]:
        raise DataError(f"graph has {g.d} features, checkpoint expects "
                        f"{model.params['dec.attr.out.b'].shape[0]}")
    return model, GraphContext.build(g, cfg)


def cmd_score(args) -> int:
    model, ctx = _model_and_context(args)
    fp, scores = score_model(model, ctx)
    labels = ctx.graph.labels
    arrays = fp.losses.arrays()
    report = ScoreReport(
        losses=arrays, scores=scores, labels=labels,
        auc=None if labels is None or len(set(labels.tolist())) < 2 else auc(scores, labels),
        final_loss=float(total_loss(arrays, model.cfg.lambdas)), loss_curve=[],
        config=model.cfg.to_dict(), wall_time=0.0)
    out = Path(args.output_dir or "runs/score")
    report.write(out)
    print(json.dumps({"auc": report.auc, "output_dir": str(out)}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = sweep(cfg, _float_list(args.lambda_s_grid), _float_list(args.lambda_n_grid),
                 _float_list(args.lambda_m_grid))
    path = Path(cfg.output_dir) / "sweep.csv"
    _write_rows(path, rows)
    for r in rows:
        print(f"lambda_s={r['lambda_s']:g} lambda_n={r['lambda_n']:g} lambda_m={r['lambda_m']:g} "
              f"auc={r['auc']:.4f}{'  ' + r['error'] if r['error'] else ''}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = set(variants) - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablation variant(s): {sorted(unknown)}")
    rows = ablate(cfg, _seed_list(args.seeds), variants)
    _write_rows(Path(cfg.output_dir) / "ablation.csv", rows)
    for v in variants:
        sel = [r for r in rows if r["variant"] == v]
        print(f"{v}: mean auc {np.mean([r['auc'] for r in sel]):.4f}  "
              f"mean overlap {np.mean([r['overlap'] for r in sel]):.4f}")
    return EXIT_OK


def cmd_inject(args) -> int:
    cfg = _config(args)
    if cfg.synthetic:
        raise ConfigError("inject needs --nodes and --edges")
    try:
        g = load_graph(cfg.nodes, cfg.edges)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    _save(inject_anomalies(g, cfg.injection_spec()), Path(cfg.output_dir))
    return EXIT_OK


def cmd_gen_sbm(args) -> int:
    cfg = _config(args)
    s = cfg.sbm_spec()
    g = generate_sbm(s.blocks, s.per_block, s.p_in, s.p_out, s.d, s.seed, s.mean_scale, s.noise)
    if cfg.inject_cliques > 0:
        g = inject_anomalies(g, cfg.injection_spec())
    _save(g, Path(cfg.output_dir))
    return EXIT_OK


def _save(g, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    labels = out / "labels.csv" if g.labels is not None else None
    save_graph(g, out / "nodes.csv", out / "edges.csv", labels)
    print(json.dumps({"n": g.n, "edges": g.num_edges, "d": g.d,
                      "anomalies": None if g.labels is None else int(g.labels.sum()),
                      "output_dir": str(out)}))


def cmd_report_similarity(args) -> int:
    model, ctx = _model_and_context(args)
    table = report_similarity(model, ctx)
    rows = [{"node_id": int(i), "max_cosine": float(c), "label": int(y)}
            for i, c, y in zip(table["node_id"], table["max_cosine"], table["label"])]
    out = Path(args.output_dir or "runs/similarity")
    _write_rows(out / "similarity.csv", rows)
    labels = table["label"]
    if np.any(labels == 1) and np.any(labels == 0):
        sims = table["max_cosine"]
        print(json.dumps({"normal_mean": float(sims[labels == 0].mean()),
                          "anomalous_mean": float(sims[labels == 1].mean())}))
    return EXIT_OK


def cmd_eval_auc(args) -> int:
    try:
        with open(args.scores) as fh:
            rows = list(csv.DictReader(fh))
        scores = np.array([float(r["score"]) for r in rows])
        if args.labels:
            labels = np.array([int(line.split(",")[0]) for line in Path(args.labels).read_text().split()])
        else:
            labels = np.array([int(r["label"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read scores/labels: {exc}") from exc
    if labels.shape != scores.shape:
        raise DataError(f"{labels.size} labels for {scores.size} scores")
    try:
        value = auc(scores, labels)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    print(json.dumps({"auc": value, "overlap": overlap_coefficient(scores, labels)}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphmemad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            _add_config_flags(p)
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train on a graph and write scores, metrics and a checkpoint")
    p = add("score", cmd_score, "score a graph with a saved checkpoint")
    p.add_argument("--checkpoint")
    p = add("sweep", cmd_sweep, "grid over the loss weights")
    p.add_argument("--lambda-s-grid", default="1.0")
    p.add_argument("--lambda-n-grid", default="0.001,0.01,0.1")
    p.add_argument("--lambda-m-grid", default="0.001,0.01,0.1")
    p = add("ablate", cmd_ablate, "full model vs. ablations over several seeds")
    p.add_argument("--seeds", default="0-4")
    p.add_argument("--variants", default=",".join(ABLATIONS))
    add("inject", cmd_inject, "inject clique and attribute anomalies into a graph on disk")
    add("gen-sbm", cmd_gen_sbm, "write a synthetic block-model graph (with injected anomalies)")
    p = add("report-similarity", cmd_report_similarity, "per-node max cosine to the memory items")
    p.add_argument("--checkpoint")
    p = add("eval-auc", cmd_eval_auc, "AUC of a scores.csv file", config=False)
    p.add_argument("scores")
    p.add_argument("--labels", help="labels file; defaults to the label column of the scores file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnsupportedReportError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc} (last finite parameters saved as last_finite.npz)", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
