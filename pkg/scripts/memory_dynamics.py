"""Track how spread out the memory items stay during training.

Reports, every few epochs, the mean pairwise cosine between items and the
largest read weight any node puts on a single item. Values near 1 and near
1/m respectively mean the bank has collapsed to a single direction.

    python scripts/memory_dynamics.py --similarity cosine
"""

import argparse

import numpy as np

from graphmemad import trainer as tr
from graphmemad.autodiff import Adam, Tensor
from graphmemad.config import RunConfig


def item_spread(items):
    c = items @ items.T
    return c[np.triu_indices(len(items), 1)].mean()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--every", type=int, default=10)
    ap.add_argument("--similarity", choices=["cosine", "dot"], default="cosine")
    ap.add_argument("--unit-queries", action="store_true")
    args = ap.parse_args()

    cfg = RunConfig(d_h=32, m=64, epochs=1, memory_similarity=args.similarity,
                    unit_queries=args.unit_queries)
    ctx = tr.GraphContext.build(tr.load_dataset(cfg), cfg)
    model = tr.Model.init(cfg, ctx.graph.d)
    opt = Adam(model.params, lr=cfg.lr)
    print(f"epoch  mean item cosine  max read weight (1/m = {1 / cfg.m:.4f})")
    for epoch in range(args.epochs):
        fp = tr.forward(model, ctx)
        loss = tr.total_loss(fp.losses, cfg.lambdas)
        model.params.zero_grad()
        loss.backward()
        opt.step()
        chosen = tr.select_pseudo_normal(fp.recon_error, 1.0 if epoch == 0 else cfg.ratio)
        model.memory.update(fp.h_a.data, chosen)
        if epoch % args.every == 0 or epoch == args.epochs - 1:
            s_q = model.memory.read(Tensor(fp.h_a.data)).s_q.data
            print(f"{epoch:5d}  {item_spread(model.memory.items):16.4f}  {s_q.max():.4f}")


if __name__ == "__main__":
    main()
