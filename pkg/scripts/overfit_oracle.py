"""Fit the zero-noise synthetic set and report when train accuracy saturates.

    python scripts/overfit_oracle.py                 # lr 1e-4, the acceptance setting
    python scripts/overfit_oracle.py --lr 1e-5 --epochs 500
"""

from __future__ import annotations

import argparse
import time

from giin.config import ExperimentConfig
from giin.data import split_of
from giin.experiments import resolve_dataset
from giin.metrics import report
from giin.train import train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--scale", type=float, default=0.125)
    ap.add_argument("--variant", default="dc")
    args = ap.parse_args()

    cfg = ExperimentConfig(synth="n=64,noise=0,train=1.0", scale=args.scale, epochs=args.epochs,
                           seed=args.seed, lr=args.lr, variant=args.variant)
    data = resolve_dataset(cfg)
    first_full = None

    def on_epoch(rec):
        nonlocal first_full
        if first_full is None and min(rec.accuracy) == 1.0:
            first_full = rec.epoch

    t0 = time.perf_counter()
    model, hist = train(data, cfg, on_epoch=on_epoch)
    rep = report(model, split_of(data, "train"))
    last = hist.records[-1]
    print(f"lr {args.lr:g}  epochs {args.epochs}  {time.perf_counter() - t0:.1f}s")
    print("final train accuracy  " + " ".join(f"{a:.4f}" for a in last.accuracy))
    print(f"min train AUC         {min(r.auc for r in rep.rows if r.auc is not None):.6f}")
    print(f"first epoch at 100%   {first_full if first_full is not None else 'never'}")
    return 0 if first_full is not None else 1


if __name__ == "__main__":
    raise SystemExit(main())
