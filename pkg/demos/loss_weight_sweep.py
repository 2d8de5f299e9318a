"""Sweep the identity/triplet weights of the combined loss on the full model.

    python demos/loss_weight_sweep.py --pairs 0.1,0.9 0.5,0.5 0.9,0.1 --epochs 40

Prints clothes-change Top-1 and mAP per (lambda1, lambda2) pair.
"""
import argparse
from pathlib import Path

from disent_reid.config import load_config
from disent_reid.evaluation import CLOTHING_CHANGE, evaluate
from disent_reid.train import load_data, train

FULL = Path(__file__).resolve().parents[1] / "configs" / "full.cfg"


def pair(text):
    a, b = (float(v) for v in text.split(","))
    return a, b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=pair, nargs="+", default=[(0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.9, 0.1)])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(FULL)
    cfg["run.epochs"], cfg["run.seed"] = args.epochs, args.seed
    dataset = load_data(cfg)
    for l1, l2 in args.pairs:
        cfg["loss.lambda1"], cfg["loss.lambda2"] = l1, l2
        result = train(cfg, dataset)
        (cc,) = evaluate(dataset, result.params, result.backbone, protocols=(CLOTHING_CHANGE,))
        last = result.history[-1]
        print(f"lambda1 {l1:.2f} lambda2 {l2:.2f}  cc top1 {cc.top1:.4f} mAP {cc.mAP:.4f}  "
              f"final L_id {last.id_loss:.3f} L_tri {last.tri_loss:.3f}", flush=True)


if __name__ == "__main__":
    main()
