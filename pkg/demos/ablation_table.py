"""Train every shipped ablation config over a few seeds and print a Top-1/mAP table.

    python demos/ablation_table.py --seeds 0 1 2 --epochs 40

Each 40-epoch run takes one to two minutes on a single core.
"""
import argparse
import time
from pathlib import Path
from statistics import median

from disent_reid.config import load_config
from disent_reid.evaluation import evaluate
from disent_reid.train import load_data, train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ROWS = ("baseline", "cdm", "cdm_two_stage", "gca", "gca_two_stage", "cdm_gca", "full")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--rows", nargs="+", default=list(ROWS), choices=ROWS)
    args = ap.parse_args()

    dataset = None
    print(f"{'config':16s} {'sc top1':>8s} {'sc mAP':>8s} {'cc top1':>8s} {'cc mAP':>8s} {'min':>6s}")
    for name in args.rows:
        cfg = load_config(CONFIGS / f"{name}.cfg")
        cfg["run.epochs"] = args.epochs
        # every row shares one synthetic benchmark; only the training seed varies
        dataset = dataset or load_data(cfg)
        scores, start = [], time.perf_counter()
        for seed in args.seeds:
            cfg["run.seed"] = seed
            result = train(cfg, dataset)
            scores.append(evaluate(dataset, result.params, result.backbone))
        cols = [median(s[p].top1 if k == 0 else s[p].mAP for s in scores) for p in (0, 1) for k in (0, 1)]
        minutes = (time.perf_counter() - start) / 60
        print(f"{name:16s} " + " ".join(f"{v:8.4f}" for v in cols) + f" {minutes:6.1f}", flush=True)


if __name__ == "__main__":
    main()
