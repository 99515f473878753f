"""Where does a trained model put its denoising weight on planted-noise entries?

Reads a checkpoint trained on a ``drpn synth`` directory plus that
directory's truth.tsv, and prints per-user and overall weight summaries.

    python scripts/inspect_noise.py --data runs/synth --checkpoint runs/full/model.ckpt --users 5
"""
import argparse
from pathlib import Path

from drpn.evaluation import attention_weights, noise_attention_summary
from drpn.cli import load_dataset, model_config, read_config_file, resolve, run_keys
from drpn.ingest import read_truth
from drpn.training import load_model


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, required=True)
    ap.add_argument("--checkpoint", type=Path, required=True)
    ap.add_argument("--users", type=int, default=5, help="how many users to print in detail")
    args = ap.parse_args()

    stored = read_config_file(args.checkpoint.parent / "config.txt")
    cfg = resolve(run_keys(), stored, {"data": str(args.data)})
    mc = model_config(cfg)
    data = load_dataset(cfg, mc)
    model = load_model(args.checkpoint, data, mc)
    truth = read_truth(args.data / "truth.tsv")
    for u in sorted(data.profiles)[: args.users]:
        print(u)
        for r in attention_weights(model, data.profiles[u]):
            flag = truth.get((u, r.news_id))
            mark = "noise" if flag and flag[1] else ""
            print(f"  {r.sequence}  {r.news_id:>8s}  {r.alpha:.4f}  {r.category:10s} {mark}")
    s = noise_attention_summary(model, data.profiles, truth)
    print(f"mean alpha: noisy {s.noisy_mean:.4f} ({s.n_noisy}), clean {s.clean_mean:.4f} ({s.n_clean}), "
          f"ratio {s.ratio:.3f}; noisy entries in the lower half of their ranking: {s.lower_half_share:.1%}")


if __name__ == "__main__":
    main()
