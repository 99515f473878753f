"""Run every model variant on one dataset directory and print the ablation table.

The dataset directory is what ``drpn synth`` or ``drpn rebuild-dataset``
writes. Finished variants are reused from ``--out`` on reruns.

    python scripts/run_ablation.py --data runs/synth --out runs/ablation --d 32 --d-att 32 --heads 4
"""
import sys

from drpn.cli import main

if __name__ == "__main__":
    sys.exit(main(["ablate", *sys.argv[1:]]))
