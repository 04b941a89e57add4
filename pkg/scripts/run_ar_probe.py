"""How observation noise and AR weight affect the lag-1 autocorrelation of mu.

    python3 scripts/run_ar_probe.py [--seeds 3]

Prints, per (noise, alpha), the mean test mu autocorrelation with the AR
penalty on and off, the MSE ratio to persistence, and the AR share.
"""

import argparse

import numpy as np

from eve_neuron.config import load_config
from eve_neuron.data import build_task
from eve_neuron.trainer import Trainer


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--noise", default="0.3,1.0")
    ap.add_argument("--alpha", default="0.1,1.0,3.0")
    args = ap.parse_args()
    print(f"{'noise':>6} {'alpha':>6} {'acf on':>8} {'acf off':>8} {'mse/pers':>9} {'ar_share':>9}")
    for noise in args.noise.split(","):
        task = build_task(load_config(None, {"data.noise": noise}).data)
        for alpha in args.alpha.split(","):
            res = {}
            for mode in ("penalty", "off"):
                acf, ratio, share = [], [], []
                for s in range(args.seeds):
                    cfg = load_config(None, {"data.noise": noise, "ar.alpha": alpha, "ar.mode": mode,
                                             "train.seed": str(s)})
                    tr = Trainer(cfg, task)
                    tr.run()
                    rep = tr.report()
                    acf.append(rep["test"]["mu_acf"])
                    ratio.append(rep["test"]["mse"] / rep["persistence"]["mse"])
                    share.append(rep["test"]["ar_share"])
                res[mode] = (np.mean(acf), np.mean(ratio), np.mean(share))
            on, off = res["penalty"], res["off"]
            print(f"{noise:>6} {alpha:>6} {on[0]:8.4f} {off[0]:8.4f} {on[1]:9.4f} {on[2]:9.4f}")


if __name__ == "__main__":
    main()
