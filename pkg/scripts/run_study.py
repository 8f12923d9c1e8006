"""Deep-vs-linear BER study on fig3, fig4 or random spatial networks.

Writes the baseline and per-seed deep BER curves as CSV, a summary of dB gaps,
SVG plots and the user-2 transfer function of the first deep run.

    python3 scripts/run_study.py fig4 --seeds 10 --out runs/fig4
    python3 scripts/run_study.py spatial --net-seeds 0 1 2 3 4 --seeds 1 --out runs/spatial
"""

import argparse
import os
import time
from dataclasses import replace

import numpy as np

from deeprelay.experiments import STUDIES, decisions_match, detectors_for, transfer_curve
from deeprelay.formats import save_network, save_params
from deeprelay.modem import ModulationScheme
from deeprelay.plotting import ber_svg, transfer_svg
from deeprelay.topology import PRESETS, SpatialConfig, generate_spatial


def networks(name, net_seeds):
    if name in PRESETS:
        yield name, PRESETS[name](), None
    else:
        for k in net_seeds:
            sp = generate_spatial(SpatialConfig(seed=k))
            yield f"spatial{k}", sp.network, sp


def run(name, study, losses_list, seeds, out, net_seeds):
    scheme = ModulationScheme(n_users=2)
    lines = []

    def say(text):
        lines.append(text)
        print(text, flush=True)

    for tag, net, sp in networks(name, net_seeds):
        t0 = time.time()
        save_network(net, os.path.join(out, f"{tag}.net"), spatial=sp)
        base = study.baseline(net, scheme)
        base.to_csv(os.path.join(out, f"{tag}_baseline.csv"))
        curves = {"linear baseline": (base.inv_sigma2_db, base.worst)}
        train_db = study.train_point(base)
        say(f"{tag}: baseline crosses {study.target:g} at {base.crossing(study.target):.2f} dB; "
                     f"training at {train_db:.2f} dB")
        for losses in losses_list:
            label = "+".join(losses)
            gaps = []
            for seed in seeds:
                curve, params, pol = study.deep(net, scheme, losses, seed, base)
                curve.to_csv(os.path.join(out, f"{tag}_deep_{label}_seed{seed}.csv"))
                gaps.append(study.gap(base, curve))
                if seed == seeds[0]:
                    curves[f"deep {label}"] = (curve.inv_sigma2_db, curve.worst)
                    save_params(params, os.path.join(out, f"{tag}_deep_{label}.params"), polarity=pol)
                    tc = transfer_curve(net, params, scheme, 201, pol)
                    tc.to_csv(os.path.join(out, f"{tag}_transfer_{label}.csv"),
                              os.path.join(out, f"{tag}_markers_{label}.csv"))
                    transfer_svg(os.path.join(out, f"{tag}_transfer_{label}.svg"), tc.s, tc.rt, tc.marker_s,
                                 tc.marker_rt, tc.marker_bits)
                    ok = decisions_match(tc, 1, detectors_for(losses)[1])
                    say(f"  {label}: user-2 noiseless decisions match the target bits: {ok}")
            say(f"  {label}: gaps {np.round(gaps, 2).tolist()} dB, median {np.median(gaps):.2f} dB")
        ber_svg(os.path.join(out, f"{tag}_ber.svg"), curves, floor=10.0 / study.trials)
        say(f"  ({time.time() - t0:.0f} s)")
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("network", choices=sorted(STUDIES))
    p.add_argument("--seeds", type=int, default=10, help="training seeds per network")
    p.add_argument("--net-seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4], help="spatial network seeds")
    p.add_argument("--losses", nargs="+", default=None, help="e.g. bpsk,pam bpsk,bpsk")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", required=True)
    args = p.parse_args()
    study = STUDIES[args.network]
    if args.steps:
        study = replace(study, steps=args.steps)
    if args.trials:
        study = replace(study, trials=args.trials)
    default = ["bpsk,bpsk", "bpsk,pam"] if args.network == "spatial" else ["bpsk,pam", "bpsk,bpsk"]
    losses_list = [tuple(x.split(",")) for x in (args.losses or default)]
    os.makedirs(args.out, exist_ok=True)
    run(args.network, study, losses_list, list(range(args.seeds)), args.out, args.net_seeds)


if __name__ == "__main__":
    main()
