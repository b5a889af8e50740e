"""AIC and NLE block edf over a grid of log smoothing parameters for one RG1 replication.

Shows whether a large selected edf is a genuine AIC minimum or a search artefact.

    python3 scripts/aic_profile.py --rep 18
"""

import argparse
import warnings

import numpy as np

from rhem.experiments import ReplicationConfig, model_specs
from rhem.fitter import ConvergenceWarning, fit_model
from rhem.simulate import simulate_controls, simulate_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rep", type=int, default=0)
    ap.add_argument("--n", type=int, default=5000)
    args = ap.parse_args()
    cfg = ReplicationConfig(n_events=args.n)
    design = simulate_controls(simulate_stream(cfg.simulation(args.rep)))
    specs = model_specs(cfg)["nle"]
    k = [s.covariate for s in specs].index("xbar_sq")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        sel = fit_model(design, specs, guard=False)
        print(f"selected: log tau {np.log(sel.tau[0]):7.2f}  AIC {sel.aic:10.3f}  edf {sel.block_edf[k]:.2f}")
        for lt in np.linspace(-8, 12, 21):
            m = fit_model(design, specs, tau=[np.exp(lt)], guard=False)
            print(f"log tau {lt:7.2f}  AIC {m.aic:10.3f}  edf {m.block_edf[k]:.2f}")


if __name__ == "__main__":
    main()
