"""How the Neumann series behaves as a feeder is loaded up.

For each load multiplier the script solves the power flow, reports the
convergence margin, and shows how quickly successive series terms shrink.
Past the point where the margin drops below one the terms grow and the
guard falls back to the first term.

    python demos/neumann_margin.py
"""
import os
import warnings

import numpy as np

from appfkit import npfs, pfcore
from appfkit.netmodel import load_network
from appfkit.npfs import NpfsConfig

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    net = load_network(os.path.join(HERE, "..", "fixtures", "synthetic_feeder.json"))
    f = npfs.prepare(net)
    rng = np.random.default_rng(0)
    rhs = rng.standard_normal(2 * net.n)
    print(f"{'load x':>7} {'Vmin':>7} {'margin':>8} {'term ratio':>11} {'newton':>7}")
    for scale in (0.5, 1.0, 2.0, 4.0, 6.0):
        loads = net.nominal_loads.stacked() * scale
        vs, st = npfs.npfs_solve(f, net, loads, pfcore.flat_start(net), NpfsConfig(eps_newton=1e-8))
        if not st.converged:
            print(f"{scale:7.1f}  no convergence")
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            margin = npfs.convergence_margin(net, vs, f)
        _, info = npfs.neumann_apply(f, npfs.perturbation(net, vs), rhs, 5, guard=False)
        t = np.array(info.term_norms)
        ratio = np.max(t[1:] / t[:-1])
        print(f"{scale:7.1f} {vs.v_mag.min():7.3f} {margin:8.1f} {ratio:11.3g} {st.newton_iters:7d}")

    # the margin is only a bound on a feeder; on a single line it is exact,
    # so scaling the currents past it makes the series diverge
    two = load_network(os.path.join(HERE, "..", "fixtures", "2bus.json"))
    f2 = npfs.prepare(two)
    vs, _ = npfs.npfs_solve(f2, two, two.nominal_loads, pfcore.flat_start(two), NpfsConfig())
    margin = npfs.convergence_margin(two, vs, f2, warn=False)
    rhs2 = np.array([1.0, -0.3])
    print(f"\ntwo-bus line, nominal margin {margin:.1f}")
    for factor in (0.5, 1.5):
        c = npfs.perturbation(two, vs) * margin * factor
        _, raw = npfs.neumann_apply(f2, c, rhs2, 5, guard=False)
        _, guarded = npfs.neumann_apply(f2, c, rhs2, 5, guard=True)
        print(f"  margin {1 / factor:.2f}: term norms", " ".join(f"{v:.2e}" for v in raw.term_norms))
        print(f"  {'':13} guard tripped: {guarded.diverged}, terms kept: {guarded.terms_used}")

if __name__ == "__main__":
    main()
