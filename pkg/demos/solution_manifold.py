"""Singular-value decay of PPF solution snapshots.

Correlated loads move the feeder along very few directions, so the
snapshot matrix is nearly low-rank and the reduced model stays small.
Independent loads spread the solutions over more directions.

    python demos/solution_manifold.py
"""
import os

import numpy as np

from appfkit.appf import PpfConfig, appf_run
from appfkit.netmodel import load_network
from appfkit.rom import RomConfig
from appfkit.sampling import SamplingSpec, center_profile, generate_samples
from appfkit.uq import numerical_rank, singular_values, summarize

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    net = load_network(os.path.join(HERE, "..", "fixtures", "synthetic_feeder.json"))
    cfg = PpfConfig(rom=RomConfig(eps_basis=1e-7, n_q=64))
    for corr in ("none", "full"):
        spec = SamplingSpec(num_samples=150, sigma=1.0, correlation=corr, top_k=25, seed=11)
        samples = generate_samples(spec, net.nominal_loads)
        res = appf_run(net, samples, cfg, nominal=center_profile(spec, net.nominal_loads))
        sv = singular_values(res)
        summary = summarize(res)
        print(f"correlation={corr}: q={res.rom_final_q}, "
              f"numerical rank {numerical_rank(sv, 1e-7)}, "
              f"Vmin {summary.v_min.min():.4f}, Vmax {summary.v_max.max():.4f}")
        print("  sigma_k / sigma_1:", " ".join(f"{v:.1e}" for v in (sv / sv[0])[:12]))


if __name__ == "__main__":
    np.set_printoptions(precision=3)
    main()
