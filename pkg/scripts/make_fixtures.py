"""Regenerate the network fixtures under fixtures/.

    python3 scripts/make_fixtures.py [--outdir fixtures]

The small networks are hand-specified; the synthetic feeder comes from
``appfkit.synthetic.generate_feeder`` with a fixed seed.
"""
import argparse
import os

import numpy as np

from appfkit.netmodel import LineRecord, LoadProfile, build_ybus, reduce_network, save_network
from appfkit.synthetic import generate_feeder

A120 = np.exp(-2j * np.pi / 3)


def two_bus():
    y = build_ybus([LineRecord(0, 1, 1.0 - 10.0j)], None, 2)
    return reduce_network(y, [0], [1.0], LoadProfile([-0.1], [-0.05]))


def feeder3():
    lines = [LineRecord(0, 1, 2.0 - 20.0j), LineRecord(1, 2, 1.5 - 12.0j)]
    y = build_ybus(lines, None, 3)
    return reduce_network(y, [0], [1.0], LoadProfile([-0.2, -0.3], [-0.1, -0.12]))


def three_phase6():
    zs, zm = 0.01 + 0.02j, 0.003 + 0.008j
    z = np.full((3, 3), zm)
    np.fill_diagonal(z, zs)
    y = build_ybus([LineRecord((0, 1, 2), (3, 4, 5), np.linalg.inv(z))], None, 6)
    vsub = np.array([1.0, A120, A120.conjugate()])
    loads = LoadProfile([-0.5, -0.3, -0.4], [-0.2, -0.1, -0.15])
    return reduce_network(y, [0, 1, 2], vsub, loads, phase_labels="abcabc")


def mesh10():
    rng = np.random.default_rng(10)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (2, 7), (3, 8), (8, 9), (6, 7), (4, 9)]
    lines = [LineRecord(f, t, rng.uniform(5, 20) * (1 - 8j)) for f, t in edges]
    shunts = np.zeros(10, dtype=complex)
    shunts[[4, 6, 9]] = 0.01j
    y = build_ybus(lines, shunts, 10)
    p = -rng.uniform(0.02, 0.1, 9)
    q = p * rng.uniform(0.2, 0.5, 9)
    return reduce_network(y, [0], [1.02], LoadProfile(p, q), shunts=shunts)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", default="fixtures")
    ap.add_argument("--feeder-size", type=int, default=1000)
    ap.add_argument("--feeder-seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.outdir, exist_ok=True)
    save_network(two_bus(), os.path.join(args.outdir, "2bus.json"))
    save_network(feeder3(), os.path.join(args.outdir, "feeder3.json"))
    csv_dir = os.path.join(args.outdir, "feeder3_csv")
    os.makedirs(csv_dir, exist_ok=True)
    save_network(feeder3(), os.path.join(csv_dir, "ybus.csv"))
    save_network(three_phase6(), os.path.join(args.outdir, "threephase6.json"))
    save_network(mesh10(), os.path.join(args.outdir, "mesh10.json"))
    feeder = generate_feeder(args.feeder_size, seed=args.feeder_seed)
    save_network(feeder, os.path.join(args.outdir, "synthetic_feeder.json"))


if __name__ == "__main__":
    main()
