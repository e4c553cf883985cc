"""Synthetic unbalanced radial feeders for testing and benchmarking.

The generator grows a random tree from a three-phase source. Three-phase
buses may spawn three-phase or single-phase children; single-phase laterals
stay on their phase. Series impedances carry mutual coupling between
phases and lines have pi-model charging, so the phase-expanded Y-bus has
the structure of a real unbalanced feeder.
"""
from __future__ import annotations

import numpy as np

from .netmodel import LineRecord, LoadProfile, build_ybus, reduce_network

PHASE_SHIFT = {"a": 0.0, "b": -2 * np.pi / 3, "c": 2 * np.pi / 3}


def _phase_impedance(phases, length_km, z_base):
    # ohm/km, roughly a 336 kcmil ACSR overhead line
    z_self = 0.306 + 0.627j
    z_mut = 0.095 + 0.289j
    k = len(phases)
    z = np.full((k, k), z_mut, dtype=complex)
    np.fill_diagonal(z, z_self)
    return z * length_km / z_base


def generate_feeder(min_node_phases=1000, seed=0, base_kw=100.0, base_kv=7.2,
                    source_pu=1.03, three_phase_prob=0.55, load_prob=0.8,
                    load_kw=(1.0, 8.0), power_factor=(0.88, 0.98), charging_us_per_km=3.0,
                    stay_prob=0.5):
    """Return a ``NetworkModel`` with at least ``min_node_phases`` slots.

    Slots 0..2 are the three-phase substation. Loads are consumptions drawn
    per node-phase and stored as negative injections.
    """
    rng = np.random.default_rng(seed)
    z_base = (base_kv * 1e3) ** 2 / (base_kw * 1e3)
    y_shunt_per_km = charging_us_per_km * 1e-6 * z_base

    bus_phases = [("a", "b", "c")]
    slot_of = [{"a": 0, "b": 1, "c": 2}]
    labels = ["a", "b", "c"]
    lines = []
    shunt = {}
    n_slots = 3
    last = 0
    while n_slots < min_node_phases + 3:
        if rng.random() < stay_prob:
            parent = last
        else:
            parent = int(rng.integers(0, len(bus_phases)))
        pph = bus_phases[parent]
        if len(pph) == 3 and rng.random() < three_phase_prob:
            phases = pph
        else:
            phases = (pph[int(rng.integers(0, len(pph)))],)
        me = {}
        for ph in phases:
            me[ph] = n_slots
            labels.append(ph)
            n_slots += 1
        bus_phases.append(phases)
        slot_of.append(me)
        length = float(rng.uniform(0.05, 0.4))
        z = _phase_impedance(phases, length, z_base)
        y = np.linalg.inv(z)
        y = 0.5 * (y + y.T)  # inv() leaves ~1e-16 asymmetry
        f = [slot_of[parent][ph] for ph in phases]
        t = [me[ph] for ph in phases]
        lines.append(LineRecord(tuple(f), tuple(t), y))
        half = 0.5j * y_shunt_per_km * length
        for s in f + t:
            shunt[s] = shunt.get(s, 0.0) + half
        last = len(bus_phases) - 1

    shunts = np.zeros(n_slots, dtype=complex)
    for s, v in shunt.items():
        shunts[s] = v
    ybus = build_ybus(lines, shunts, n_slots)

    sub = np.array([0, 1, 2])
    vsub = source_pu * np.exp(1j * np.array([PHASE_SHIFT[p] for p in "abc"]))
    n = n_slots - 3
    p = np.zeros(n)
    q = np.zeros(n)
    has = rng.random(n) < load_prob
    kw = rng.uniform(*load_kw, size=n)
    pf = rng.uniform(*power_factor, size=n)
    p[has] = -kw[has] / base_kw
    q[has] = p[has] * np.tan(np.arccos(pf[has]))
    return reduce_network(ybus, sub, vsub, LoadProfile(p, q), shunts=shunts,
                          base_power_kw=base_kw, base_kv=np.full(n_slots, base_kv),
                          phase_labels=labels)
