"""Statistics over a set of power-flow solutions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .netmodel import BusId, NetworkModel


@dataclass
class UqSummary:
    """Per-node voltage-magnitude envelopes and an all-points histogram.

    ``order`` sorts nodes by mean magnitude, for plotting envelopes.
    """

    v_min: np.ndarray
    v_max: np.ndarray
    v_mean: np.ndarray
    v_std: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    order: np.ndarray
    branch_histograms: dict = field(default_factory=dict)
    singular_values: np.ndarray | None = None

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "per_node": {"min": arr(self.v_min), "max": arr(self.v_max),
                         "mean": arr(self.v_mean), "std": arr(self.v_std)},
            "sorted_by_mean": arr(self.order),
            "histogram": {"edges": arr(self.hist_edges), "counts": arr(self.hist_counts)},
            "branch_histograms": {k: {kk: arr(vv) for kk, vv in v.items()}
                                  for k, v in self.branch_histograms.items()},
            "singular_values": arr(self.singular_values),
        }


def _magnitudes(result_or_matrix):
    if hasattr(result_or_matrix, "magnitudes"):
        return result_or_matrix.magnitudes()
    return np.asarray(result_or_matrix, dtype=float)


def summarize(result, bins=100):
    """Aggregate voltage magnitudes (rows are nodes, columns samples)."""
    mags = _magnitudes(result)
    if mags.ndim != 2 or mags.shape[1] == 0:
        raise ValueError("need a nodes x samples matrix with at least one sample")
    flat = mags.ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(flat, bins=bins, range=(lo, hi))
    mean = mags.mean(axis=1)
    return UqSummary(mags.min(axis=1), mags.max(axis=1), mean, mags.std(axis=1), edges, counts,
                     np.argsort(mean, kind="stable"))


def _slot(b):
    return int(b.index) if isinstance(b, BusId) else int(b)


def branch_currents(net: NetworkModel, result, edge):
    """``|y (V_from - V_to)|`` per sample for a branch given by two full slots."""
    f, t = _slot(edge[0]), _slot(edge[1])
    for s in (f, t):
        if not 0 <= s < net.n_total:
            raise IndexError(f"slot {s} outside 0..{net.n_total - 1}")
    y = -net.ybus_full[f, t]
    if f == t or y == 0:
        raise ValueError(f"no branch between slot {f} and slot {t}")
    sols = result.solutions
    n = sols.shape[0] // 2
    v = sols[:n] * np.exp(1j * sols[n:])
    full = np.empty((net.n_total, v.shape[1]), dtype=complex)
    full[net.keep] = v
    full[net.substation_slots] = net.substation_voltage[:, None]
    return np.abs(y * (full[f] - full[t]))


def branch_current_stats(net: NetworkModel, result, edge, bins=100):
    """Histogram of branch current magnitudes over the samples."""
    cur = branch_currents(net, result, edge)
    lo, hi = float(cur.min()), float(cur.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(cur, bins=bins, range=(lo, hi))
    return {"currents": cur, "edges": edges, "counts": counts}


def singular_values(result_or_matrix, count=None):
    """Descending singular values of the Cartesian solution matrix W.

    Uses the eigenvectors of the smaller Gram matrix (``W^T W`` or
    ``W W^T``) and returns ``||W u||`` for each, which keeps small values
    accurate in absolute terms.
    """
    w = result_or_matrix.cartesian() if hasattr(result_or_matrix, "cartesian") \
        else np.asarray(result_or_matrix, dtype=float)
    if w.ndim != 2:
        raise ValueError("need a 2-D matrix")
    if w.size == 0:
        return np.zeros(0)
    if w.shape[1] <= w.shape[0]:
        _, u = np.linalg.eigh(w.T @ w)
        s = np.linalg.norm(w @ u, axis=0)
    else:
        _, u = np.linalg.eigh(w @ w.T)
        s = np.linalg.norm(w.T @ u, axis=0)
    s = np.sort(s)[::-1]
    return s if count is None else s[:count]


def numerical_rank(sv, rtol=1e-8):
    sv = np.asarray(sv)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.count_nonzero(sv > rtol * sv[0]))


def write_summary_json(summary: UqSummary, path):
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")


def write_histogram_csv(path, edges, counts):
    """``bin_lo,bin_hi,count`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
