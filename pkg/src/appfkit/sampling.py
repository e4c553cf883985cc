"""Load-profile sampling for probabilistic power flow.

Every uncertain load is scaled by ``1 + xi`` with ``xi ~ N(0, sigma^2)``.
Draws are independent per load (and, by default, per P and Q), shared by
all uncertain loads (``correlation="full"``), or correlated through a
user-supplied correlation matrix. Loads outside the uncertainty set are
held at ``fixed_scale`` times their nominal value.

Random numbers come from numpy's PCG64 bit generator seeded with
``spec.seed``; a fixed spec always yields the same sample list.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .netmodel import LoadProfile

RNG_ALGORITHM = "PCG64"
CORRELATIONS = ("none", "full", "matrix")


@dataclass(frozen=True)
class SamplingSpec:
    num_samples: int = 100
    sigma: float = 1.0
    correlation: str = "none"
    uncertain_set: tuple | None = None
    top_k: int | None = 25
    fixed_scale: float = 0.5
    seed: int = 0
    shared_pq_draw: bool = False
    correlation_matrix: tuple | None = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if self.correlation not in CORRELATIONS:
            raise ValueError(f"correlation must be one of {CORRELATIONS}")
        if self.correlation == "matrix" and self.correlation_matrix is None:
            raise ValueError("correlation='matrix' needs correlation_matrix")
        if self.top_k is not None and self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.uncertain_set is not None:
            object.__setattr__(self, "uncertain_set", tuple(int(i) for i in self.uncertain_set))
        if self.correlation_matrix is not None:
            object.__setattr__(self, "correlation_matrix",
                               tuple(tuple(float(v) for v in row) for row in self.correlation_matrix))

    def to_dict(self):
        d = asdict(self)
        d["rng"] = RNG_ALGORITHM
        return d

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "rng"}
        return cls(**d)


def uncertain_indices(spec: SamplingSpec, base: LoadProfile):
    """Loads in the uncertainty set, in ascending index order.

    ``top_k`` picks the k largest ``|S|``; ties go to the lower index. An
    explicit ``uncertain_set`` takes precedence. With neither, every load
    is uncertain.
    """
    n = len(base)
    if spec.uncertain_set is not None:
        idx = np.asarray(spec.uncertain_set, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"uncertain_set index outside 0..{n - 1}")
        if np.unique(idx).size != idx.size:
            raise ValueError("uncertain_set has duplicates")
        return np.sort(idx)
    if spec.top_k is None:
        return np.arange(n)
    mag = np.abs(base.complex)
    order = np.argsort(-mag, kind="stable")
    return np.sort(order[:min(spec.top_k, n)])


def _correlation_factor(c, k):
    c = np.asarray(c, dtype=float)
    if c.shape != (k, k):
        raise ValueError(f"correlation matrix must be {k}x{k}, got {c.shape}")
    if not np.allclose(c, c.T, atol=1e-12):
        raise ValueError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise ValueError("correlation matrix must have a unit diagonal")
    w, u = np.linalg.eigh(c)
    if w.min() < -1e-10 * max(1.0, w.max()):
        raise ValueError(f"correlation matrix is not positive semi-definite (eigenvalue {w.min():.3g})")
    return u * np.sqrt(np.clip(w, 0.0, None))


def scale_factors(spec: SamplingSpec, k: int):
    """``(M, 2, k)`` multipliers for P (axis 1 index 0) and Q of the uncertain loads."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    m = spec.num_samples
    if spec.correlation == "full":
        xi = rng.standard_normal(m)[:, None, None] * np.ones((1, 2, k))
    else:
        z = rng.standard_normal((m, 1 if spec.shared_pq_draw else 2, k))
        if spec.correlation == "matrix":
            z = z @ _correlation_factor(spec.correlation_matrix, k).T
        xi = np.broadcast_to(z, (m, 2, k))
    return 1.0 + spec.sigma * xi


def generate_samples(spec: SamplingSpec, base: LoadProfile):
    """Return ``spec.num_samples`` perturbed copies of ``base``."""
    idx = uncertain_indices(spec, base)
    fixed = np.ones(len(base), dtype=bool)
    fixed[idx] = False
    p0 = np.where(fixed, spec.fixed_scale * base.p, 0.0)
    q0 = np.where(fixed, spec.fixed_scale * base.q, 0.0)
    factors = scale_factors(spec, idx.size)
    out = []
    for f in factors:
        p = p0.copy()
        q = q0.copy()
        p[idx] = base.p[idx] * f[0]
        q[idx] = base.q[idx] * f[1]
        out.append(LoadProfile(p, q))
    return out


def center_profile(spec: SamplingSpec, base: LoadProfile):
    """The zero-perturbation profile: uncertain loads nominal, others at ``fixed_scale``."""
    idx = uncertain_indices(spec, base)
    scale = np.full(len(base), spec.fixed_scale)
    scale[idx] = 1.0
    return LoadProfile(base.p * scale, base.q * scale)


def write_samples_csv(path, samples, bus_labels=None):
    """Write ``sample,bus,P_pu,Q_pu`` rows; ``bus_labels`` maps reduced index to a label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "bus", "P_pu", "Q_pu"])
        for s, prof in enumerate(samples):
            for i in range(len(prof)):
                bus = i if bus_labels is None else bus_labels[i]
                w.writerow([s, bus, repr(float(prof.p[i])), repr(float(prof.q[i]))])


def read_samples_csv(path, n, bus_labels=None):
    """Inverse of :func:`write_samples_csv` for a network with ``n`` load slots."""
    lookup = None if bus_labels is None else {int(b): i for i, b in enumerate(bus_labels)}
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["sample", "bus", "P_pu", "Q_pu"]:
            raise ValueError(f"unexpected header {header}")
        for r in reader:
            s, b = int(r[0]), int(r[1])
            i = b if lookup is None else lookup[b]
            p, q = rows.setdefault(s, (np.zeros(n), np.zeros(n)))
            p[i] = float(r[2])
            q[i] = float(r[3])
    return [LoadProfile(*rows[s]) for s in sorted(rows)]
