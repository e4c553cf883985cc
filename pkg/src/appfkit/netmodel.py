"""Network model: Y-bus assembly, substation reduction and file ingestion.

All quantities are per-unit. Loads are stored as power *injections*, so a
consuming load has negative P and Q.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

SYMMETRY_RTOL = 1e-8


class NetworkError(ValueError):
    """Base class for invalid network definitions."""


class SchemaError(NetworkError):
    """Input file does not follow the expected layout."""


class AsymmetryError(NetworkError):
    """Y-bus is not symmetric within tolerance."""


class IndexRangeError(NetworkError):
    """A node-phase index lies outside 0..n_total-1."""


class MissingVoltageError(NetworkError):
    """A substation slot was given without a fixed voltage phasor."""


@dataclass(frozen=True)
class BusId:
    index: int
    phase_label: Optional[str] = None


@dataclass(frozen=True)
class LineRecord:
    """Series element between node-phase slots.

    ``from_bus``/``to_bus`` are either single integers or equal-length tuples
    of slots for a coupled multi-phase element, in which case ``admittance``
    is the dense complex phase block.
    """

    from_bus: object
    to_bus: object
    admittance: object

    def slots(self):
        f = np.atleast_1d(np.asarray(self.from_bus, dtype=np.int64))
        t = np.atleast_1d(np.asarray(self.to_bus, dtype=np.int64))
        y = np.atleast_2d(np.asarray(self.admittance, dtype=complex))
        return f, t, y


@dataclass(frozen=True)
class LoadProfile:
    """Per-unit injections over the non-substation slots."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p and q must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("load profile contains non-finite entries")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return self.p.size

    def __eq__(self, other):
        if not isinstance(other, LoadProfile):
            return NotImplemented
        return np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q)

    __hash__ = None

    @property
    def complex(self):
        return self.p + 1j * self.q

    def stacked(self):
        """Return ``[P; Q]`` as one real vector of length 2n."""
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_stacked(cls, s):
        s = np.asarray(s, dtype=float)
        n = s.size // 2
        return cls(s[:n].copy(), s[n:].copy())

    @classmethod
    def from_complex(cls, s):
        s = np.asarray(s, dtype=complex)
        return cls(s.real.copy(), s.imag.copy())

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True, eq=False)
class NetworkModel:
    n_total: int
    ybus_full: sp.csr_matrix
    substation_slots: np.ndarray
    substation_voltage: np.ndarray
    ybus_reduced: sp.csr_matrix
    sub_coupling: sp.csr_matrix
    keep: np.ndarray
    nominal_loads: LoadProfile
    base_power_kw: float = 100.0
    base_kv: Optional[np.ndarray] = None
    shunt_diag: Optional[np.ndarray] = None
    phase_labels: Optional[tuple] = None
    _slot_to_reduced: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        """Number of non-substation node-phases (unknown phasors)."""
        return self.keep.size

    def reduced_index(self, slot):
        try:
            return self._slot_to_reduced[int(slot)]
        except KeyError:
            raise IndexRangeError(f"slot {slot} is a substation slot or out of range")

    def bus_id(self, reduced_index):
        slot = int(self.keep[reduced_index])
        label = self.phase_labels[slot] if self.phase_labels else None
        return BusId(slot, label)

    def shunts_reduced(self):
        if self.shunt_diag is None:
            return None
        return self.shunt_diag[self.keep]

    def with_loads(self, loads):
        if len(loads) != self.n:
            raise NetworkError(f"load profile length {len(loads)} != {self.n}")
        return dataclasses.replace(self, nominal_loads=loads)

    def reembed(self):
        """Rebuild the full Y-bus from reduced block, coupling and substation block."""
        sub = self.substation_slots
        order = np.concatenate([self.keep, sub])
        sub_block = self.ybus_full[sub][:, sub]
        top = sp.hstack([self.ybus_reduced, self.sub_coupling])
        bottom = sp.hstack([self.sub_coupling.T, sub_block])
        permuted = sp.vstack([top, bottom]).tocsr()
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        return permuted[inv][:, inv].tocsr()


def build_ybus(lines: Sequence[LineRecord], shunts=None, n_total: int = 0):
    """Assemble the nodal admittance matrix by per-edge stamping.

    Each element adds ``+y`` on the diagonal blocks of both endpoints and
    ``-y`` on the off-diagonal blocks. ``shunts`` is a length ``n_total``
    complex vector (or sparse diagonal) added to the diagonal.
    """
    rows, cols, vals = [], [], []
    for line in lines:
        f, t, y = line.slots()
        if f.size != t.size or y.shape != (f.size, f.size):
            raise NetworkError(f"line {line!r}: phase block shape does not match slots")
        if np.any(f == t):
            raise NetworkError(f"line {line!r}: self-loop edge")
        if not np.all(np.isfinite(y)):
            raise NetworkError(f"line {line!r}: non-finite admittance")
        if not np.any(y != 0):
            raise NetworkError(f"line {line!r}: zero admittance")
        if np.any(f < 0) or np.any(t < 0) or np.any(f >= n_total) or np.any(t >= n_total):
            raise IndexRangeError(f"line {line!r}: slot out of range 0..{n_total - 1}")
        ff_r, ff_c = np.meshgrid(f, f, indexing="ij")
        tt_r, tt_c = np.meshgrid(t, t, indexing="ij")
        ft_r, ft_c = np.meshgrid(f, t, indexing="ij")
        tf_r, tf_c = np.meshgrid(t, f, indexing="ij")
        rows += [ff_r.ravel(), tt_r.ravel(), ft_r.ravel(), tf_r.ravel()]
        cols += [ff_c.ravel(), tt_c.ravel(), ft_c.ravel(), tf_c.ravel()]
        vals += [y.ravel(), y.ravel(), -y.ravel(), -y.T.ravel()]
    if shunts is not None:
        ys = shunts.diagonal() if sp.issparse(shunts) else np.asarray(shunts, dtype=complex)
        if ys.size != n_total:
            raise NetworkError("shunt diagonal length must equal n_total")
        if not np.all(np.isfinite(ys)):
            raise NetworkError("non-finite shunt admittance")
        idx = np.arange(n_total)
        rows.append(idx)
        cols.append(idx)
        vals.append(ys.astype(complex))
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0, dtype=complex)
    y = sp.coo_matrix((v, (r, c)), shape=(n_total, n_total)).tocsr()
    y.sum_duplicates()
    y.eliminate_zeros()
    return y


def reduce_network(ybus_full, substation_slots, substation_voltage, loads=None, *,
                   shunts=None, base_power_kw=100.0, base_kv=None, phase_labels=None):
    """Delete substation rows/columns and build an immutable ``NetworkModel``.

    ``loads`` may be a ``LoadProfile`` over the kept slots or ``None`` (zero).
    """
    ybus_full = sp.csr_matrix(ybus_full, dtype=complex)
    n_total = ybus_full.shape[0]
    sub = np.atleast_1d(np.asarray(substation_slots, dtype=np.int64))
    if sub.size == 0:
        raise NetworkError("at least one substation slot is required")
    if np.any(sub < 0) or np.any(sub >= n_total):
        raise IndexRangeError(f"substation slot out of range 0..{n_total - 1}")
    if np.unique(sub).size != sub.size:
        raise NetworkError("duplicate substation slot")
    if substation_voltage is None:
        raise MissingVoltageError("substation voltages not given")
    vsub = np.atleast_1d(np.asarray(substation_voltage, dtype=complex))
    if vsub.size != sub.size:
        raise MissingVoltageError(
            f"{sub.size} substation slots but {vsub.size} voltage phasors")
    if not np.all(np.isfinite(vsub)):
        raise MissingVoltageError("non-finite substation voltage")
    mags = np.abs(vsub)
    if np.any(mags < 0.8) or np.any(mags > 1.2):
        warnings.warn("substation voltage magnitude far from 1 pu; is the network per-unitized?",
                      stacklevel=2)

    mask = np.ones(n_total, dtype=bool)
    mask[sub] = False
    keep = np.flatnonzero(mask)
    yb = ybus_full[keep][:, keep].tocsr()
    coupling = ybus_full[keep][:, sub].tocsr()
    row_nnz = np.diff(yb.indptr)
    if keep.size and np.any(row_nnz == 0):
        bad = keep[np.flatnonzero(row_nnz == 0)[0]]
        raise NetworkError(f"slot {bad} has an empty row in the reduced Y-bus")
    if loads is None:
        loads = LoadProfile.zeros(keep.size)
    if len(loads) != keep.size:
        raise NetworkError(f"load profile length {len(loads)} != {keep.size} non-substation slots")
    if shunts is not None:
        shunts = np.asarray(shunts, dtype=complex)
        if shunts.size != n_total:
            raise NetworkError("shunt diagonal length must equal n_total")
    if base_kv is not None:
        base_kv = np.asarray(base_kv, dtype=float)
    return NetworkModel(
        n_total=n_total, ybus_full=ybus_full, substation_slots=sub,
        substation_voltage=vsub, ybus_reduced=yb, sub_coupling=coupling, keep=keep,
        nominal_loads=loads, base_power_kw=float(base_power_kw), base_kv=base_kv,
        shunt_diag=shunts, phase_labels=tuple(phase_labels) if phase_labels else None,
        _slot_to_reduced={int(s): i for i, s in enumerate(keep)})


def check_symmetric(y, rtol=SYMMETRY_RTOL):
    diff = abs(y - y.T)
    scale = max(abs(y).max(), 1.0) if y.nnz else 1.0
    worst = diff.max() if diff.nnz else 0.0
    if worst > rtol * scale:
        d = diff.tocoo()
        k = int(np.argmax(d.data))
        raise AsymmetryError(
            f"Y-bus asymmetric at ({d.row[k]}, {d.col[k]}): |Y-Y^T| = {worst:.3g}")


def _loads_from_slots(entries, keep_map, n):
    p = np.zeros(n)
    q = np.zeros(n)
    for slot, pv, qv in entries:
        if int(slot) not in keep_map:
            raise IndexRangeError(f"load on slot {slot}: not a non-substation slot")
        i = keep_map[int(slot)]
        p[i] += pv
        q[i] += qv
    return LoadProfile(p, q)


def _assemble(n_total, triplets, sub, vsub, load_entries, shunts=None, base_power_kw=100.0,
              base_kv=None, phase_labels=None):
    triplets = np.asarray(triplets, dtype=float).reshape(-1, 4)
    rows = triplets[:, 0]
    cols = triplets[:, 1]
    if np.any(rows != np.round(rows)) or np.any(cols != np.round(cols)):
        raise SchemaError("Y-bus indices must be integers")
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    if triplets.size and (rows.min() < 0 or cols.min() < 0
                          or rows.max() >= n_total or cols.max() >= n_total):
        raise IndexRangeError(f"Y-bus index outside 0..{n_total - 1}")
    vals = triplets[:, 2] + 1j * triplets[:, 3]
    if not np.all(np.isfinite(vals)):
        raise SchemaError("non-finite Y-bus entry")
    y = sp.coo_matrix((vals, (rows, cols)), shape=(n_total, n_total)).tocsr()
    y.sum_duplicates()
    check_symmetric(y)
    sub = np.asarray(sub, dtype=np.int64)
    if sub.size and (sub.min() < 0 or sub.max() >= n_total):
        raise IndexRangeError(f"substation slot outside 0..{n_total - 1}")
    for entry in load_entries:
        if not (0 <= int(entry[0]) < n_total):
            raise IndexRangeError(f"load bus {entry[0]} outside 0..{n_total - 1}")
    empty = reduce_network(y, sub, vsub, shunts=shunts, base_power_kw=base_power_kw,
                           base_kv=base_kv, phase_labels=phase_labels)
    loads = _loads_from_slots(load_entries, empty._slot_to_reduced, empty.n)
    return reduce_network(y, sub, vsub, loads, shunts=shunts, base_power_kw=base_power_kw,
                          base_kv=base_kv, phase_labels=phase_labels)


def _require(obj, key, kind):
    if key not in obj:
        raise SchemaError(f"missing required field '{key}'")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"field '{key}' has wrong type {type(value).__name__}")
    return value


def _read_json(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top-level JSON value must be an object")
    n_total = _require(doc, "n_total", int)
    sub = _require(doc, "substation", dict)
    slots = _require(sub, "slots", list)
    volts = _require(sub, "voltages", list)
    if len(volts) != len(slots):
        raise MissingVoltageError(f"{len(slots)} substation slots but {len(volts)} voltages")
    try:
        vsub = np.array([complex(v[0], v[1]) for v in volts])
    except (TypeError, IndexError, ValueError) as exc:
        raise SchemaError("substation voltages must be [re, im] pairs") from exc
    triplets = _require(_require(doc, "ybus", dict), "triplets", list)
    if any(len(t) != 4 for t in triplets):
        raise SchemaError("ybus triplets must be [row, col, g, b]")
    loads = doc.get("loads", [])
    if any(len(t) != 3 for t in loads):
        raise SchemaError("loads must be [bus, p_pu, q_pu]")
    shunts = None
    if "shunts" in doc:
        shunts = np.zeros(n_total, dtype=complex)
        for entry in _require(doc["shunts"], "triplets", list):
            if len(entry) != 3:
                raise SchemaError("shunt triplets must be [i, g, b]")
            i = int(entry[0])
            if not 0 <= i < n_total:
                raise IndexRangeError(f"shunt index {i} outside 0..{n_total - 1}")
            shunts[i] += complex(entry[1], entry[2])
    base_kv = doc.get("bus_base_kv")
    if base_kv is not None and len(base_kv) != n_total:
        raise SchemaError("bus_base_kv length must equal n_total")
    labels = doc.get("phases")
    if labels is not None and len(labels) != n_total:
        raise SchemaError("phases length must equal n_total")
    return _assemble(n_total, triplets, slots, vsub, loads, shunts=shunts,
                     base_power_kw=float(doc.get("base_power_kw", 100.0)),
                     base_kv=base_kv, phase_labels=labels)


def _read_csv_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        if first != header:
            raise SchemaError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                out.append([float(x) for x in row])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        return out


def _read_ybus_csv(path):
    folder = os.path.dirname(os.path.abspath(path))
    trip = _read_csv_rows(path, ["row", "col", "G", "B"])
    arr = np.asarray(trip, dtype=float).reshape(-1, 4)
    arr[:, :2] -= 1
    if arr.size and arr[:, :2].min() < 0:
        raise IndexRangeError("ybus-csv uses 1-based indices; found index 0")
    sub_path = os.path.join(folder, "substation.csv")
    if os.path.exists(sub_path):
        rows = _read_csv_rows(sub_path, ["bus", "V_re", "V_im"])
        slots = [int(r[0]) - 1 for r in rows]
        vsub = [complex(r[1], r[2]) for r in rows]
    else:
        slots, vsub = [0], [1.0 + 0j]
    n_total = int(max(arr[:, :2].max() + 1 if arr.size else 0, max(slots) + 1))
    load_path = os.path.join(folder, "loads.csv")
    loads = []
    if os.path.exists(load_path):
        loads = [[int(r[0]) - 1, r[1], r[2]] for r in _read_csv_rows(load_path, ["bus", "P_pu", "Q_pu"])]
    return _assemble(n_total, arr, slots, vsub, loads)


def load_network(path, fmt=None):
    """Read a per-unit network from JSON or a ``row,col,G,B`` triplet CSV.

    The CSV form looks for sibling ``loads.csv`` (``bus,P_pu,Q_pu``) and
    ``substation.csv`` (``bus,V_re,V_im``) files, all 1-based. Without a
    substation file, slot 1 is the substation at 1∠0.
    """
    if fmt is None:
        fmt = "ybus-csv" if str(path).lower().endswith(".csv") else "json"
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if fmt == "json":
        return _read_json(path)
    if fmt == "ybus-csv":
        return _read_ybus_csv(path)
    raise ValueError(f"unknown network format {fmt!r}")


def canonical_triplets(y):
    """Row-major sorted (row, col, value) arrays of a sparse matrix."""
    c = sp.coo_matrix(y)
    order = np.lexsort((c.col, c.row))
    return c.row[order].astype(np.int64), c.col[order].astype(np.int64), c.data[order]


def _load_entries(net):
    s = net.nominal_loads
    idx = np.flatnonzero((s.p != 0) | (s.q != 0))
    return [[int(net.keep[i]), float(s.p[i]), float(s.q[i])] for i in idx]


def save_network(net, path, fmt=None):
    """Write ``net`` so that ``load_network`` reproduces it exactly."""
    if fmt is None:
        fmt = "ybus-csv" if str(path).lower().endswith(".csv") else "json"
    r, c, v = canonical_triplets(net.ybus_full)
    if fmt == "json":
        doc = {
            "n_total": int(net.n_total),
            "base_power_kw": net.base_power_kw,
            "substation": {
                "slots": [int(s) for s in net.substation_slots],
                "voltages": [[float(z.real), float(z.imag)] for z in net.substation_voltage],
            },
            "ybus": {"triplets": [[int(a), int(b), float(z.real), float(z.imag)]
                                  for a, b, z in zip(r, c, v)]},
            "loads": _load_entries(net),
        }
        if net.shunt_diag is not None:
            nz = np.flatnonzero(net.shunt_diag)
            doc["shunts"] = {"triplets": [[int(i), float(net.shunt_diag[i].real),
                                           float(net.shunt_diag[i].imag)] for i in nz]}
        if net.base_kv is not None:
            doc["bus_base_kv"] = [float(x) for x in net.base_kv]
        if net.phase_labels is not None:
            doc["phases"] = list(net.phase_labels)
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return
    if fmt != "ybus-csv":
        raise ValueError(f"unknown network format {fmt!r}")
    folder = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "G", "B"])
        for a, b, z in zip(r, c, v):
            w.writerow([a + 1, b + 1, repr(float(z.real)), repr(float(z.imag))])
    with open(os.path.join(folder, "loads.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "P_pu", "Q_pu"])
        for slot, pv, qv in _load_entries(net):
            w.writerow([slot + 1, repr(pv), repr(qv)])
    with open(os.path.join(folder, "substation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "V_re", "V_im"])
        for slot, z in zip(net.substation_slots, net.substation_voltage):
            w.writerow([int(slot) + 1, repr(float(z.real)), repr(float(z.imag))])
