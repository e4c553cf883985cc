"""Probabilistic power flow drivers.

``appf_run`` solves each sample with the reduced model first and falls back
to the Neumann-Newton solver (followed by a basis expansion) only when the
reduced solution misses the full-order tolerance. ``traditional_ppf_run``
is the reference pipeline: warm-started polar Newton with a fresh sparse
LU of the Jacobian on every iteration.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import npfs, pfcore
from .netmodel import LoadProfile, NetworkModel
from .npfs import NpfsConfig
from .pfcore import VoltageState
from .rom import RomConfig, dse_update, rms_solve, rom_init

PATHS = ("rms_only", "rms_then_npfs", "npfs_only")


class SolverError(RuntimeError):
    """A sample failed to converge; carries its index and solver statistics."""

    def __init__(self, sample_index, residual, iters):
        label = "nominal case" if sample_index is None else f"sample {sample_index}"
        super().__init__(f"{label} did not converge: residual {residual:.3g} after {iters} iterations")
        self.sample_index = sample_index
        self.residual = residual
        self.iters = iters


@dataclass(frozen=True)
class RunRecord:
    """Per-sample provenance.

    ``path`` is ``rms_only`` when the reduced model alone met the
    tolerance, ``rms_then_npfs`` when the full-order solver had to finish
    the job, and ``npfs_only`` for full-order solves without a reduced
    model (the baseline). ``wall_time`` is excluded from equality so that
    reruns compare equal.
    """

    sample_index: int
    path: str
    rms_iters: int
    newton_iters: int
    expanded_basis: bool
    q_after: int
    final_residual_inf: float
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PpfConfig:
    solver: NpfsConfig = NpfsConfig()
    rom: RomConfig = RomConfig()
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self):
        return {"solver": asdict(self.solver), "rom": asdict(self.rom), "workers": self.workers}

    @classmethod
    def from_dict(cls, d):
        return cls(solver=NpfsConfig(**d.get("solver", {})), rom=RomConfig(**d.get("rom", {})),
                   workers=int(d.get("workers", 1)))


@dataclass
class PpfResult:
    """Solutions (polar, one column per sample), records and run metadata.

    ``rom`` holds the final reduced model of an APPF run.
    """

    method: str
    solutions: np.ndarray
    records: list
    config: dict
    rom_final_q: int = 0
    timings: dict = field(default_factory=dict)
    samples: list | None = None
    rom: object = None

    @property
    def num_samples(self):
        return self.solutions.shape[1]

    @property
    def n(self):
        return self.solutions.shape[0] // 2

    def magnitudes(self):
        return self.solutions[:self.n]

    def cartesian(self):
        v = self.solutions[:self.n] * np.exp(1j * self.solutions[self.n:])
        return np.vstack([v.real, v.imag])

    def state(self, i):
        return VoltageState.from_polar(self.solutions[:, i])


def _res_inf(net, vs, s):
    return float(np.max(np.abs(pfcore.mismatch(net, vs, s))))


def solve_nominal(net: NetworkModel, nominal: LoadProfile, cfg: NpfsConfig, factors=None):
    """NPFS from the flat start; raises :class:`SolverError` on failure."""
    factors = npfs.prepare(net) if factors is None else factors
    vs, st = npfs.npfs_solve(factors, net, nominal, pfcore.flat_start(net), cfg)
    if not st.converged:
        raise SolverError(None, st.final_residual_inf, st.newton_iters)
    return vs, st


def appf_run(net: NetworkModel, samples, cfg=PpfConfig(), nominal=None, rom=None):
    """Accelerated PPF over ``samples``, strictly sequential.

    The reduced model is anchored at the solution for ``nominal``
    (``net.nominal_loads`` by default). Passing an existing model as
    ``rom`` skips the nominal solve and continues from it; that model is
    updated in place.
    """
    t_run = time.perf_counter()
    nominal = net.nominal_loads if nominal is None else nominal
    eps = cfg.solver.eps_newton
    t = time.perf_counter()
    factors = npfs.prepare(net)
    t_factor = time.perf_counter() - t
    t = time.perf_counter()
    if rom is None:
        x_nom, _ = solve_nominal(net, nominal, cfg.solver, factors)
        rm = rom_init(net, x_nom, None, cfg.rom)
    else:
        rm = rom
        x_nom = rm.reconstruct(np.zeros(rm.q))
    t_nominal = time.perf_counter() - t

    sols = np.empty((2 * net.n, len(samples)))
    records = []
    step_times = []
    t_expand = 0.0
    prev = x_nom
    for i, s in enumerate(samples):
        t0 = time.perf_counter()
        out = rms_solve(rm, rm.project_load(s), net, s)
        finite = bool(np.all(np.isfinite(out.delta)))
        rm.delta_x_hat = out.delta if finite else np.zeros(rm.q)
        if finite and out.full_residual_inf < eps:
            vs, path, newton, res, expanded = out.state, "rms_only", 0, out.full_residual_inf, False
        else:
            start = out.state if finite and np.all(np.isfinite(out.state.phasor)) else prev
            vs, st = npfs.npfs_solve(factors, net, s, start, cfg.solver)
            if not st.converged:
                raise SolverError(i, st.final_residual_inf, st.newton_iters)
            step_times.extend(st.step_times)
            te = time.perf_counter()
            expanded = dse_update(rm, vs).expanded
            t_expand += time.perf_counter() - te
            path, newton, res = "rms_then_npfs", st.newton_iters, st.final_residual_inf
        sols[:, i] = vs.polar()
        prev = vs
        records.append(RunRecord(i, path, out.iters, newton, expanded, rm.q, res,
                                 time.perf_counter() - t0))
    timings = {
        "factorization": t_factor,
        "nominal": t_nominal,
        "expansion": t_expand,
        "samples": sum(r.wall_time for r in records),
        "total": time.perf_counter() - t_run,
        "npfs_step_mean": float(np.mean(step_times)) if step_times else float("nan"),
    }
    return PpfResult("appf", sols, records, cfg.to_dict(), rm.q, timings, list(samples), rm)


def newton_solve(net: NetworkModel, s_spec, x0: VoltageState, eps=1e-4, max_iters=30, n_ybus=None):
    """Polar Newton with a sparse LU of the Jacobian at every iteration.

    Returns ``(state, iters, residual_inf, converged, step_times)``.
    """
    n_ybus = pfcore.build_n_ybus(net) if n_ybus is None else n_ybus
    spec = s_spec.stacked() if isinstance(s_spec, LoadProfile) else np.asarray(s_spec)
    vs = x0
    steps = []
    it = 0
    while True:
        g = pfcore.power_injections(net, vs) - spec
        res = float(np.max(np.abs(g)))
        if res < eps:
            return vs, it, res, True, steps
        if it >= max_iters or not np.isfinite(res):
            return vs, it, res, False, steps
        t = time.perf_counter()
        jac = pfcore.jacobian_polar(net, vs, n_ybus)
        dx = spla.splu(jac.tocsc()).solve(-g)
        x = vs.polar() + dx
        n = vs.n
        mag, ang = x[:n], x[n:]
        neg = mag < 0
        if np.any(neg):
            mag = np.abs(mag)
            ang = np.where(neg, ang + np.pi, ang)
        vs = VoltageState(mag, ang)
        it += 1
        steps.append(time.perf_counter() - t)


def _baseline_chunk(net, samples, indices, cfg, n_ybus):
    eps = cfg.solver.eps_newton
    vs = pfcore.flat_start(net)
    out = []
    for i in map(int, indices):
        t0 = time.perf_counter()
        vs, it, res, ok, steps = newton_solve(net, samples[i], vs, eps, cfg.solver.max_newton_iters,
                                              n_ybus)
        if not ok:
            raise SolverError(i, res, it)
        out.append((i, vs.polar(), RunRecord(i, "npfs_only", 0, it, False, 0, res,
                                             time.perf_counter() - t0), steps))
    return out


def traditional_ppf_run(net: NetworkModel, samples, cfg=PpfConfig()):
    """Reference PPF: each sample warm-starts from the previous one.

    With ``cfg.workers > 1`` contiguous chunks run on a thread pool, each
    chunk starting from the flat start.
    """
    t_run = time.perf_counter()
    n_ybus = pfcore.build_n_ybus(net)
    m = len(samples)
    chunks = [c for c in np.array_split(np.arange(m), min(cfg.workers, max(m, 1))) if c.size]
    if len(chunks) <= 1:
        parts = [_baseline_chunk(net, samples, np.arange(m), cfg, n_ybus)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: _baseline_chunk(net, samples, c, cfg, n_ybus), chunks))
    sols = np.empty((2 * net.n, m))
    records = [None] * m
    steps = []
    for part in parts:
        for i, x, rec, st in part:
            sols[:, i] = x
            records[i] = rec
            steps.extend(st)
    timings = {
        "samples": sum(r.wall_time for r in records),
        "total": time.perf_counter() - t_run,
        "newton_step_mean": float(np.mean(steps)) if steps else float("nan"),
    }
    return PpfResult("traditional", sols, records, cfg.to_dict(), 0, timings, list(samples))


def steady_state_start(records):
    """Index just past the last sample that left the reduced-only path."""
    last = -1
    for r in records:
        if r.path != "rms_only":
            last = r.sample_index
    return last + 1


def phase_transition_index(records, fraction=0.95):
    """Smallest i such that at least ``fraction`` of ``records[i:]`` are rms_only."""
    flags = np.array([r.path == "rms_only" for r in records], dtype=float)
    m = flags.size
    tail = np.cumsum(flags[::-1])[::-1]
    counts = m - np.arange(m)
    ok = np.flatnonzero(tail >= fraction * counts - 1e-12)
    return int(ok[0]) if ok.size else None


def compare(a: PpfResult, b: PpfResult, net: NetworkModel | None = None, eps=None):
    """Equivalence and timing report for two runs over the same samples.

    ``a`` is the candidate (typically APPF) and ``b`` the reference; time
    ratios are ``b / a``, so values above 1 mean ``a`` is faster.
    """
    if a.num_samples != b.num_samples:
        raise ValueError(f"sample counts differ: {a.num_samples} vs {b.num_samples}")
    if a.n != b.n:
        raise ValueError(f"state sizes differ: {a.n} vs {b.n}")
    dv = np.abs(a.magnitudes() - b.magnitudes())
    per_sample = dv.max(axis=0) if dv.size else np.zeros(a.num_samples)
    report = {
        "num_samples": a.num_samples,
        "methods": [a.method, b.method],
        "max_abs_dv": float(per_sample.max(initial=0.0)),
        "per_sample_max_dv": per_sample.tolist(),
    }
    if net is not None and a.samples is not None:
        eps = a.config.get("solver", {}).get("eps_newton", 1e-4) if eps is None else eps
        ra = [_res_inf(net, a.state(i), a.samples[i]) for i in range(a.num_samples)]
        rb = [_res_inf(net, b.state(i), b.samples[i]) for i in range(b.num_samples)]
        report.update(max_residual_a=max(ra, default=0.0), max_residual_b=max(rb, default=0.0),
                      residual_ok_a=all(r < eps for r in ra), residual_ok_b=all(r < eps for r in rb))
    ta = a.timings.get("samples", sum(r.wall_time for r in a.records))
    tb = b.timings.get("samples", sum(r.wall_time for r in b.records))
    report["sample_time_a"] = ta
    report["sample_time_b"] = tb
    report["wall_time_ratio"] = tb / ta if ta > 0 else float("inf")
    start = steady_state_start(a.records)
    steady = [r.wall_time for r in a.records[start:] if r.path == "rms_only"]
    base = np.mean([r.wall_time for r in b.records]) if b.records else float("nan")
    mean_a = float(np.mean(steady)) if steady else float("nan")
    report["steady_state"] = {
        "first_index": start,
        "samples": len(steady),
        "mean_time_a": mean_a,
        "mean_time_b": float(base),
        "ratio": float(base / mean_a) if steady and mean_a > 0 else float("nan"),
    }
    rms_only = [r.wall_time for r in a.records if r.path == "rms_only"]
    report["rms_only"] = {
        "samples": len(rms_only),
        "mean_time": float(np.mean(rms_only)) if rms_only else float("nan"),
        "ratio": float(base / np.mean(rms_only)) if rms_only else float("nan"),
    }
    report["phase_transition_index"] = phase_transition_index(a.records)
    report["step_time"] = {
        "npfs_step_mean": a.timings.get("npfs_step_mean", float("nan")),
        "newton_step_mean": b.timings.get("newton_step_mean", float("nan")),
    }
    report["rom_final_q"] = a.rom_final_q
    return report


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default, allow_nan=True)
        fh.write("\n")


def write_result(result: PpfResult, outdir, extra_config=None):
    """Write ``solutions.csv``, ``records.jsonl`` and ``config.json`` to ``outdir``.

    Solutions are one row per sample: magnitudes then angles of every
    non-substation slot, printed with round-trip precision.
    """
    os.makedirs(outdir, exist_ok=True)
    n = result.n
    with open(os.path.join(outdir, "solutions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"V{i}" for i in range(n)] + [f"theta{i}" for i in range(n)])
        for i in range(result.num_samples):
            w.writerow([i] + [repr(float(v)) for v in result.solutions[:, i]])
    with open(os.path.join(outdir, "records.jsonl"), "w") as fh:
        for r in result.records:
            fh.write(json.dumps(r.to_dict(), default=_json_default) + "\n")
    config = dict(result.config)
    if extra_config:
        config.update(extra_config)
    write_json(os.path.join(outdir, "config.json"), {
        "method": result.method, "rom_final_q": result.rom_final_q,
        "timings": result.timings, "config": config})


def read_result(outdir):
    """Load a result bundle written by :func:`write_result` (without samples)."""
    with open(os.path.join(outdir, "config.json")) as fh:
        meta = json.load(fh)
    rows = []
    with open(os.path.join(outdir, "solutions.csv"), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for r in reader:
            rows.append([float(v) for v in r[1:]])
    records = []
    with open(os.path.join(outdir, "records.jsonl")) as fh:
        for line in fh:
            if line.strip():
                records.append(RunRecord(**json.loads(line)))
    sols = np.array(rows, dtype=float).T if rows else np.empty((0, 0))
    return PpfResult(meta["method"], sols, records, meta["config"], meta.get("rom_final_q", 0),
                     meta.get("timings", {}))
