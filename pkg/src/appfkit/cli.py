"""``appf-kit`` command-line entry point.

Settings resolve in order: built-in defaults, ``--config`` JSON file,
``APPF_*`` environment variables, then command-line flags. Every output
bundle embeds the fully resolved configuration.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import warnings
from dataclasses import asdict

import numpy as np

from . import __version__, appf, npfs, pfcore, rom, sampling, uq
from .netmodel import NetworkError, load_network

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
ENV_PREFIX = "APPF_"


class ConfigError(ValueError):
    pass


# flag dest -> (section, key, type)
SETTINGS = {
    "network": ("network", "path", str),
    "format": ("network", "format", str),
    "samples": ("sampling", "num_samples", int),
    "sigma": ("sampling", "sigma", float),
    "correlation": ("sampling", "correlation", str),
    "top_k": ("sampling", "top_k", int),
    "fixed_scale": ("sampling", "fixed_scale", float),
    "seed": ("sampling", "seed", int),
    "shared_pq_draw": ("sampling", "shared_pq_draw", lambda v: str(v).lower() in ("1", "true", "yes")),
    "eps_newton": ("solver", "eps_newton", float),
    "k_neumann": ("solver", "k_neumann", int),
    "max_iters": ("solver", "max_newton_iters", int),
    "d_policy": ("solver", "d_update_policy", str),
    "eps_rms": ("rom", "eps_rms", float),
    "eps_basis": ("rom", "eps_basis", float),
    "n_q": ("rom", "n_q", int),
    "max_rms_iters": ("rom", "max_rms_iters", int),
    "workers": ("run", "workers", int),
    "nominal": ("run", "nominal", str),
    "out": ("run", "output", str),
}


def default_config():
    return {
        "network": {"path": None, "format": None},
        "sampling": sampling.SamplingSpec().to_dict(),
        "solver": asdict(npfs.NpfsConfig()),
        "rom": asdict(rom.RomConfig()),
        "run": {"workers": 1, "nominal": "center", "output": None},
    }


def _merge(base, over):
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def resolve_config(args, environ=None):
    """Merge defaults, config file, environment and flags into one dict."""
    environ = os.environ if environ is None else environ
    cfg = default_config()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                _merge(cfg, json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
    for dest, (section, key, kind) in SETTINGS.items():
        env = environ.get(ENV_PREFIX + dest.upper())
        if env is not None:
            try:
                cfg[section][key] = kind(env)
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}{dest.upper()}={env!r} is not a valid {kind.__name__}")
    for dest, (section, key, _) in SETTINGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            cfg[section][key] = val
    cfg["run"]["mode"] = args.command
    return cfg


def _build(cfg):
    try:
        spec = sampling.SamplingSpec.from_dict(cfg["sampling"])
        ppf_cfg = appf.PpfConfig(solver=npfs.NpfsConfig(**cfg["solver"]),
                                 rom=rom.RomConfig(**cfg["rom"]), workers=cfg["run"]["workers"])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    if cfg["run"]["nominal"] not in ("center", "network"):
        raise ConfigError("nominal must be 'center' or 'network'")
    return spec, ppf_cfg


def _network(cfg):
    path = cfg["network"]["path"]
    if not path:
        raise ConfigError("--network is required")
    if not os.path.exists(path):
        raise ConfigError(f"network file not found: {path}")
    return load_network(path, cfg["network"]["format"])


def _emit(obj):
    print(json.dumps(obj, default=appf._json_default))


def _samples(cfg, net, spec):
    samples = sampling.generate_samples(spec, net.nominal_loads)
    if cfg["run"]["nominal"] == "center":
        nominal = sampling.center_profile(spec, net.nominal_loads)
    else:
        nominal = net.nominal_loads
    return samples, nominal


def _solution_rows(net, vs):
    for i in range(net.n):
        b = net.bus_id(i)
        yield [b.index, b.phase_label or "", repr(float(vs.v_mag[i])), repr(float(vs.v_ang[i]))]


def cmd_solve(args, cfg):
    net = _network(cfg)
    _, ppf_cfg = _build(cfg)
    factors = npfs.prepare(net)
    vs, st = npfs.npfs_solve(factors, net, net.nominal_loads, pfcore.flat_start(net), ppf_cfg.solver)
    stats = {"converged": st.converged, "newton_iters": st.newton_iters,
             "final_residual_inf": st.final_residual_inf, "wall_time": st.wall_time,
             "guard_trips": st.guard_trips}
    out = cfg["run"]["output"]
    header = ["slot", "phase", "V_pu", "theta_rad"]
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "solution.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(_solution_rows(net, vs))
        appf.write_json(os.path.join(out, "solve.json"), {"stats": stats, "config": cfg})
        _emit(stats)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(_solution_rows(net, vs))
    if not st.converged:
        print(f"error: no convergence after {st.newton_iters} iterations "
              f"(residual {st.final_residual_inf:.3g})", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _out_dir(cfg):
    out = cfg["run"]["output"] or "appf-out"
    cfg["run"]["output"] = out
    os.makedirs(out, exist_ok=True)
    return out


def _brief(result):
    paths = [r.path for r in result.records]
    return {"method": result.method, "samples": result.num_samples, "rom_final_q": result.rom_final_q,
            "paths": {p: paths.count(p) for p in appf.PATHS if p in paths},
            "max_residual": max((r.final_residual_inf for r in result.records), default=0.0),
            "timings": result.timings}


def cmd_run(args, cfg):
    net = _network(cfg)
    spec, ppf_cfg = _build(cfg)
    samples, nominal = _samples(cfg, net, spec)
    out = _out_dir(cfg)
    if args.dump_samples:
        sampling.write_samples_csv(os.path.join(out, "samples.csv"), samples, net.keep)
    if args.command == "ppf":
        result = appf.traditional_ppf_run(net, samples, ppf_cfg)
    else:
        start = rom.load_rom(args.rom_in, net) if args.rom_in else None
        result = appf.appf_run(net, samples, ppf_cfg, nominal=nominal, rom=start)
        if args.rom_out:
            rom.save_rom(result.rom, args.rom_out)
    appf.write_result(result, out, {"resolved": cfg})
    _emit(_brief(result))
    return EXIT_OK


def cmd_compare(args, cfg):
    net = _network(cfg)
    spec, ppf_cfg = _build(cfg)
    samples, nominal = _samples(cfg, net, spec)
    out = _out_dir(cfg)
    a = appf.appf_run(net, samples, ppf_cfg, nominal=nominal)
    b = appf.traditional_ppf_run(net, samples, ppf_cfg)
    appf.write_result(a, os.path.join(out, "appf"), {"resolved": cfg})
    appf.write_result(b, os.path.join(out, "traditional"), {"resolved": cfg})
    report = appf.compare(a, b, net)
    report["config"] = cfg
    appf.write_json(os.path.join(out, "report.json"), report)
    _emit({k: report[k] for k in ("max_abs_dv", "residual_ok_a", "residual_ok_b", "wall_time_ratio",
                                  "steady_state", "phase_transition_index", "rom_final_q")})
    return EXIT_OK


def cmd_check(args, cfg):
    net = _network(cfg)
    _, ppf_cfg = _build(cfg)
    factors = npfs.prepare(net)
    vs, st = npfs.npfs_solve(factors, net, net.nominal_loads, pfcore.flat_start(net), ppf_cfg.solver)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        margin = npfs.convergence_margin(net, vs, factors)
        ratio = npfs.admittance_current_ratio(net, vs)
    report = {"margin": margin, "admittance_current_ratio": ratio,
              "state": "nominal solution" if st.converged else "last Newton iterate",
              "max_current": float(np.max(np.abs(pfcore.injected_currents(net, vs)), initial=0.0)),
              "min_voltage": float(vs.v_mag.min(initial=np.inf)) if net.n else None}
    _emit(report)
    if margin < npfs.MARGIN_WARNING:
        print(f"warning: convergence margin {margin:.3g} is below {npfs.MARGIN_WARNING:g}",
              file=sys.stderr)
    return EXIT_OK


def cmd_stats(args, cfg):
    if not args.results:
        raise ConfigError("--results is required")
    if not os.path.isdir(args.results):
        raise ConfigError(f"results directory not found: {args.results}")
    result = appf.read_result(args.results)
    summary = uq.summarize(result, bins=args.bins)
    summary.singular_values = uq.singular_values(result, args.count)
    if args.edge:
        net = _network(cfg)
        try:
            f, t = (int(x) for x in args.edge.split(","))
        except ValueError:
            raise ConfigError("--edge must be FROM,TO slot indices")
        hist = uq.branch_current_stats(net, result, (f, t), bins=args.bins)
        summary.branch_histograms[f"{f}-{t}"] = hist
    out = cfg["run"]["output"] or args.results
    os.makedirs(out, exist_ok=True)
    uq.write_summary_json(summary, os.path.join(out, "uq_summary.json"))
    uq.write_histogram_csv(os.path.join(out, "voltage_histogram.csv"), summary.hist_edges,
                           summary.hist_counts)
    for key, h in summary.branch_histograms.items():
        uq.write_histogram_csv(os.path.join(out, f"current_histogram_{key}.csv"), h["edges"], h["counts"])
    _emit({"samples": result.num_samples, "nodes": result.n,
           "v_min": float(summary.v_min.min()), "v_max": float(summary.v_max.max()),
           "singular_values": summary.singular_values[:10]})
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="appf-kit", description="Accelerated probabilistic power flow.")
    p.add_argument("--version", action="version", version=f"appf-kit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--network", help="network file (JSON or Y-bus CSV)")
        sp.add_argument("--format", choices=["json", "ybus-csv"])
        sp.add_argument("--config", help="run-config JSON")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--eps-newton", dest="eps_newton", type=float)
        sp.add_argument("--k-neumann", dest="k_neumann", type=int)
        sp.add_argument("--max-iters", dest="max_iters", type=int)
        sp.add_argument("--d-policy", dest="d_policy", choices=list(npfs.POLICIES))

    def sampled(sp):
        sp.add_argument("--samples", type=int)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--correlation", choices=list(sampling.CORRELATIONS))
        sp.add_argument("--top-k", dest="top_k", type=int)
        sp.add_argument("--fixed-scale", dest="fixed_scale", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--shared-pq-draw", dest="shared_pq_draw", action="store_const", const=True)
        sp.add_argument("--eps-rms", dest="eps_rms", type=float)
        sp.add_argument("--eps-basis", dest="eps_basis", type=float)
        sp.add_argument("--n-q", dest="n_q", type=int)
        sp.add_argument("--max-rms-iters", dest="max_rms_iters", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--nominal", choices=["center", "network"],
                        help="ROM anchor: zero-perturbation sample (default) or file loads")
        sp.add_argument("--dump-samples", action="store_true")

    sp = sub.add_parser("solve", help="one power flow from the flat start")
    common(sp)
    for name, helptext in (("ppf", "traditional Newton PPF"), ("appf", "accelerated PPF")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sampled(sp)
        if name == "appf":
            sp.add_argument("--rom-in", help="reduced-model checkpoint to start from")
            sp.add_argument("--rom-out", help="write the final reduced model here")
    sp = sub.add_parser("compare", help="run both pipelines and report")
    common(sp)
    sampled(sp)
    sp = sub.add_parser("check", help="Neumann convergence margin at the nominal solution")
    common(sp)
    sp = sub.add_parser("stats", help="statistics of a stored result bundle")
    common(sp)
    sp.add_argument("--results", help="directory written by ppf/appf")
    sp.add_argument("--bins", type=int, default=100)
    sp.add_argument("--count", type=int, default=None, help="number of singular values")
    sp.add_argument("--edge", help="FROM,TO full-network slots for a branch-current histogram")
    return p


COMMANDS = {"solve": cmd_solve, "ppf": cmd_run, "appf": cmd_run, "compare": cmd_compare,
            "check": cmd_check, "stats": cmd_stats}


def main(argv=None):
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        code = COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except appf.SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except NetworkError as e:
        print(f"network error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, IndexError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if os.environ.get(ENV_PREFIX + "VERBOSE"):
        print(f"done in {time.perf_counter() - t0:.3f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
