"""Newton power flow with Neumann-series inner solves.

Every Newton step solves ``J dx = -g`` with ``J = <d(V)> (N<Y_b> + D) R(V)``.
``N<Y_b>`` is constant and factored once; the small per-bus perturbation
``D = <d(V)>^-1 <d(conj I)>`` is handled by a truncated alternating series
of solves against those fixed factors.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import pfcore
from .netmodel import LoadProfile, NetworkModel
from .pfcore import VoltageState
from .sparla import LdlFactors, febs, ldl_factorize, minimum_degree, spectral_radius_estimate

MARGIN_WARNING = 10.0
POLICIES = ("full", "frozen", "every_m")


@dataclass(frozen=True)
class NpfsConfig:
    eps_newton: float = 1e-4
    k_neumann: int = 3
    max_newton_iters: int = 30
    d_update_policy: str = "full"
    d_update_every: int = 1
    check_margin: bool = False
    guard: bool = True

    def __post_init__(self):
        if not self.eps_newton > 0:
            raise ValueError("eps_newton must be positive")
        if self.k_neumann < 0:
            raise ValueError("k_neumann must be >= 0")
        if self.max_newton_iters < 0:
            raise ValueError("max_newton_iters must be >= 0")
        if self.d_update_policy not in POLICIES:
            raise ValueError(f"d_update_policy must be one of {POLICIES}")
        if self.d_update_every < 1:
            raise ValueError("d_update_every must be >= 1")

    def refresh_at(self, it):
        if self.d_update_policy == "full":
            return True
        if self.d_update_policy == "frozen":
            return it == 0
        return it % self.d_update_every == 0


@dataclass
class SolveStats:
    newton_iters: int = 0
    neumann_terms_per_iter: int = 0
    final_residual_inf: float = float("inf")
    wall_time: float = 0.0
    converged: bool = False
    guard_trips: int = 0
    step_times: list = field(default_factory=list)
    margin: float = float("nan")


@dataclass
class NeumannInfo:
    term_norms: list
    diverged: bool
    first: np.ndarray

    @property
    def terms_used(self):
        return len(self.term_norms)


def bus_paired_order(net: NetworkModel):
    """Minimum-degree order on the bus graph with both real rows of a bus adjacent."""
    order = minimum_degree(net.ybus_reduced)
    n = net.n
    return np.column_stack([order, order + n]).ravel()


def prepare(net: NetworkModel) -> LdlFactors:
    """Factor the constant ``N<Y_b>`` once for all samples and Newton steps."""
    return ldl_factorize(pfcore.build_n_ybus(net), perm=bus_paired_order(net))


def perturbation(net: NetworkModel, vs: VoltageState, currents=None):
    """Per-bus complex factor of D: ``conj(I) / V``."""
    if currents is None:
        currents = pfcore.injected_currents(net, vs)
    return np.conj(currents) / vs.phasor


def _apply_d(c, z):
    n = c.size
    w = c * (z[:n] + 1j * z[n:])
    return np.concatenate([w.real, w.imag])


def neumann_apply(f: LdlFactors, d_diag, rhs, k, guard=True):
    """Approximate the solution of ``(N + D) y = rhs`` by k+1 series terms.

    ``d_diag`` is the complex per-bus factor of D. With ``guard`` set, a
    term larger in norm than its predecessor stops the series (the sum up to
    the previous term is returned) and ``info.diverged`` is raised.
    """
    z = febs(f, rhs)
    first = z
    y = z.copy()
    norms = [float(np.linalg.norm(z))]
    diverged = False
    sign = 1.0
    for _ in range(k):
        z = febs(f, _apply_d(d_diag, z))
        nz = float(np.linalg.norm(z))
        if nz > norms[-1]:
            diverged = True
            if guard:
                break
        norms.append(nz)
        sign = -sign
        y += sign * z
    return y, NeumannInfo(norms, diverged, first)


def _residual(net, vs, s_spec):
    cur = pfcore.injected_currents(net, vs)
    g = vs.phasor * np.conj(cur) - s_spec
    return cur, g, max(np.max(np.abs(g.real), initial=0.0), np.max(np.abs(g.imag), initial=0.0))


def npfs_solve(f: LdlFactors, net: NetworkModel, s_spec, x0: VoltageState, cfg=NpfsConfig()):
    """Solve ``s(x) = S`` by Newton steps with Neumann-approximated solves.

    Returns ``(state, stats)``. Hitting ``max_newton_iters`` is reported
    through ``stats.converged`` rather than raised.
    """
    t_start = time.perf_counter()
    spec = s_spec.complex if isinstance(s_spec, LoadProfile) else pfcore.to_complex(np.asarray(s_spec))
    stats = SolveStats(neumann_terms_per_iter=cfg.k_neumann)
    vs = x0
    if cfg.check_margin:
        stats.margin = convergence_margin(net, vs, factors=f)
    c = v_ref = vs_ref = None
    it = 0
    while True:
        cur, g, res = _residual(net, vs, spec)
        stats.final_residual_inf = res
        if res < cfg.eps_newton:
            stats.converged = True
            break
        if it >= cfg.max_newton_iters or not np.isfinite(res):
            break
        t_step = time.perf_counter()
        if c is None or cfg.refresh_at(it):
            vs_ref = vs
            v_ref = vs.phasor
            c = np.conj(cur) / v_ref
        b = -g / v_ref
        y, info = neumann_apply(f, c, np.concatenate([b.real, b.imag]), cfg.k_neumann, cfg.guard)
        if info.diverged and cfg.guard:
            y = info.first
            stats.guard_trips += 1
        dx = pfcore.solve_r_block(vs_ref, y)
        x = vs.polar() + dx
        n = vs.n
        mag, ang = x[:n], x[n:]
        neg = mag < 0
        if np.any(neg):
            mag = np.abs(mag)
            ang = np.where(neg, ang + np.pi, ang)
        vs = VoltageState(mag, ang)
        it += 1
        stats.step_times.append(time.perf_counter() - t_step)
    stats.newton_iters = it
    stats.wall_time = time.perf_counter() - t_start
    return vs, stats


def convergence_margin(net: NetworkModel, vs: VoltageState, factors=None, iters=200, seed=0,
                       currents=None, warn=True):
    """Safety factor of the Neumann series at state ``vs``.

    The series contracts by at most ``||N^-1 D||_2 <= max|c| / sigma_min``
    per term, where ``c = conj(I)/V`` and ``sigma_min = 1 / rho(N<Y_b>^-1)``
    (``N<Y_b>`` is symmetric, so its 2-norm inverse equals the spectral
    radius of the inverse). The returned margin is ``sigma_min / max|c|``:
    above 1 the series converges, and each term shrinks by roughly its
    reciprocal. Zero currents give ``inf``.
    """
    if factors is None:
        factors = prepare(net)
    c = perturbation(net, vs, currents)
    cmax = float(np.max(np.abs(c), initial=0.0))
    if cmax == 0.0:
        return float("inf")
    rho_inv = spectral_radius_estimate(lambda v: febs(factors, v), 2 * net.n, iters, seed)
    margin = 1.0 / (rho_inv * cmax)
    if warn and margin < MARGIN_WARNING:
        warnings.warn(f"Neumann convergence margin {margin:.3g} is below {MARGIN_WARNING:g}",
                      stacklevel=2)
    return margin


def admittance_current_ratio(net: NetworkModel, vs: VoltageState, iters=200, seed=0):
    """Dominant eigenvalue modulus of the line admittance part over max |I|.

    Uses ``Y_b - Y_s`` when shunts are known, otherwise ``Y_b`` (approximate).
    """
    y = net.ybus_reduced
    shunts = net.shunts_reduced()
    if shunts is not None:
        import scipy.sparse as sp

        y = y - sp.diags(shunts)
    imax = float(np.max(np.abs(pfcore.injected_currents(net, vs)), initial=0.0))
    if imax == 0.0:
        return float("inf")
    rho = spectral_radius_estimate(lambda v: y @ v, net.n, iters, seed, dtype=complex)
    return rho / imax
