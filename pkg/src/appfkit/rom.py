"""Quadratic reduced-order model of the power-flow residual.

In Cartesian coordinates the injections are exactly quadratic, so around an
expansion point ``x_c0``

    s(x_c0 + d) = s0 + J_c0 d + 1/2 H(d, d).

Restricting ``d = V delta`` to an orthonormal basis and projecting onto
``J_hat = J_c0 V`` gives the small square system

    g_hat(delta) = s0_hat + G_hat delta + 1/2 H_hat (delta_h kron delta_h) - S_hat

with ``G_hat = J_hat^T J_hat``, ``H_hat = J_hat^T H(V kron V)`` and
``S_hat = J_hat^T S``. Only the first ``q_h = min(q, n_q)`` coordinates
(``delta_h``) enter the quadratic term. Kronecker columns are ordered
row-major over index pairs ``(i, j)``, i.e. column ``i * q_h + j``.

The basis grows greedily from full-order solutions the model could not
reproduce; every projected operator is bordered in place.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from . import pfcore
from .netmodel import LoadProfile, NetworkModel
from .pfcore import VoltageState


@dataclass(frozen=True)
class RomConfig:
    eps_basis: float = 1e-4
    n_q: int = 37
    eps_rms: float = 1e-5
    max_rms_iters: int = 50

    def __post_init__(self):
        if not (self.eps_basis > 0 and self.eps_rms > 0):
            raise ValueError("ROM tolerances must be positive")
        if self.n_q < 1:
            raise ValueError("n_q must be >= 1")
        if self.max_rms_iters < 1:
            raise ValueError("max_rms_iters must be >= 1")


class RmsOutcome(NamedTuple):
    delta: np.ndarray
    state: VoltageState
    full_residual_inf: float
    iters: int
    converged: bool


@dataclass(frozen=True)
class ExpansionReport:
    expanded: bool
    q: int
    residual_norm: float


class ReducedModel:
    """Mutable reduced model; one owner, calls strictly serialized.

    Attributes
    ----------
    basis : (2n, q) orthonormal V
    j_hat : (2n, q) ``J_c0 V``
    g_hat : (q, q) ``J_hat^T J_hat``; its Cholesky factor is cached
    h_v : (2n, q_h, q_h) ``H(v_i, v_j)``, symmetric in the last two axes
    h_hat : (q, q_h, q_h) ``J_hat^T h_v``
    s0_hat, x_c0_hat, delta_x_hat : length-q vectors
    """

    def __init__(self, net, cfg, x_c0, s0, j_c0):
        self.net = net
        self.cfg = cfg
        self.x_c0 = x_c0
        self.s0 = s0
        self.j_c0 = j_c0
        norm = np.linalg.norm(x_c0)
        if norm == 0.0:
            raise ValueError("expansion point must be nonzero")
        v = (x_c0 / norm)[:, None]
        self.basis = v
        self.j_hat = np.asarray(j_c0 @ v)
        self.g_hat = self.j_hat.T @ self.j_hat
        self.h_v = pfcore.hessian_apply(net, v[:, 0], v[:, 0])[:, None, None].copy()
        self.h_hat = np.einsum("kq,kij->qij", self.j_hat, self.h_v)
        self.s0_hat = self.j_hat.T @ s0
        self.x_c0_hat = np.array([norm])
        self.delta_x_hat = np.zeros(1)
        self._refactor()

    @property
    def q(self):
        return self.basis.shape[1]

    @property
    def q_h(self):
        return self.h_v.shape[1]

    @property
    def n_q(self):
        return self.cfg.n_q

    @property
    def eps_basis(self):
        return self.cfg.eps_basis

    @property
    def eps_rms(self):
        return self.cfg.eps_rms

    @property
    def kron_order(self):
        """``(q_h**2, 2)`` array of the index pair behind each Kronecker column."""
        i, j = np.divmod(np.arange(self.q_h ** 2), self.q_h)
        return np.column_stack([i, j])

    def h_v_matrix(self):
        return self.h_v.reshape(self.h_v.shape[0], -1)

    def h_hat_matrix(self):
        return self.h_hat.reshape(self.q, -1)

    def _refactor(self):
        self._cho = sla.cho_factor(self.g_hat)

    def solve_g(self, rhs):
        return sla.cho_solve(self._cho, rhs)

    def project_load(self, s_spec):
        """``S_hat = J_hat^T S``."""
        return self.j_hat.T @ _stacked(s_spec)

    def reconstruct(self, delta):
        return VoltageState.from_cartesian(self.basis @ (delta + self.x_c0_hat))

    def snapshot(self):
        """Deep copy for read-only concurrent use (shares the network)."""
        net = self.net
        self.net = None
        try:
            dup = copy.deepcopy(self)
        finally:
            self.net = net
        dup.net = net
        return dup


def _stacked(s):
    return s.stacked() if isinstance(s, LoadProfile) else np.asarray(s, dtype=float)


def rom_init(net: NetworkModel, x0: VoltageState, s0=None, cfg=RomConfig()):
    """One-dimensional model anchored at the converged nominal state ``x0``.

    ``s0`` defaults to the injections ``s(x0)`` computed at the state, which
    makes the quadratic expansion exact; passing the nominal load profile
    instead shifts the model by the nominal solve's residual.
    """
    x_c0 = x0.cartesian()
    s0 = pfcore.power_injections(net, x0) if s0 is None else _stacked(s0)
    j_c0 = pfcore.jacobian_cartesian(net, x0)
    return ReducedModel(net, cfg, x_c0, s0, j_c0)


def reduced_residual(rm: ReducedModel, delta, s_hat):
    """``g_hat(delta)``; the quadratic term sees only the first ``q_h`` entries."""
    dh = delta[:rm.q_h]
    quad = rm.h_hat_matrix() @ np.outer(dh, dh).ravel()
    return rm.s0_hat + rm.g_hat @ delta + 0.5 * quad - s_hat


def rms_solve(rm: ReducedModel, s_hat, net=None, s_spec=None, delta0=None):
    """Chord iteration ``delta <- delta - G_hat^-1 g_hat(delta)`` with fixed ``G_hat``.

    Starts from ``rm.delta_x_hat`` unless ``delta0`` is given. Stops when
    ``||g_hat||_inf < eps_rms`` or after ``max_rms_iters`` steps. When
    ``s_spec`` is supplied the full-space mismatch of the reconstructed
    state is returned as ``full_residual_inf`` (``nan`` otherwise); a zero
    reduced residual does not imply a zero full residual.
    """
    delta = np.array(rm.delta_x_hat if delta0 is None else delta0, dtype=float)
    g = reduced_residual(rm, delta, s_hat)
    iters = 0
    converged = bool(np.max(np.abs(g)) < rm.eps_rms)
    while not converged and iters < rm.cfg.max_rms_iters:
        delta = delta - rm.solve_g(g)
        iters += 1
        g = reduced_residual(rm, delta, s_hat)
        gn = np.max(np.abs(g))
        if not np.isfinite(gn):
            break
        converged = bool(gn < rm.eps_rms)
    state = rm.reconstruct(delta)
    res = float("nan")
    if s_spec is not None:
        res = float(np.max(np.abs(pfcore.mismatch(net or rm.net, state, s_spec))))
    return RmsOutcome(delta, state, res, iters, converged)


def _orthogonalize(basis, xc):
    w = xc - basis @ (basis.T @ xc)
    return w - basis @ (basis.T @ w)


def dse_update(rm: ReducedModel, x_full: VoltageState, net=None, s0=None):
    """Append the part of ``x_full`` outside ``span(V)`` if it exceeds ``eps_basis``.

    Borders ``J_hat``, ``G_hat``, ``s0_hat``, ``x_c0_hat`` and
    ``delta_x_hat`` (with the residual norm), and ``h_v``/``h_hat`` with
    the new quadratic pairs while ``q <= n_q``. Past ``n_q`` only the new
    row of ``h_hat`` is added, so ``h_hat = J_hat^T h_v`` keeps holding.
    ``net`` and ``s0`` default to the model's own.
    """
    net = rm.net if net is None else net
    xc = x_full.cartesian()
    w = _orthogonalize(rm.basis, xc)
    norm = float(np.linalg.norm(w))
    if not norm > rm.eps_basis:
        return ExpansionReport(False, rm.q, norm)
    x = w / norm
    x_j = np.asarray(rm.j_c0 @ x)
    s0_vec = rm.s0 if s0 is None else _stacked(s0)
    q_old = rm.q

    cross = rm.j_hat.T @ x_j
    g = np.empty((q_old + 1, q_old + 1))
    g[:q_old, :q_old] = rm.g_hat
    g[:q_old, q_old] = cross
    g[q_old, :q_old] = cross
    g[q_old, q_old] = x_j @ x_j
    rm.g_hat = g

    new_row = np.einsum("k,kij->ij", x_j, rm.h_v)
    j_new = np.column_stack([rm.j_hat, x_j])
    if q_old + 1 <= rm.n_q:
        qh = rm.q_h
        hv = np.empty((rm.h_v.shape[0], qh + 1, qh + 1))
        hv[:, :qh, :qh] = rm.h_v
        mixed = pfcore.hessian_apply_many(net, x, rm.basis[:, :qh])
        hv[:, qh, :qh] = mixed
        hv[:, :qh, qh] = mixed
        hv[:, qh, qh] = pfcore.hessian_apply(net, x, x)
        hh = np.empty((q_old + 1, qh + 1, qh + 1))
        hh[:q_old, :qh, :qh] = rm.h_hat
        hh[q_old, :qh, :qh] = new_row
        border = j_new.T @ np.concatenate([mixed, hv[:, qh, qh][:, None]], axis=1)
        hh[:, qh, :qh] = border[:, :qh]
        hh[:, :qh, qh] = border[:, :qh]
        hh[:, qh, qh] = border[:, qh]
        rm.h_v = hv
        rm.h_hat = hh
    else:
        rm.h_hat = np.concatenate([rm.h_hat, new_row[None]], axis=0)

    rm.s0_hat = np.append(rm.s0_hat, x_j @ s0_vec)
    rm.j_hat = j_new
    rm.basis = np.column_stack([rm.basis, x])
    rm.x_c0_hat = np.append(rm.x_c0_hat, 0.0)
    rm.delta_x_hat = np.append(rm.delta_x_hat, norm)
    rm._refactor()
    return ExpansionReport(True, rm.q, norm)


def recompute_operators(rm: ReducedModel):
    """From-scratch projected operators for the current basis.

    Returns a dict with ``j_hat``, ``g_hat``, ``h_v``, ``h_hat`` and
    ``s0_hat`` computed directly from V; used to audit the incremental
    bordering.
    """
    v = rm.basis
    j_hat = np.asarray(rm.j_c0 @ v)
    qh = rm.q_h
    n2 = v.shape[0]
    h_v = np.empty((n2, qh, qh))
    for i in range(qh):
        h_v[:, i, :] = pfcore.hessian_apply_many(rm.net, v[:, i], v[:, :qh])
    return {
        "j_hat": j_hat,
        "g_hat": j_hat.T @ j_hat,
        "h_v": h_v,
        "h_hat": np.einsum("kq,kij->qij", j_hat, h_v),
        "s0_hat": j_hat.T @ rm.s0,
    }


def orthonormality_error(rm: ReducedModel):
    v = rm.basis
    return float(np.max(np.abs(v.T @ v - np.eye(v.shape[1]))))


_ARRAYS = ("basis", "j_hat", "g_hat", "h_v", "h_hat", "s0_hat", "x_c0_hat", "delta_x_hat",
           "x_c0", "s0")


def save_rom(rm: ReducedModel, path):
    """Checkpoint the model to an ``.npz`` container with a JSON header."""
    header = json.dumps({"config": asdict(rm.cfg), "n": rm.net.n, "q": rm.q, "q_h": rm.q_h})
    np.savez(path, header=np.array(header), **{k: getattr(rm, k) for k in _ARRAYS})


def load_rom(path, net: NetworkModel):
    """Restore a checkpoint written by :func:`save_rom` for the same network."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header["n"] != net.n:
            raise ValueError(f"checkpoint is for n={header['n']}, network has n={net.n}")
        arrays = {k: np.array(data[k]) for k in _ARRAYS}
    rm = ReducedModel.__new__(ReducedModel)
    rm.net = net
    rm.cfg = RomConfig(**header["config"])
    for k, v in arrays.items():
        setattr(rm, k, v)
    rm.j_c0 = pfcore.jacobian_cartesian(net, VoltageState.from_cartesian(rm.x_c0))
    rm._refactor()
    return rm
