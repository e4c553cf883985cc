"""Power-flow functions and their derivatives.

Real vectors of length 2n are stacked as ``[real parts; imaginary parts]``
for Cartesian quantities and ``[V; theta]`` for polar states; power
injections are ``[P; Q]``.

The 2x2 block operators used throughout are

* ``<d(z)>`` multiplication by a complex diagonal: ``[[Re z, -Im z], [Im z, Re z]]``
* ``N<Y>`` the real form of ``u -> conj(Y u)``: ``[[G, -B], [-B, -G]]``
* ``R(V)`` the polar-to-Cartesian differential per bus:
  ``[[cos t, -V sin t], [sin t, V cos t]]``
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .netmodel import LoadProfile, NetworkModel

R_BLOCK_FLOOR = 1e-9


class SingularBlockError(np.linalg.LinAlgError):
    def __init__(self, bus, magnitude):
        super().__init__(f"polar block at bus {bus} is singular (|V| = {magnitude:.3g})")
        self.bus = bus


class VoltageState:
    """Voltage profile over the non-substation slots.

    Either the polar pair or the complex phasor is authoritative, depending on
    the constructor; the other view is derived on first access and cached.
    Instances are treated as immutable.
    """

    def __init__(self, mag=None, ang=None, phasor=None):
        if phasor is None:
            self._mag = np.asarray(mag, dtype=float)
            self._ang = np.asarray(ang, dtype=float)
            if self._mag.shape != self._ang.shape:
                raise ValueError("magnitude and angle shapes differ")
            if np.any(self._mag < 0):
                raise ValueError("voltage magnitudes must be non-negative")
            self._phasor = None
        else:
            self._phasor = np.asarray(phasor, dtype=complex)
            self._mag = self._ang = None

    @classmethod
    def from_polar(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(mag=x[:n], ang=x[n:])

    @classmethod
    def from_cartesian(cls, xc):
        xc = np.asarray(xc, dtype=float)
        n = xc.size // 2
        return cls(phasor=xc[:n] + 1j * xc[n:])

    @classmethod
    def from_phasor(cls, v):
        return cls(phasor=v)

    @property
    def n(self):
        return (self._phasor if self._mag is None else self._mag).size

    @cached_property
    def phasor(self):
        if self._phasor is not None:
            return self._phasor
        return self._mag * np.exp(1j * self._ang)

    @cached_property
    def v_mag(self):
        return np.abs(self._phasor) if self._mag is None else self._mag

    @cached_property
    def v_ang(self):
        # np.angle(0) is 0, which fixes the convention for zero magnitude
        return np.angle(self._phasor) if self._ang is None else self._ang

    @property
    def v_re(self):
        return self.phasor.real

    @property
    def v_im(self):
        return self.phasor.imag

    def polar(self):
        return np.concatenate([self.v_mag, self.v_ang])

    def cartesian(self):
        return np.concatenate([self.v_re, self.v_im])

    def __repr__(self):
        return f"VoltageState(n={self.n})"


def polar_to_cartesian(x):
    """Stacked ``[V; theta]`` to stacked ``[V_r; V_i]``."""
    return VoltageState.from_polar(x).cartesian()


def cartesian_to_polar(xc):
    """Stacked ``[V_r; V_i]`` to stacked ``[V; theta]``; zero maps to angle 0."""
    return VoltageState.from_cartesian(xc).polar()


def to_complex(x):
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def to_real(z):
    return np.concatenate([z.real, z.imag])


def injected_currents(net: NetworkModel, vs: VoltageState):
    """Nodal current injections at the non-substation slots."""
    return net.ybus_reduced @ vs.phasor + net.sub_coupling @ net.substation_voltage


def power_injections(net: NetworkModel, vs: VoltageState):
    """Stacked ``[P; Q]`` computed as ``V * conj(I)``."""
    s = vs.phasor * np.conj(injected_currents(net, vs))
    return to_real(s)


def mismatch(net: NetworkModel, vs: VoltageState, s_spec):
    """Residual ``s(x) - S``."""
    spec = s_spec.stacked() if isinstance(s_spec, LoadProfile) else np.asarray(s_spec)
    return power_injections(net, vs) - spec


def _as_ybus(net_or_y):
    return net_or_y.ybus_reduced if isinstance(net_or_y, NetworkModel) else sp.csr_matrix(net_or_y)


def build_n_ybus(net_or_y):
    """``N<Y_b>`` as a sparse real 2n x 2n matrix."""
    y = _as_ybus(net_or_y)
    g = sp.csr_matrix(y.real)
    b = sp.csr_matrix(y.imag)
    return sp.bmat([[g, -b], [-b, -g]], format="csr")


def block_diag_mult(z):
    """Sparse ``<d(z)>`` for a complex vector z."""
    zr = sp.diags(z.real)
    zi = sp.diags(z.imag)
    return sp.bmat([[zr, -zi], [zi, zr]], format="csr")


def r_block(vs: VoltageState):
    c = np.cos(vs.v_ang)
    s = np.sin(vs.v_ang)
    v = vs.v_mag
    return sp.bmat([[sp.diags(c), sp.diags(-v * s)], [sp.diags(s), sp.diags(v * c)]],
                   format="csr")


def jacobian_cartesian(net: NetworkModel, vs: VoltageState, n_ybus=None):
    """Derivative of ``s`` with respect to ``[V_r; V_i]``."""
    if n_ybus is None:
        n_ybus = build_n_ybus(net)
    cur = injected_currents(net, vs)
    return (block_diag_mult(np.conj(cur)) + block_diag_mult(vs.phasor) @ n_ybus).tocsr()


def jacobian_polar(net: NetworkModel, vs: VoltageState, n_ybus=None):
    """Derivative of ``s`` with respect to ``[V; theta]``."""
    return (jacobian_cartesian(net, vs, n_ybus) @ r_block(vs)).tocsr()


def hessian_apply(net_or_y, u, w):
    """Symmetric bilinear second derivative of ``s`` in Cartesian coordinates.

    Returns the stacking of ``u~ * conj(Y w~) + w~ * conj(Y u~)``. The
    substation coupling is linear in the unknowns and drops out.
    """
    y = _as_ybus(net_or_y)
    uc = to_complex(np.asarray(u, dtype=float))
    wc = to_complex(np.asarray(w, dtype=float))
    return to_real(uc * np.conj(y @ wc) + wc * np.conj(y @ uc))


def hessian_apply_many(net_or_y, u, w_cols):
    """``hessian_apply(u, w)`` for every column ``w`` of a 2n x m array."""
    y = _as_ybus(net_or_y)
    w_cols = np.asarray(w_cols, dtype=float)
    n = w_cols.shape[0] // 2
    uc = to_complex(np.asarray(u, dtype=float))
    wc = w_cols[:n] + 1j * w_cols[n:]
    yu = np.conj(y @ uc)
    out = uc[:, None] * np.conj(y @ wc) + wc * yu[:, None]
    return np.vstack([out.real, out.imag])


def solve_r_block(vs: VoltageState, y):
    """Solve ``R(V) dx = y`` bus by bus; each 2x2 block has determinant V."""
    y = np.asarray(y, dtype=float)
    n = vs.n
    v = vs.v_mag
    small = np.flatnonzero(v < R_BLOCK_FLOOR)
    if small.size:
        raise SingularBlockError(int(small[0]), float(v[small[0]]))
    c = np.cos(vs.v_ang)
    s = np.sin(vs.v_ang)
    a, b = y[:n], y[n:]
    # inverse of [[c, -v s], [s, v c]] is [[c, s], [-s / v, c / v]]
    return np.concatenate([c * a + s * b, (c * b - s * a) / v])


def flat_start(net: NetworkModel):
    """No-load voltage profile: the solution of ``Y_b V = -Y_sub V_sub``.

    With no shunts this places every slot at the substation phasor of its
    phase, i.e. 1 pu with the 0/-120/+120 degree pattern of a three-phase
    source.
    """
    rhs = -(net.sub_coupling @ net.substation_voltage)
    v = spsolve(net.ybus_reduced.tocsc(), rhs)
    return VoltageState.from_phasor(np.atleast_1d(v))
