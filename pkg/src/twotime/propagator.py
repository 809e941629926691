"""Exact free evolution of bin-truncated oscillator eigenfunctions.

A position projection cuts phi_m down to ``1_[lo,hi] phi_m``, which has an
infinite expansion in the eigenbasis.  Its free evolution is evaluated here in
closed form with the Mehler kernel

    K(xi, xi'; theta) = (2 pi i sin theta)^(-1/2)
                        exp(i [(xi^2 + xi'^2) cos theta - 2 xi xi'] / (2 sin theta))

(dimensionless units, theta = omega tau).  The m = 0 integral reduces to a
difference of complementary error functions, evaluated through the Faddeeva
function so no intermediate overflows; higher m follow from an exact
recurrence obtained by integrating by parts against the Hermite ladder
relations.  Derivatives use the Heisenberg form of the momentum,
p U(theta) = U(theta) (p cos theta - xi sin theta), whose boundary terms are
kernel values at the bin edges.
"""
from __future__ import annotations

import numpy as np
from scipy.special import wofz

from .hilbert import OscillatorBasis, hermite_functions

# theta closer than this to a multiple of pi is treated as exactly that multiple
THETA_EPS = 1e-12


def _edge_term(alpha, beta, sqrt_alpha, centre, e):
    """exp(beta^2 / 4 alpha) * erfc(sqrt(alpha) (e - centre)), computed stably."""
    if e == np.inf:
        return np.zeros_like(centre)
    if e == -np.inf:
        return 2.0 * np.exp(beta * beta / (4.0 * alpha))
    u = sqrt_alpha * (e - centre)
    lead = np.exp(-alpha * e * e - beta * e)
    out = np.empty_like(u)
    pos = u.real >= 0
    out[pos] = lead[pos] * wofz(1j * u[pos])
    neg = ~pos
    out[neg] = 2.0 * np.exp(beta[neg] ** 2 / (4.0 * alpha)) - lead[neg] * wofz(-1j * u[neg])
    return out


def _kernel(xi, e, s, c):
    """Mehler kernel K(xi, e; theta) for 0 < theta < pi."""
    pre = np.exp(-0.25j * np.pi) / np.sqrt(2.0 * np.pi * s)
    return pre * np.exp(1j * ((xi * xi + e * e) * c - 2.0 * xi * e) / (2.0 * s))


def _unit_projected(m_count, xi, theta, lo, hi, derivative):
    """U(theta)[1_[lo,hi] h_m](xi) for m < m_count, 0 < theta < pi (unit oscillator)."""
    s, c = np.sin(theta), np.cos(theta)
    alpha = (s - 1j * c) / (2.0 * s)
    sqrt_alpha = np.sqrt(alpha)
    beta = 1j * xi / s
    centre = xi * np.exp(-1j * theta)
    pre = np.exp(-0.25j * np.pi) / np.sqrt(2.0 * np.pi * s)
    phase = np.exp(1j * c * xi * xi / (2.0 * s))

    need = m_count + 1 if derivative else m_count
    f = np.empty((max(need, 1),) + xi.shape, dtype=complex)
    # int_lo^hi exp(-alpha t^2 - beta t) dt = sqrt(pi)/(2 sqrt(alpha)) [E(lo) - E(hi)]
    i0 = np.sqrt(np.pi) / (2.0 * sqrt_alpha) * (
        _edge_term(alpha, beta, sqrt_alpha, centre, lo) - _edge_term(alpha, beta, sqrt_alpha, centre, hi)
    )
    f[0] = pre * phase * np.pi ** -0.25 * i0

    finite = [e for e in (lo, hi) if np.isfinite(e)]
    kern = {e: _kernel(xi, e, s, c) for e in finite}
    hvals = {e: hermite_functions(need + 1, np.array(e)) for e in finite}

    def boundary(m):
        out = np.zeros(xi.shape, dtype=complex)
        if np.isfinite(hi):
            out += kern[hi] * hvals[hi][m]
        if np.isfinite(lo):
            out -= kern[lo] * hvals[lo][m]
        return out

    e_plus, e_minus = np.exp(1j * theta), np.exp(-1j * theta)
    for m in range(need - 1):
        prev = f[m - 1] if m > 0 else 0.0
        f[m + 1] = (s * boundary(m) + 1j * xi * f[m] - np.sqrt(m / 2.0) * 1j * e_minus * prev) / (
            np.sqrt((m + 1) / 2.0) * 1j * e_plus
        )
    if not derivative:
        return f[:m_count], None

    df = np.empty((m_count,) + xi.shape, dtype=complex)
    for m in range(m_count):
        lower = f[m - 1] if m > 0 else 0.0
        up = np.sqrt((m + 1) / 2.0) * f[m + 1]
        dn = np.sqrt(m / 2.0) * lower
        df[m] = c * (dn - up - boundary(m)) - 1j * s * (up + dn)
    return f[:m_count], df


def projected_unit(m_count: int, xi, theta: float, lo: float, hi: float, derivative: bool = False):
    """U(theta) applied to 1_[lo,hi] h_m for m < m_count, unit oscillator.

    ``theta`` may be any real number; the multiple-of-pi part is applied
    exactly as a parity flip times a phase.  At multiples of pi the result is
    the (discontinuous) cut function itself, with derivatives taken inside the
    interval.
    """
    xi = np.asarray(xi, dtype=float)
    shape = xi.shape
    xi = xi.reshape(-1)
    f, df = _projected_flat(m_count, xi, theta, lo, hi, derivative)
    f = f.reshape((m_count,) + shape)
    if derivative:
        df = df.reshape((m_count,) + shape)
    return f, df


def _projected_flat(m_count, xi, theta, lo, hi, derivative):
    k = int(np.floor(theta / np.pi))
    rest = theta - k * np.pi
    if np.pi - rest < THETA_EPS:
        k += 1
        rest = 0.0
    # U(k pi) = exp(-i k pi / 2) P^k, and P (1_I h_m) = (-1)^m 1_{-I} h_m
    if k % 2:
        lo, hi = -hi, -lo
    sign = np.where(np.arange(m_count) % 2 == 1, (-1.0) ** k, 1.0)[:, None]
    global_phase = np.exp(-0.5j * np.pi * k)
    if rest < THETA_EPS:
        h, dh = hermite_functions(m_count, xi, derivative=True)
        inside = (xi >= lo) & (xi <= hi)
        f = np.where(inside, h, 0.0) * sign * global_phase
        df = np.where(inside, dh, 0.0) * sign * global_phase if derivative else None
        return f, df
    f, df = _unit_projected(m_count, xi, rest, lo, hi, derivative)
    f = f * sign * global_phase
    if derivative:
        df = df * sign * global_phase
    return f, df


def projected_evolution(basis: OscillatorBasis, interval, tau: float, x, m_count: int, derivative: bool = False):
    """exp(-i H tau) [1_interval phi_m](x) for m < m_count, physical units.

    Returns ``(values, derivatives)`` with shapes ``(m_count,) + x.shape``;
    ``derivatives`` is None unless requested.
    """
    a = basis.scale
    lo, hi = (float(v) * a for v in interval)
    f, df = projected_unit(m_count, a * np.asarray(x, dtype=float), basis.frequency * tau, lo, hi, derivative)
    f = np.sqrt(a) * f
    if derivative:
        df = a * np.sqrt(a) * df
    return f, df
