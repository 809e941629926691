"""Free evolution of bin-cut eigenfunctions, checked against direct kernel quadrature."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from twotime.hilbert import OscillatorBasis, hermite_functions
from twotime.propagator import projected_evolution


def kernel_quadrature(m, x, tau, lo, hi):
    """Integral of the oscillator kernel against 1_[lo,hi] phi_m (unit oscillator)."""
    s, c = math.sin(tau), math.cos(tau)
    pre = np.exp(-0.25j * math.pi) / math.sqrt(2 * math.pi * s)

    def integrand(xp, part):
        v = pre * np.exp(1j * ((x * x + xp * xp) * c - 2 * x * xp) / (2 * s)) * hermite_functions(m + 1, xp)[m]
        return v.real if part == 0 else v.imag

    lo, hi = max(lo, -12.0), min(hi, 12.0)
    re, _ = quad(integrand, lo, hi, args=(0,), limit=400, epsabs=1e-13)
    im, _ = quad(integrand, lo, hi, args=(1,), limit=400, epsabs=1e-13)
    return re + 1j * im


@pytest.mark.parametrize("interval", [(-1.0, 0.0), (0.5, 2.0), (-np.inf, -1.0), (3.0, np.inf)])
@pytest.mark.parametrize("tau", [0.3, 1.1, 2.5])
def test_matches_kernel_quadrature(interval, tau):
    b = OscillatorBasis(n_max=8)
    x = np.array([-1.7, -0.2, 0.4, 1.9])
    f, _ = projected_evolution(b, interval, tau, x, 5)
    for m in (0, 1, 4):
        ref = [kernel_quadrature(m, xx, tau, *interval) for xx in x]
        assert np.allclose(f[m], ref, atol=1e-9)


def test_later_times_use_parity():
    b = OscillatorBasis(n_max=6)
    x = np.array([-0.8, 0.3, 1.2])
    tau = 0.7
    f, _ = projected_evolution(b, (-0.5, 1.5), tau + math.pi, x, 4)
    # U(pi) = -i P, and P maps 1_[lo,hi] phi_m to (-1)^m 1_[-hi,-lo] phi_m
    g, _ = projected_evolution(b, (-1.5, 0.5), tau, x, 4)
    sign = (-1.0) ** np.arange(4)
    assert np.allclose(f, -1j * sign[:, None] * g, atol=1e-12)


def test_full_line_reduces_to_eigenfunctions():
    b = OscillatorBasis(n_max=6)
    x = np.linspace(-2, 2, 7)
    tau = 0.9
    f, _ = projected_evolution(b, (-np.inf, np.inf), tau, x, 6)
    want = np.exp(-1j * b.energies[:, None] * tau) * b.functions(x)
    assert np.allclose(f, want, atol=1e-10)


def test_zero_time_is_the_cut_function():
    b = OscillatorBasis(n_max=4)
    x = np.array([-1.0, 0.2, 0.9, 2.0])
    f, _ = projected_evolution(b, (0.0, 1.0), 0.0, x, 4)
    inside = (x >= 0) & (x <= 1)
    assert np.allclose(f, np.where(inside, b.functions(x), 0.0))


@pytest.mark.parametrize("tau", [0.05, 0.8, 2.9])
def test_derivative_matches_finite_difference(tau):
    b = OscillatorBasis(n_max=6)
    x = np.array([-1.3, 0.25, 0.9, 2.2])
    h = 1e-5
    _, df = projected_evolution(b, (-0.5, 1.0), tau, x, 5, derivative=True)
    fp, _ = projected_evolution(b, (-0.5, 1.0), tau, x + h, 5)
    fm, _ = projected_evolution(b, (-0.5, 1.0), tau, x - h, 5)
    assert np.allclose(df, (fp - fm) / (2 * h), atol=1e-6 * max(1.0, np.abs(df).max()))


def test_scaled_oscillator_against_unit_oscillator():
    b = OscillatorBasis(mass=2.0, frequency=0.5, n_max=4)
    unit = OscillatorBasis(n_max=4)
    x = np.array([-0.7, 0.4])
    f, _ = projected_evolution(b, (-1.0, 1.0), 1.2, x, 3)
    g, _ = projected_evolution(unit, (-1.0, 1.0), 0.6, x, 3)  # a = 1, theta = omega tau
    assert np.allclose(f, g, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(tau=st.floats(0.1, 3.0), lo=st.floats(-2.0, 1.0), width=st.floats(0.2, 2.0))
def test_norm_is_conserved(tau, lo, width):
    b = OscillatorBasis(n_max=4)
    hi = lo + width

    def windowed(L):
        x = np.linspace(-L, L, int(800 * L) + 1)
        f, _ = projected_evolution(b, (lo, hi), tau, x, 3)
        return np.trapezoid(np.abs(f) ** 2, x, axis=1)

    # the cut state's density decays like 1/x^2, so the mass outside [-L, L]
    # is ~A/L; extrapolate from two windows wide enough for narrow bins
    norms = 2 * windowed(120.0) - windowed(60.0)
    ref = [quad(lambda t: hermite_functions(m + 1, t)[m] ** 2, lo, hi)[0] for m in range(3)]
    assert np.allclose(norms, ref, atol=5e-4)
