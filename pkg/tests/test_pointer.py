import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from twotime.hilbert import DomainError, entangled_state, product_of, random_state
from twotime.pointer import PointerModel, shortness, shortness_ok


def test_ready_state_is_normalized():
    p = PointerModel(sigma=0.3)
    assert quad(lambda z: p.amplitude(z, 0.0) ** 2, -5, 5)[0] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(o1=st.floats(-1, 1), o2=st.floats(-1, 1), lo=st.floats(-2, 1), width=st.floats(0.01, 3))
def test_overlaps_against_quadrature(o1, o2, lo, width):
    p = PointerModel(sigma=0.2)
    full = quad(lambda z: p.amplitude(z, o1) * p.amplitude(z, o2), -8, 8, points=[o1, o2], limit=200)[0]
    assert p.overlap(o1, o2) == pytest.approx(full, abs=1e-10)
    part = quad(lambda z: p.amplitude(z, o1) * p.amplitude(z, o2), lo, lo + width, limit=200)[0]
    assert p.region_overlap(o1, o2, lo, lo + width) == pytest.approx(part, abs=1e-10)


def test_default_coupling_and_epsilon(obs8):
    p = PointerModel.for_gap(obs8.min_gap, 8.0)
    # s = g T_M gap / sigma = 8 with sigma = 0.05, T_M = 0.01, gap = 1
    assert p.g == pytest.approx(40.0)
    assert p.separation_ratio(obs8.min_gap) == pytest.approx(8.0)
    assert p.epsilon(obs8.min_gap) == pytest.approx(math.exp(-8.0))
    assert p.overlap(p.offset(0.0), p.offset(1.0)) == pytest.approx(p.epsilon(1.0))


def test_regions_cut_at_midpoints():
    p = PointerModel()
    r = p.regions([0.0, 1.0, 3.0])
    assert r == [(-np.inf, 0.5), (0.5, 2.0), (2.0, np.inf)]
    with pytest.raises(DomainError):
        p.regions([1.0, 0.0])


@pytest.mark.parametrize("kw", [dict(sigma=0), dict(g=-1), dict(T_M=np.nan), dict(ready_center=np.inf)])
def test_validation(kw):
    with pytest.raises(DomainError):
        PointerModel(**kw)


def test_ready_sampling_moments():
    p = PointerModel(sigma=0.05, ready_center=0.2)
    z = p.sample_ready(np.random.default_rng(0), 200_000)
    assert z.mean() == pytest.approx(0.2, abs=5e-4)
    assert z.std() == pytest.approx(0.05, rel=1e-2)


def test_shortness(basis, rng):
    # the entangled state is stationary: only a global phase accrues
    assert shortness(entangled_state(basis), basis, 0.5) < 1e-12
    s = random_state(basis, rng, levels=4)
    assert shortness(s, basis, 0.0) < 1e-12
    small = shortness(s, basis, 0.01)
    assert 0 < small < 0.05
    assert shortness(s, basis, 0.05) > small
    assert shortness_ok(s, basis, 1e-4)


def test_shortness_of_superposition(basis):
    # (phi0 + phi1)/sqrt2 on A: the overlap with the evolved state has modulus cos(omega T / 2)
    s = product_of(basis, [1.0, 1.0], [1.0])
    T = 0.3
    assert shortness(s, basis, T) == pytest.approx(math.sqrt(2 - 2 * abs(math.cos(T / 2))), abs=1e-12)
