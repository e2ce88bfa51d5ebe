import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from modalspdc.material import WavelengthRangeError
from modalspdc.modesolver import (ShapeError, WaveguideGeometry, count_nodes, guidance_floor,
                                  mode_overlap, nonlinear_overlap, solve_depth_slab,
                                  solve_graded_lateral_slab, solve_lateral_slab, solve_modes,
                                  triplet_overlap)
from oracles import displaced_gaussian_overlap, exponential_slab_indices, step_slab_indices


@pytest.mark.parametrize("args", [
    (1.7585, 0.01, 5.0, 1.0, 0.7998),
    (1.84, 0.02, 5.0, 1.0, 0.3999),
    (1.75, 0.005, 3.0, 1.0, 0.8),
    (1.8440, 0.05, 5.0, 1.0, 0.8),
])
def test_depth_slab_matches_bessel_solution(args):
    got = [m.n_eff for m in solve_depth_slab(*args, form="permittivity")]
    ref = exponential_slab_indices(*args)
    assert len(got) == len(ref)
    assert np.allclose(got, ref, rtol=1e-8, atol=0)


def test_depth_slab_profiles_are_normalised_and_ordered():
    modes = solve_depth_slab(1.7585, 0.02, 5.0, 1.0, 0.8)
    y = np.linspace(-3, 80, 40001)
    prof = [m(y) for m in modes]
    for j, p in enumerate(prof):
        assert trapezoid(p * p, y) == pytest.approx(1.0, abs=1e-4)
        assert count_nodes(p) == j
        for q in prof[:j]:
            assert abs(trapezoid(p * q, y)) < 1e-4
    n = [m.n_eff for m in modes]
    assert all(a > b for a, b in zip(n, n[1:]))
    assert all(1.7585 < v < 1.7785 for v in n)


def test_depth_slab_unbound_returns_empty():
    assert solve_depth_slab(1.7585, 1e-5, 0.5, 1.0, 0.8) == []


@pytest.mark.parametrize("w", [1.0, 2.0, 6.0])
def test_step_slab_matches_tangent_form(w):
    got = [m.n_eff for m in solve_lateral_slab(1.80, 1.76, w, 0.8)]
    assert np.allclose(got, step_slab_indices(1.80, 1.76, w, 0.8), rtol=1e-13)


def test_step_slab_profiles_orthonormal():
    modes = solve_lateral_slab(1.80, 1.76, 6.0, 0.8)
    x = np.linspace(-20, 20, 80001)
    G = np.array([[trapezoid(a(x) * b(x), x) for b in modes] for a in modes])
    assert np.allclose(G, np.eye(len(modes)), atol=1e-8)


def test_graded_lateral_tends_to_step():
    step = [m.n_eff for m in solve_lateral_slab(1.79, 1.76, 2.0, 0.8)]
    graded = [m.n_eff for m in solve_graded_lateral_slab(1.79, 1.76, 2.0, 0.02, 0.8, step_um=0.005)]
    assert len(graded) == len(step)
    assert np.allclose(graded, step, atol=2e-4)


def test_guided_profiles_orthonormal(modes):
    for table in (modes.h, modes.pump):
        labs = list(table)
        m0 = table[labs[0]]
        G = np.array([[trapezoid(trapezoid(table[a].profile * table[b].profile, m0.x_um, axis=1), m0.y_um)
                       for b in labs] for a in labs])
        assert np.abs(G - np.eye(len(labs))).max() < 1e-4


def test_labels_count_nodes(modes):
    for table in (modes.h, modes.v, modes.pump):
        for (i, j), m in table.items():
            assert (count_nodes(m.ux), count_nodes(m.uy)) == (i, j)


def test_effective_indices_bounded(geometry, modes):
    for pol, table in (("H", modes.h), ("V", modes.v)):
        lam = 0.8
        ns = geometry.substrate_index(pol, lam)
        for m in table.values():
            assert ns < m.n_eff_at(lam) < ns + geometry.delta_n(pol)


def test_pump_sees_h_axis_contrast(geometry):
    assert geometry.axis_p == geometry.axis_h
    assert geometry.delta_n("P") == geometry.delta_n_h


def test_dispersion_interpolation_outside_range_raises(modes):
    with pytest.raises(WavelengthRangeError):
        modes.h[(0, 0)].n_eff_at(0.9)


def test_fundamental_group_index_above_phase_index(modes):
    m = modes.h[(0, 0)]
    assert m.group_index_at(0.8) > m.n_eff_at(0.8)


def test_solve_modes_sorted_and_cached():
    g = WaveguideGeometry(delta_n_h=0.02, delta_n_v=0.02)
    a = solve_modes(g, "H", 0.8)
    b = solve_modes(g, "H", 0.8)
    assert a == b
    n = [m.n_eff[0] for m in a]
    assert n == sorted(n, reverse=True)


def test_guidance_floor_brackets_cutoff(geometry):
    floor = guidance_floor(geometry, "V", 0.83)
    below = geometry.replace(delta_n_v=floor * 0.98)
    above = geometry.replace(delta_n_v=floor * 1.02)
    assert not any(m.label == (0, 0) for m in solve_modes(below, "V", 0.83, max_label=0))
    assert any(m.label == (0, 0) for m in solve_modes(above, "V", 0.83, max_label=0))


def test_geometry_validation():
    with pytest.raises(ValueError, match="poling_period_um"):
        WaveguideGeometry(poling_period_um=-1.0)
    with pytest.raises(ValueError):
        WaveguideGeometry(lateral_shape="round")


# overlap metric ----------------------------------------------------------

def _gauss_intensity(x, y, dx, sigma):
    """|psi|^2 for the mode function psi = exp(-r^2 / (2 sigma^2)); rows follow y."""
    X, Y = np.meshgrid(x, y)
    return np.exp(-((X - dx) ** 2 + Y**2) / sigma**2)


@pytest.mark.parametrize("delta", np.linspace(0.0, 3.0, 10))
def test_overlap_displaced_gaussian(delta):
    x = np.linspace(-12, 12, 801)
    y = np.linspace(-8, 8, 401)
    ov = mode_overlap(_gauss_intensity(x, y, 0, 1.0), _gauss_intensity(x, y, delta, 1.0), x, y)
    assert ov == pytest.approx(displaced_gaussian_overlap(delta, 1.0), abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_overlap_identity_and_bounds(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((24, 17))
    b = rng.random((24, 17))
    assert mode_overlap(a, a) == 1.0
    assert 0.0 <= mode_overlap(a, b) <= 1.0
    assert mode_overlap(a, b) == pytest.approx(mode_overlap(b, a), rel=1e-14)
    assert mode_overlap(3.0 * a, b) == pytest.approx(mode_overlap(a, b), rel=1e-12)


def test_overlap_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        mode_overlap(np.ones((3, 3)), np.ones((3, 4)))
    with pytest.raises(ValueError):
        mode_overlap(-np.ones((3, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        mode_overlap(np.zeros((3, 3)), np.ones((3, 3)))


def test_triplet_overlap_matches_full_integral(modes):
    p, h, v = modes.pump[(0, 0)], modes.h[(0, 0)], modes.v[(0, 0)]
    full = nonlinear_overlap(p.profile, h.profile, v.profile, p.x_um, p.y_um)
    assert triplet_overlap(p, h, v) == pytest.approx(full, rel=1e-10)


def test_parity_forbids_odd_lateral_coupling(modes):
    # one node across the width under a symmetric lateral profile integrates to zero
    g0 = abs(modes.overlap((0, 0), (0, 0), (0, 0)))
    assert abs(modes.overlap((0, 0), (1, 0), (0, 0))) < 1e-6 * g0
    assert abs(modes.overlap((1, 0), (1, 0), (0, 0))) > 1e-3 * g0
