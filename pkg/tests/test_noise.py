import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wienergmc.errors import BoxExitError, ConfigError, NormalizationError, ResourceBudgetError
from wienergmc.noise import (
    DriftOverlay, LatticeSpec, build_mollifier, discrete_overlaps, discrete_variance, field_increment,
    hamiltonian, hamiltonians, mollifier_overlap, quadratic_variation_rate, sample_noise, shifted_noise,
    sphere_area,
)
from wienergmc.paths import sample_paths


PHI3 = build_mollifier(3, 1.0)


def bump(s):
    return np.where(s < 1, np.exp(-1.0 / np.maximum(1 - s * s, 1e-300)), 0.0)


def simpson_radial(f, rho, d, n):
    """Composite Simpson on [0, rho] of sphere_area * f(r) r^(d-1); n even."""
    r = np.linspace(0.0, rho, n + 1)
    y = f(r) * r ** (d - 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return sphere_area(d) * (rho / n) / 3 * np.sum(w * y)


# mollifier


def test_selfconv0_matches_independent_simpson(phi3):
    # 4x the 200-node resolution, on an unrelated rule
    c = 1.0 / simpson_radial(lambda r: bump(r), 1.0, 3, 800 * 4)
    v0 = simpson_radial(lambda r: (c * bump(r)) ** 2, 1.0, 3, 800 * 4)
    assert abs(phi3.selfconv0 - v0) / v0 < 1e-6


def test_selfconv0_matches_cartesian_brute_force(phi3):
    # frozen from a direct 3-d Cartesian sum at h=0.02: int phi = 1, int phi^2 below
    assert phi3.selfconv0 == pytest.approx(0.493950468206464, rel=1e-9)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_normalization(d):
    phi = build_mollifier(d, 1.3)
    total = simpson_radial(lambda r: phi.radial(r), 1.3, d, 20000)
    assert abs(total - 1) < 1e-8
    assert phi.conv(2 * 1.3) == 0.0
    assert phi.conv(5.0) == 0.0


def test_d1_normalization_and_smoothed_indicator():
    phi = build_mollifier(1, 1.0, profile="plateau")
    r = np.linspace(0, 1, 200001)
    f = phi.radial(r)
    assert abs(2 * np.sum((f[1:] + f[:-1]) / 2) * (r[1] - r[0]) - 1) < 1e-8


def test_mollifier_invariants(phi3):
    r = np.linspace(0, 3, 301)
    assert np.all(phi3.radial(r) >= 0)
    assert np.all(phi3.radial(r[r >= 1.0]) == 0)
    c = phi3.conv(r)
    assert c[0] == pytest.approx(phi3.selfconv0)
    assert np.all(c <= phi3.selfconv0)
    assert np.all(c[r >= 2] == 0)


def test_conv_against_direct_3d_integral(phi3):
    # (phi*phi)(a e1) by Cartesian midpoint sum over the support of phi
    h = 0.025
    g = np.arange(-1 + h / 2, 1, h)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    pts = np.stack([X, Y, Z], -1)
    for a in (0.3, 0.7, 1.4):
        val = np.sum(phi3(pts) * phi3(pts - np.array([a, 0, 0]))) * h**3
        assert phi3.conv(a) == pytest.approx(val, rel=2e-4)


def test_rejects_bad_profiles():
    with pytest.raises(NormalizationError):
        build_mollifier(2, 1.0, profile=lambda s: np.zeros_like(s))
    with pytest.raises(ConfigError):
        build_mollifier(2, -1.0)


def test_overlap_self_and_wider():
    phi = build_mollifier(1, 1.0)
    psi = build_mollifier(1, 2.0)
    ov, dist = mollifier_overlap(phi, phi)
    assert not dist
    ov, dist = mollifier_overlap(phi, psi)
    assert dist
    # strict Cauchy-Schwarz; the overlap can exceed the smaller self-energy
    assert ov < math.sqrt(phi.selfconv0 * psi.selfconv0)
    assert quadratic_variation_rate(phi, psi) > 0


def test_overlap_d1_fine_grid_oracle():
    phi = build_mollifier(1, 1.0)
    psi = build_mollifier(1, 2.0)
    x = np.linspace(-1, 1, 400001)
    c1 = 1 / (np.sum(bump(np.abs(x))) * (x[1] - x[0]))
    x2 = np.linspace(-2, 2, 800001)
    c2 = 1 / (np.sum(bump(np.abs(x2) / 2)) * (x2[1] - x2[0]))
    oracle = np.sum(c1 * bump(np.abs(x)) * c2 * bump(np.abs(x) / 2)) * (x[1] - x[0])
    assert mollifier_overlap(phi, psi)[0] == pytest.approx(oracle, abs=1e-6)


# lattice and noise


def test_spec_validation():
    with pytest.raises(ConfigError):
        LatticeSpec(3, 0.3, 0.5, 1.0, 5.0)
    with pytest.raises(ConfigError):
        LatticeSpec(3, 0.05, 0.3, 1.0, 5.0)
    s = LatticeSpec.desk(3, 4.0)
    assert s.K == 80 and s.dx == 0.5 and s.L >= 5 * math.sqrt(12) + 1


def test_default_spec_resolution():
    s = LatticeSpec.default(3, 1.0)
    assert s.dx == 1 / 8
    assert math.sqrt(3 * s.dt) <= s.dx + 1e-12


def test_noise_deterministic_and_law():
    spec = LatticeSpec(3, 0.05, 0.5, 1.0, 9.5)  # 20 slabs of 39^3 cells
    a = sample_noise(spec, 11, materialize=True).increments()
    b = sample_noise(spec, 11, materialize=True).increments()
    assert np.array_equal(a, b)
    x = a.ravel()
    assert x.size > 10**6
    se = math.sqrt(spec.cell_var / x.size)
    assert abs(x.mean()) < 4 * se
    assert abs(x.var() / spec.cell_var - 1) < 0.01
    assert stats.kstest(x[:200000] / math.sqrt(spec.cell_var), "norm").pvalue > 1e-3


def test_noise_lazy_matches_dense():
    spec = LatticeSpec(2, 0.1, 0.5, 0.5, 3.0)
    noise = sample_noise(spec, 3)
    full = noise.increments()
    sub = noise.block(1, 4, np.array([2, 5]), np.array([6, 9]))
    assert np.array_equal(full[1:4, 2:7, 5:10], sub)


def test_budget_refusal():
    spec = LatticeSpec.desk(3, 4.0)
    with pytest.raises(ResourceBudgetError) as e:
        sample_noise(spec, 0, materialize=True, budget_bytes=10**6)
    assert e.value.required_bytes == spec.K * spec.cells * 8


def test_field_increment_zero_noise_and_linearity(phi3, desk3):
    x = np.array([0.3, -0.2, 0.1])
    zero = sample_noise(desk3, 1).scaled(0.0)
    assert field_increment(zero, phi3, 2, x) == 0.0
    noise = sample_noise(desk3, 1)
    assert field_increment(noise.scaled(2.5), phi3, 2, x) == pytest.approx(2.5 * field_increment(noise, phi3, 2, x),
                                                                           rel=1e-13)


def test_field_increment_variance_d1(phi1):
    spec = LatticeSpec(1, 0.01, 0.125, 1000.0, 3.0)  # 1e5 slabs
    x = np.array([0.25])
    H, _ = hamiltonians(sample_noise(spec, 5), phi1, np.broadcast_to(x, (spec.K, 1))[None], np.arange(1, spec.K + 1))
    inc = np.diff(np.concatenate([[0.0], H[0]]))
    y = -spec.L + np.arange(spec.n) * spec.dx
    target = spec.cell_var * np.sum(phi1.radial(np.abs(x[0] - y)) ** 2)
    assert abs(inc.var() / target - 1) < 0.02


def test_box_exit(phi3, desk3):
    path = np.zeros((desk3.K, 3))
    path[7] = [desk3.L, 0, 0]
    with pytest.raises(BoxExitError) as e:
        hamiltonian(sample_noise(desk3, 0), phi3, path)
    assert e.value.slab == 7
    assert e.value.required_L > desk3.L


def test_zero_noise_hamiltonian(phi3, desk3):
    path = sample_paths(desk3, 3, 1)[0]
    H, V = hamiltonian(sample_noise(desk3, 0).scaled(0.0), phi3, path)
    assert H == 0.0 and V > 0


def test_constant_path_variance_fine_lattice(phi3):
    spec = LatticeSpec.default(3, 1.0, L=2.0)
    _, V = hamiltonian(sample_noise(spec, 0), phi3, np.zeros((spec.K, 3)))
    assert abs(V / phi3.selfconv0 - 1) < 0.02


def independent_variance(spec, phi, path):
    y = -spec.L + np.arange(spec.n) * spec.dx
    grid = np.stack(np.meshgrid(*([y] * spec.d), indexing="ij"), -1)
    total = 0.0
    for k in range(spec.K):
        total += np.sum(phi(grid - path[k]) ** 2)
    return total * spec.cell_var


@given(st.integers(0, 2**31), st.floats(0.1, 2.0))
def test_variance_exactness(seed, scale):
    spec = LatticeSpec(3, 0.1, 0.5, 0.5, 4.0)
    phi = PHI3
    path = sample_paths(spec, seed, 1)[0, : spec.K] * scale
    _, V = hamiltonian(sample_noise(spec, seed), phi, path)
    assert V == pytest.approx(independent_variance(spec, phi, path), rel=1e-12)


@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_in_overlays(seed, a, b):
    spec = LatticeSpec(3, 0.1, 0.5, 0.5, 4.0)
    phi = PHI3
    paths = sample_paths(spec, seed, 3)[:, : spec.K]
    base = sample_noise(spec, seed).scaled(0.0)
    na = base.with_overlay(DriftOverlay(paths[0], a, phi))
    nb = base.with_overlay(DriftOverlay(paths[1], b, phi))
    nab = na.with_overlay(DriftOverlay(paths[1], b, phi))
    ha = hamiltonian(na, phi, paths[2])[0]
    hb = hamiltonian(nb, phi, paths[2])[0]
    hab = hamiltonian(nab, phi, paths[2])[0]
    assert hab == pytest.approx(ha + hb, rel=1e-12, abs=1e-14)


@given(st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_girsanov_shift_identity(seed, gamma):
    spec = LatticeSpec(3, 0.1, 0.5, 0.5, 4.0)
    phi = PHI3
    path = sample_paths(spec, seed, 1)[0]
    noise = sample_noise(spec, seed)
    H0, V = hamiltonian(noise, phi, path)
    H1, V1 = hamiltonian(shifted_noise(noise, phi, path, gamma), phi, path)
    assert V1 == V
    assert H1 - H0 == pytest.approx(gamma * V, rel=1e-10, abs=1e-14)


def test_shift_of_other_path_is_overlap(phi3, desk3):
    paths = sample_paths(desk3, 8, 2)[:, : desk3.K]
    noise = sample_noise(desk3, 4)
    gamma = 0.7
    d = hamiltonian(shifted_noise(noise, phi3, paths[0], gamma), phi3, paths[1])[0] - hamiltonian(noise, phi3, paths[1])[0]
    y = -desk3.L + np.arange(desk3.n) * desk3.dx
    grid = np.stack(np.meshgrid(y, y, y, indexing="ij"), -1)
    direct = sum(np.sum(phi3(grid - paths[0, k]) * phi3(grid - paths[1, k])) for k in range(desk3.K)) * desk3.cell_var
    assert d == pytest.approx(gamma * direct, rel=1e-10)
    assert discrete_overlaps(desk3, phi3, paths[:1], paths[1:])[0, 0] == pytest.approx(direct, rel=1e-12)


def test_discrete_variance_single_point(phi3, desk3):
    x = np.array([0.1, 0.2, -0.3])
    assert discrete_variance(desk3, phi3, x) == pytest.approx(
        independent_variance(desk3.with_horizon(desk3.dt), phi3, x[None]), rel=1e-12)


def test_prefix_checkpoints_consistent(phi3):
    spec = LatticeSpec.desk(3, 2.0)
    paths = sample_paths(spec, 2, 4)[:, : spec.K]
    noise = sample_noise(spec, 9)
    H, V = hamiltonians(noise, phi3, paths, [20, 40])
    h1, v1 = hamiltonians(noise, phi3, paths[:, :20])
    assert np.allclose(H[:, 0], h1[:, 0], rtol=1e-13, atol=1e-14)
    assert np.allclose(V[:, 0], v1[:, 0], rtol=1e-13)


def test_results_independent_of_thread_count(phi3, desk3):
    import numba

    paths = sample_paths(desk3, 1, 64)[:, : desk3.K]
    noise = sample_noise(desk3, 2)
    old = numba.get_num_threads()
    try:
        a = hamiltonians(noise, phi3, paths)
        numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
        b = hamiltonians(noise, phi3, paths)
    finally:
        numba.set_num_threads(old)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
