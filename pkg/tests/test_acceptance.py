"""The fourteen acceptance criteria, one test each, at their stated sizes and tolerances."""

import math
import os
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from wienergmc.config import ExperimentConfig
from wienergmc.girsanov import thick_point_stat, uniqueness_identity_check
from wienergmc.moments import mass_trajectories, moment_estimate, pq_stability_scan, replica_masses, tail_probe
from wienergmc.noise import LatticeSpec, build_mollifier, covariance_check, hamiltonian, sample_noise, shifted_noise
from wienergmc.paths import WeightFunction, bessel_root, sample_paths, smallball_constant, wiener_smallball_mc
from wienergmc.polymer import khasminskii_certificate, l2_identity_check, l2_rhs_at, martingale_check
from wienergmc.rng import stream_seed
from wienergmc.smallball import bounds_C1_C2, exponent_fit, gamma_delta, gmc_smallball, sandwich_check

pytestmark = pytest.mark.slow

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BASE = ExperimentConfig()
PHI = BASE.phi
G = WeightFunction()
EPS = (0.25, 0.3, 0.35, 0.4)


@pytest.fixture(scope="module")
def certificate():
    return khasminskii_certificate(PHI, 0.2, T_cutoff=16, N=2000, seed=0)


@pytest.fixture(scope="module")
def moment_masses():
    cfg = BASE.with_overrides(["run.gamma=0.3", "run.replicas=200", "run.paths=500", "grid.T_grid=1,2,4,8"])
    return cfg, replica_masses(cfg, cfg.grid.T_grid)


def test_c01_girsanov_identity(criterion):
    spec = LatticeSpec.desk(3, 1.0)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        path = sample_paths(spec, int(rng.integers(2**63)), 1)[0]
        noise = sample_noise(spec, int(rng.integers(2**63)))
        gamma = float(rng.uniform(0.01, 3.0))
        H0, V = hamiltonian(noise, PHI, path)
        H1, _ = hamiltonian(shifted_noise(noise, PHI, path, gamma), PHI, path)
        worst = max(worst, abs((H1 - H0) - gamma * V) / (gamma * V))
    criterion(1, "Girsanov shift identity", worst <= 1e-10, f"max relative error {worst:.2e} over 100 triples")


def test_c02_martingale(criterion):
    cfg = BASE.with_overrides(["grid.gammas=0.2,0.5", "grid.T_grid=1,2,4", "run.replicas=200", "run.paths=500"])
    rows = martingale_check(cfg)["rows"]
    worst = max(abs(r["z"]) for r in rows)
    detail = "; ".join(f"g={r['gamma']},T={r['T']:g}: {r['mean']:.4f}+-{r['se']:.4f}" for r in rows)
    criterion(2, "martingale normalization", worst <= 3, f"max |z|={worst:.2f} ({detail})")


def test_c03_covariance(criterion):
    spec = LatticeSpec.desk(3, 1.0)
    pair = sample_paths(spec, stream_seed(0, "pairs", 7), 2)
    rep = covariance_check(spec, PHI, pair[0], pair[1], [stream_seed(0, "noise", 50_000 + r) for r in range(10_000)])
    criterion(3, "Hamiltonian covariance", abs(rep["z"]) <= 5,
              f"cov={rep['cov']:.5f}+-{rep['se']:.5f} vs overlap {rep['expected']:.5f}, z={rep['z']:.2f}")


def test_c04_l2_identity(criterion):
    cfg = BASE.with_overrides(["run.gamma=0.3", "run.T=1", "run.replicas=500", "run.pairs=1000", "run.paths=500"])
    rep = l2_identity_check(cfg)
    criterion(4, "L2 identity", abs(rep["z"]) <= 3,
              f"lhs={rep['lhs']:.4f}+-{rep['lhs_se']:.4f} rhs={rep['rhs']:.4f}+-{rep['rhs_se']:.4f} z={rep['z']:.2f}")


def test_c05_khasminskii(criterion, certificate):
    c = certificate
    ok = c["certified"] and c["stability"] <= 0.05
    criterion(5, "Khasminskii certificate", ok,
              f"I={c['I_hat']:.4f} I(2T)={c['I_hat_2T']:.4f} tail={c['tail']:.4f} stability={c['stability']:.3%} "
              f"gamma^2*bound={c['gamma_sq_bound']:.4f}")


def test_c06_thick_points(criterion):
    cfg = BASE.with_overrides(["run.replicas=2000"])
    rows = thick_point_stat(cfg, T_grid=(1.0, 4.0), gamma=0.5)["rows"]
    r1, r4 = rows
    ratio = r4["sd"] / r1["sd"]
    ok = abs(r4["mean"] - 0.5) <= 3 * r4["se"] and abs(ratio / 0.5 - 1) <= 0.2
    criterion(6, "thick points", ok,
              f"mean(T=4)={r4['mean']:.4f}+-{r4['se']:.4f} (target 0.5), sd ratio T4/T1={ratio:.3f} (target 0.5)")


def test_c07_uniqueness(criterion):
    cfg = BASE.with_overrides(["run.gamma=0.3", "run.T=1", "run.replicas=10000"])
    rows = uniqueness_identity_check(cfg)["rows"]
    worst = max(abs(r["z"]) for r in rows)
    detail = "; ".join(f"{r['function']}: z={r['z']:.2f}" for r in rows)
    criterion(7, "uniqueness identity", worst <= 3, detail)


def test_c08_moments(criterion, certificate, moment_masses):
    cfg, masses = moment_masses
    certified = 0.3**2 * (certificate["I_hat"] + certificate["tail"]) < 1
    T = cfg.grid.T_grid
    one = moment_estimate(cfg, 1.0, T, masses=masses)["rows"]
    two = moment_estimate(cfg, 2.0, T, masses=masses)["rows"]
    neg = moment_estimate(cfg, -0.5, T, masses=masses)
    rhs, rhs_se = l2_rhs_at(cfg, T, 0.3, pairs=1000)
    ok1 = all(abs(r["mean"] - 1) <= 3 * r["se"] for r in one)
    ok2 = all(r["mean"] <= b + 3 * math.hypot(r["se"], s) for r, b, s in zip(two, rhs, rhs_se))
    vals = np.array([r["mean"] for r in neg["rows"] if r["T"] >= 2])
    spread = float((vals.max() - vals.min()) / vals[-1])
    hits = sum(r["floor_hits"] for r in neg["rows"])
    ok3 = spread <= 0.2 and hits == 0
    detail = (f"certified={certified}; p=1: " + ", ".join(f"{r['mean']:.4f}" for r in one)
              + "; p=2 vs pair side: " + ", ".join(f"{r['mean']:.4f}/{b:.4f}" for r, b in zip(two, rhs))
              + f"; p=-0.5 over T=2,4,8: {np.round(vals, 4).tolist()} spread={spread:.3f} floor hits={hits}")
    criterion(8, "moments", certified and ok1 and ok2 and ok3, detail)


def test_c09_tail_probe(criterion):
    cfg = BASE.with_overrides(["run.gamma=0.3", "run.replicas=200", "run.paths=500"])
    traj = mass_trajectories(cfg, 4.0)
    rep = tail_probe(cfg, 1.5, 0.2, 4.0, trajectories=traj)
    criterion(9, "tail inequality", rep["diff"] <= 3 * rep["joint_se"],
              f"P(M>1.5)={rep['p_max']:.4f} 2P(mu>0.3)={2 * rep['p_end']:.4f} joint se={rep['joint_se']:.4f}")


def _sup_norm_slope(d, seed):
    g = WeightFunction(beta=0.0)
    series = []
    for i, eps in enumerate(EPS):
        res = wiener_smallball_mc(g, 1.0, eps, 1000, stream_seed(seed, "smallball", i), d=d, h=1e-4, horizon=1.0,
                                  batches=4)
        series.append((eps, res.log_p))
    return exponent_fit(series, log_values=True)[0]


def test_c10_wiener_smallball(criterion):
    s3 = _sup_norm_slope(3, 0)
    s1 = _sup_norm_slope(1, 0)
    e3 = abs(s3 / (math.pi**2 / 2) - 1)
    e1 = abs(s1 / (math.pi**2 / 8) - 1)
    assert smallball_constant(WeightFunction(beta=0.0), 3, 1.0) == pytest.approx(math.pi**2 / 2)
    criterion(10, "Wiener small ball", e3 <= 0.2 and e1 <= 0.2,
              f"d=3 slope {s3:.4f} vs {math.pi**2 / 2:.4f} ({e3:.1%}); d=1 slope {s1:.4f} vs {math.pi**2 / 8:.4f} ({e1:.1%})")


def _mp_root(nu, lo, hi):
    with mpmath.workdps(64):
        a, b = mpmath.mpf(lo), mpmath.mpf(hi)
        fa = mpmath.besselj(nu, a)
        for _ in range(220):
            m = (a + b) / 2
            fm = mpmath.besselj(nu, m)
            if (fm > 0) == (fa > 0):
                a, fa = m, fm
            else:
                b = m
        return float((a + b) / 2)


def test_c11_bessel_roots(criterion):
    e3 = abs(bessel_root(3) - math.pi)
    e4 = abs(bessel_root(4) - _mp_root(1.0, 3.5, 4.0))
    e5 = abs(bessel_root(5) - _mp_root(1.5, 4.0, 5.0))
    criterion(11, "Bessel roots", max(e3, e4, e5) <= 1e-10, f"errors d=3 {e3:.1e}, d=4 {e4:.1e}, d=5 {e5:.1e}")


def test_c12_gmc_sandwich(criterion, moment_masses):
    cfg, masses = moment_masses
    scan = pq_stability_scan(cfg, masses=masses)
    p, q = scan["best_p"], scan["best_q"]
    assert p is not None and q is not None, scan
    bounds = bounds_C1_C2(0.3, 1.0, G, 3, p, q, PHI.selfconv0)
    run = BASE.with_overrides(["run.gamma=0.3", "run.paths=500"])
    slopes = {}
    for c in (1.0, 2.0):
        series = [(eps, gmc_smallball(run, 0.3, 1.0, eps, G, c=c, seed_index=i)["log_estimate"])
                  for i, eps in enumerate(EPS)]
        slopes[c] = exponent_fit(series, log_values=True)[0]
    inside = all(sandwich_check(s, bounds)["inside"] for s in slopes.values())
    drift = abs(slopes[2.0] - slopes[1.0]) / slopes[1.0]
    criterion(12, "GMC small-ball sandwich", inside and drift <= 0.25,
              f"(p,q)=({p:g},{q:g}) window [{0.5 * bounds.C1:.3f}, {1.5 * bounds.C2:.3f}], slope c=1 {slopes[1.0]:.4f}, "
              f"c=2 {slopes[2.0]:.4f}, horizon drift {drift:.2%}")


def test_c13_gamma_delta(criterion):
    j2B = math.pi**2 * 2
    lines, ok = [], True
    for delta in (1.0, 0.5, 0.1):
        w = gamma_delta(delta, 1.0, G, 3, PHI.selfconv0)
        p, q, g2v = w["p"], w["q"], w["gamma"] ** 2 * PHI.selfconv0
        # recomputed by hand: C1 = B/(2p) - (p+1)/(2(p-1)) g^2 V0, C2 = (q+1)/q (B/2 + g^2 V0 (q^2+3q+1)/(2(q+1)^2))
        gap = (q + 1) / q * (j2B / 2 + g2v * (q * q + 3 * q + 1) / (2 * (q + 1) ** 2)) - (j2B / (2 * p) - (p + 1) / (2 * (p - 1)) * g2v)
        ok &= w["verified"] and gap < delta and abs(gap - w["gap"]) < 1e-9
        lines.append(f"delta={delta}: gamma={w['gamma']:.5f} gap={gap:.4f}")
    criterion(13, "gamma-delta witnesses", ok, "; ".join(lines))


COMMANDS = ["calibrate-noise", "martingale", "l2-check", "khasminskii", "free-energy", "thick-points", "uniqueness",
            "moments", "running-max", "tail-probe", "smallball", "wiener-smallball", "bounds", "gamma-delta",
            "anderson"]


def _run_all(out, threads):
    code = (
        "import sys; from wienergmc.cli import main\n"
        f"for c in {COMMANDS!r}:\n"
        f"    assert main([c, '--config', {os.path.join(ROOT, 'configs', 'quick.ini')!r}, '--threads', '{threads}', "
        f"'--out-dir', {str(out)!r}]) == 0, c\n"
    )
    proc = subprocess.run([sys.executable, "-c", code], env=dict(os.environ, NUMBA_NUM_THREADS="4"),
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr[-2000:]
    return {c: [(out / c / f).read_bytes() for f in ("summary.json", "rows.csv")] for c in COMMANDS}


def test_c14_determinism(criterion, tmp_path):
    a = _run_all(tmp_path / "a", 1)
    b = _run_all(tmp_path / "b", 1)
    c = _run_all(tmp_path / "c", 4)
    same = [k for k in COMMANDS if a[k] == b[k] == c[k]]
    criterion(14, "determinism", len(same) == len(COMMANDS),
              f"{len(same)}/{len(COMMANDS)} subcommands byte-identical across reruns and 1 vs 4 threads")
