import math

import numpy as np
import pytest

from wienergmc.config import ExperimentConfig
from wienergmc.errors import ConfigError
from wienergmc.moments import (
    bootstrap_ci, mass_trajectories, moment_estimate, replica_masses, running_max, tail_probe,
)
from wienergmc.polymer import l2_rhs_at


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig().with_overrides(["run.replicas=100", "run.paths=200", "moments.bootstrap=200",
                                              "moments.max_paths=800"])


@pytest.fixture(scope="module")
def masses(cfg):
    return replica_masses(cfg, (1.0, 2.0, 4.0))


def test_gamma0_all_ones(cfg):
    c0 = cfg.with_overrides(["run.gamma=0", "run.replicas=10"])
    for p in (2.0, -0.5, 1.5):
        rep = moment_estimate(c0, p)
        assert all(r["mean"] == 1.0 for r in rep["rows"])
    rm = running_max(c0)
    assert all(r["mean"] == 1.0 for r in rm["rows"])
    tp = tail_probe(c0, 1.5, 0.2, 1.0)
    assert tp["p_max"] == 0.0
    assert tp["p_end"] == 1.0  # mu = 1 > u eps = 0.3


def test_rejections(cfg):
    with pytest.raises(ConfigError):
        moment_estimate(cfg, 0.0)
    with pytest.raises(ConfigError):
        tail_probe(cfg, 0.9, 0.2, 1.0)


def test_adaptive_path_counts(cfg, masses):
    Z, rel, used = masses
    assert np.all((rel.max(axis=1) <= cfg.moments.target_rel_se) | (used == cfg.moments.max_paths))
    assert np.array_equal(Z, replica_masses(cfg, (1.0, 2.0, 4.0))[0])


def test_first_moment_and_jensen(cfg, masses):
    one = moment_estimate(cfg, 1.0, (1.0, 2.0, 4.0), masses=masses)
    assert all(abs(r["mean"] - 1) < 3 * r["se"] for r in one["rows"])
    for p in (2.0, -0.5):
        rep = moment_estimate(cfg, p, (1.0, 2.0, 4.0), masses=masses)
        assert all(r["mean"] >= 1 - 3 * r["se"] for r in rep["rows"])
        assert not rep["flagged"]


def test_second_moment_vs_pair_identity(cfg, masses):
    rep = moment_estimate(cfg, 2.0, (1.0, 2.0, 4.0), masses=masses)
    means = np.array([r["mean"] for r in rep["rows"]])
    ses = np.array([r["se"] for r in rep["rows"]])
    # coupled horizons: squares form a submartingale
    assert np.all(np.diff(means) >= -2 * ses[1:])
    rhs, rhs_se = l2_rhs_at(cfg, (1.0, 2.0, 4.0), cfg.run.gamma, pairs=500)
    assert np.all(means <= rhs + 3 * np.hypot(ses, rhs_se))


def test_floor_hits_are_flagged(cfg):
    Z = np.array([[1.0], [0.5], [1e-15], [1.3]])
    rep = moment_estimate(cfg, -0.5, (1.0,), masses=(Z, np.zeros_like(Z), np.ones(4, int)))
    assert rep["flagged"] and rep["rows"][0]["floor_hits"] == 1
    assert rep["rows"][0]["mean"] > 1e-15**-0.5 / 4  # reported, not clamped


def test_running_max_monotone(cfg):
    c = cfg.with_overrides(["run.replicas=30"])
    traj = mass_trajectories(c, 4.0)
    assert traj[0].shape == (30, 81)
    rep = running_max(c, (1.0, 2.0, 4.0), trajectories=traj, eps_hat=0.5)
    assert rep["monotone_per_replica"]
    m = [r["mean"] for r in rep["rows"]]
    assert m == sorted(m)
    assert all(r["below_doob"] and r["below_tail_bound"] for r in rep["rows"])


def test_bootstrap_ci_covers_mean():
    x = np.random.default_rng(0).exponential(size=400)
    lo, hi = bootstrap_ci(x, 500, np.random.default_rng(1))
    assert lo < x.mean() < hi
