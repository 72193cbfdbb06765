import math

import numpy as np
import pytest

import mwi


def test_overlap_pattern():
    spec = mwi.spec_for_pattern(1e-3, 1e4)
    assert mwi.overlap_time(spec) == pytest.approx(1e4, rel=1e-8)
    p = mwi.pattern_at_overlap(spec)
    assert p.wavenumber == pytest.approx(1e-3)
    assert p.width == pytest.approx(1e4)
    x = np.linspace(-6e4, 6e4, 200001)
    density = mwi.position_pdf(spec, mwi.overlap_time(spec), x)
    assert np.trapezoid(density, x) == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(density, p(x), rtol=1e-10, atol=1e-20)


def test_noise_suppression():
    p = mwi.FringePattern(1.0, 1e4, 1e-3, 0.0)
    assert mwi.suppression(p, 5e3) == pytest.approx(math.exp(-10.0), rel=1e-12)
    x = np.linspace(-1e5, 1e5, 400001)
    assert np.trapezoid(mwi.averaged_pdf(p, 5e3, x), x) == pytest.approx(1.0, abs=1e-8)


def test_errors_carry_kind():
    with pytest.raises(mwi.Error) as info:
        mwi.overlap_time(mwi.InterferometerSpec(1 + 0j))
    assert info.value.args[1] == "no-overlap-time"
    with pytest.raises(ValueError):
        mwi.run({"mode": "pair", "shotz": 1}, "/tmp")


def test_scenario_numbers():
    assert mwi.newtonian_acceleration(1.0, 1000.0) == pytest.approx(6.674e-17)
    assert mwi.solve_standoff_distance(1.0, 0.1, 1, 6.67e-17) == pytest.approx(58.5, abs=0.1)
    assert mwi.solve_standoff_distance(1.0, 0.1, 2, 6.67e-17) == pytest.approx(15.7, abs=0.1)


def test_cancellation_weights():
    for q in range(1, 7):
        w = np.array(mwi.difference_weights(q))
        n = np.arange(q + 1, dtype=float)
        for degree in range(q):
            assert abs(np.dot(w, n**degree)) < 1e-12


def test_pair_monte_carlo():
    spec = mwi.spec_for_pattern(1e-3, 1e4)
    tk = mwi.overlap_time(spec)
    noise = 2 * 5e3 / tk**2
    r = mwi.run_experiment([spec, spec], order=1, shots=200000, seed=3, noise_std=noise)
    fit = mwi.fit_fringe(r["difference"], r["difference_wavenumber"])
    assert fit["visibility"] == pytest.approx(0.5, abs=0.05)
    assert fit["wavenumber"] == pytest.approx(2e-3, rel=0.01)
    pattern, eta = mwi.reduce_order(mwi.pattern_at_overlap(spec), mwi.pattern_at_overlap(spec))
    assert pattern.visibility == pytest.approx(0.5)
    assert eta < 1e-10


def test_entanglement():
    u = mwi.PhaseDistribution.uniform()
    still = mwi.PhaseDistribution.point(0.0)
    assert mwi.recovered_entanglement(2, u, still) == pytest.approx(math.log2(1.5), abs=1e-9)
    assert mwi.recovered_entanglement(4, u, u) > 0.0
    bell = np.zeros((4, 4), complex)
    bell[np.ix_([0, 3], [0, 3])] = 0.5
    assert mwi.log_negativity(bell) == pytest.approx(1.0, abs=1e-12)
    rho = mwi.averaged_density(1, u, still)
    assert mwi.log_negativity(rho) < 1e-12


def test_oracle_constant_field():
    spec = mwi.InterferometerSpec(-4 + 2j)
    r = mwi.oracle_compare(spec, 0.3)
    assert r["l1"] < 1e-9
    assert r["centroid"] == pytest.approx(-0.5 * 0.3 * 2.0**2, rel=1e-9)


def test_run_config(tmp_path):
    config = mwi.default_config("array")
    config.update(order=1, shots=5000, seed=4)
    summary = mwi.run(config, str(tmp_path))
    assert summary["config"]["order"] == 1
    assert (tmp_path / "x_difference.csv").read_text().startswith("bin_center,density\n")
    again = mwi.run(summary["config"], str(tmp_path / "again"))
    assert again == summary
