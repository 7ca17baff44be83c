import numpy as np
import pytest

from matbf.simlab import (PowerTable, Scenario, default_sim_config, estimate_probabilities,
                          generate_scenario, make_mask, pattern_mask, power_table, random_mask,
                          true_covariances)


def test_scenario_validation_and_labels():
    assert Scenario().label == "H0"
    assert Scenario(u=0.5, mask_kind="pattern", mask_rows=20, mask_cols=10).label == "u=0.5:20x10"
    assert Scenario(u=3, mask_kind="random", mask_entries=7).label == "u=3:r7"
    with pytest.raises(ValueError):
        Scenario(mask_kind="pattern", mask_rows=0, mask_cols=1)
    with pytest.raises(ValueError):
        Scenario(outlier_time=200)
    with pytest.raises(ValueError):
        Scenario(u=-1)


def test_masks_have_requested_support():
    rng = np.random.default_rng(0)
    m = pattern_mask(30, 10, 4, 3, rng)
    assert m.sum() == 12 and m.any(axis=1).sum() == 4 and m.any(axis=0).sum() == 3
    assert random_mask(30, 10, 17, rng).sum() == 17
    assert make_mask(Scenario(p=3, n=2), rng).all()


def test_common_random_numbers_across_magnitudes():
    a = Scenario(p=4, n=3, T=30, outlier_time=20, seed=5)
    b = Scenario(p=4, n=3, T=30, outlier_time=20, seed=5, u=2.0)
    sa, _ = generate_scenario(a, rep=3)
    sb, mask = generate_scenario(b, rep=3)
    diff = sb.values - sa.values
    np.testing.assert_allclose(diff[19], 2.0 * mask)
    diff[19] = 0
    assert np.all(diff == 0)
    S, P = true_covariances(a, rep=3)
    assert S.shape == (4, 4) and P.shape == (3, 3)


def test_outcome_probabilities_sum_to_one_and_large_shift_is_detected():
    sc = Scenario(p=3, n=2, T=50, outlier_time=45, J=6, seed=1)
    cfg = default_sim_config(sc, alpha_star=0.75)
    t = estimate_probabilities(sc, cfg)
    cell = t.cells["H0"]
    assert cell["p_I"] + cell["p_II"] + cell["p_III"] == pytest.approx(1.0)
    big = estimate_probabilities(Scenario(p=3, n=2, T=50, outlier_time=45, J=6, seed=1, u=15.0), cfg)
    assert big.cells["u=15:all"]["p_III"] == 1.0


def test_power_table_csv_layout():
    t = power_table(2, 2, magnitudes=(1.0,), masks=(("all",), ("random", 2)), J=3, seed=0,
                    cfg=default_sim_config(Scenario(p=2, n=2), alpha_star=0.75))
    lines = t.to_csv().splitlines()
    assert lines[0] == "probability,H0,u=1:all,u=1:r2"
    assert lines[-1].startswith("count,")
    assert len(lines) == 8


def test_power_table_add():
    t = PowerTable(J=4)
    t.add("x", [0, 1, 2, 2])
    assert t.cells["x"]["p_III"] == 0.5 and t.cells["x"]["se_p_III"] == pytest.approx(0.25)


def test_noise_has_kronecker_covariance():
    sc = Scenario(p=3, n=2, T=10_000, outlier_time=1, seed=3)
    s, _ = generate_scenario(sc)
    S, P = true_covariances(sc)
    E = s.values - s.values.mean(axis=0)
    emp = np.cov(E.reshape(len(E), -1).T)
    ref = np.kron(S, P)
    assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.05
