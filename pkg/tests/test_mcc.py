import math

import numpy as np
import pytest

from mtsens import (
    CalibrationError,
    ConditionalConfounder,
    ContrastBank,
    Contrast,
    DegenerateModelError,
    DimensionError,
    GaussianOutcome,
    SensitivitySpec,
    build_bank_unitwise,
    gamma_from_r2_direction,
    mcc_minimize,
    mcc_report,
    pate_vector,
    robustness_value,
    worst_case_direction,
)


def _inv_sqrt(sigma):
    vals, vecs = np.linalg.eigh(sigma)
    return vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T


def _random_bank(seed, n_contrasts=6, m=2, sigma_y=1.3):
    rng = np.random.default_rng(seed)
    deltas = rng.normal(size=(n_contrasts, m))
    raw = rng.normal(size=(m, m))
    sigma = raw @ raw.T / m + 0.15 * np.eye(m)
    sigma /= np.linalg.eigvalsh(sigma).max() * 1.8
    naive = rng.normal(size=n_contrasts)
    return ContrastBank(
        deltas=deltas, naive=naive, sigma_y_given_t=sigma_y, sigma_u_given_t=sigma
    )


def test_build_bank_unitwise_layout():
    cc = ConditionalConfounder(
        coef=np.array([[0.4, 0.1, -0.2], [0.0, 0.3, 0.5]]),
        sigma_u_given_t=np.diag([0.2, 0.3]),
    )
    outcome = GaussianOutcome(
        tau_naive=np.array([1.0, -0.5, 2.0]), intercept=0.0, sigma2_y_given_t=4.0
    )
    bank = build_bank_unitwise(cc, None, outcome)
    assert np.allclose(bank.deltas, cc.coef.T, atol=1e-12)
    assert np.allclose(bank.naive, outcome.tau_naive, atol=1e-12)
    assert bank.sigma_y_given_t == pytest.approx(2.0, abs=1e-12)
    assert bank.ids == ("t1", "t2", "t3")


def test_build_bank_subset_indices():
    cc = ConditionalConfounder(
        coef=np.array([[0.4, 0.1, -0.2]]), sigma_u_given_t=np.array([[0.2]])
    )
    outcome = GaussianOutcome(
        tau_naive=np.array([1.0, -0.5, 2.0]), intercept=0.0, sigma2_y_given_t=1.0
    )
    bank = build_bank_unitwise(cc, None, outcome, treatment_indices=[2, 0])
    assert bank.n_contrasts == 2
    assert np.allclose(bank.naive, [2.0, 1.0])
    assert bank.ids == ("t3", "t1")


def test_pate_vector_zero_gamma():
    bank = _random_bank(0)
    spec = SensitivitySpec.from_gamma(np.zeros(2), bank.sigma_u_given_t)
    assert np.allclose(pate_vector(bank, spec), bank.naive, atol=1e-15)


def test_pate_vector_affine_superposition():
    bank = _random_bank(1)
    rng = np.random.default_rng(2)
    g1 = 0.2 * rng.normal(size=2)
    g2 = 0.2 * rng.normal(size=2)
    s = bank.sigma_u_given_t
    p1 = pate_vector(bank, SensitivitySpec.from_gamma(g1, s))
    p2 = pate_vector(bank, SensitivitySpec.from_gamma(g2, s))
    p12 = pate_vector(bank, SensitivitySpec.from_gamma(g1 + g2, s))
    assert np.allclose(p1 + p2 - bank.naive, p12, atol=1e-12)


def test_pate_vector_dimension_mismatch():
    bank = _random_bank(3)
    spec = SensitivitySpec.from_gamma(np.zeros(3), np.eye(3) * 0.1)
    with pytest.raises(DimensionError):
        pate_vector(bank, spec)


def test_pate_zeroed_at_robustness_value():
    # with the worst-case direction at r2 equal to the robustness value,
    # the adjusted effect crosses exactly zero
    cc = ConditionalConfounder(
        coef=np.array([[0.4, 0.0]]), sigma_u_given_t=np.array([[0.2]])
    )
    naive = math.sqrt(0.2)
    outcome = GaussianOutcome(
        tau_naive=np.array([naive, 0.0]), intercept=0.0, sigma2_y_given_t=1.0
    )
    bank = build_bank_unitwise(cc, None, outcome, treatment_indices=[0])
    c = Contrast.unit(2, 0)
    rv = robustness_value(naive, cc, 1.0, c)
    d = worst_case_direction(cc, c)
    spec = gamma_from_r2_direction(rv.value, d.direction, cc.sigma_u_given_t)
    adjusted = pate_vector(bank, spec)
    assert adjusted[0] == pytest.approx(0.0, abs=1e-12)


def test_l2_interior_solution_reaches_zero_norm():
    # a single contrast can always be explained away once the cap clears
    # its robustness value, so the constrained optimum goes interior
    bank = ContrastBank(
        deltas=np.array([[0.4]]),
        naive=np.array([math.sqrt(0.2)]),
        sigma_y_given_t=1.0,
        sigma_u_given_t=np.array([[0.2]]),
    )
    res = mcc_minimize(bank, norm="l2", r2_cap=0.5)
    assert res.achieved_norm == pytest.approx(0.0, abs=1e-10)
    assert res.achieved_r2 <= 0.5 + 1e-10
    assert res.lambda_star == 0.0


def test_l2_boundary_kkt_and_feasibility():
    bank = _random_bank(7, n_contrasts=8, m=3)
    cap = 0.02
    res = mcc_minimize(bank, norm="l2", r2_cap=cap)
    assert res.achieved_r2 <= cap + 1e-8
    root_inv = _inv_sqrt(bank.sigma_u_given_t)
    g = bank.sigma_y_given_t * (bank.deltas @ root_inv)
    z = np.linalg.inv(root_inv) @ res.gamma_star
    lam = res.lambda_star
    assert lam > 0
    kkt = (g.T @ g + lam * np.eye(3)) @ z - g.T @ bank.naive
    assert np.linalg.norm(kkt) < 1e-8 * max(np.linalg.norm(g.T @ bank.naive), 1.0)
    assert float(z @ z) == pytest.approx(cap, abs=1e-6)


def test_zero_cap_returns_naive_norm():
    bank = _random_bank(9)
    for norm in ("l1", "l2", "linf"):
        res = mcc_minimize(bank, norm=norm, r2_cap=0.0)
        assert np.allclose(res.gamma_star, 0.0)
        expected = {
            "l1": np.abs(bank.naive).sum(),
            "l2": np.linalg.norm(bank.naive),
            "linf": np.abs(bank.naive).max(),
        }[norm]
        assert res.achieved_norm == pytest.approx(float(expected), abs=1e-12)


def test_l1_beats_or_matches_l2_competitor():
    bank = _random_bank(11, n_contrasts=7, m=2)
    cap = 0.3
    res_l2 = mcc_minimize(bank, norm="l2", r2_cap=cap)
    res_l1 = mcc_minimize(bank, norm="l1", r2_cap=cap)
    l1_of_l2 = float(np.abs(pate_vector(
        bank, SensitivitySpec.from_gamma(res_l2.gamma_star, bank.sigma_u_given_t)
    )).sum())
    assert res_l1.achieved_norm <= l1_of_l2 + 1e-5
    assert res_l1.achieved_r2 <= cap + 1e-8


def test_subgradient_restarts_agree():
    bank = _random_bank(13, n_contrasts=5, m=2)
    vals = [
        mcc_minimize(bank, norm="l1", r2_cap=0.4, seed=s).achieved_norm
        for s in range(3)
    ]
    assert max(vals) - min(vals) <= 2e-5
    rerun = mcc_minimize(bank, norm="l1", r2_cap=0.4, seed=0)
    first = mcc_minimize(bank, norm="l1", r2_cap=0.4, seed=0)
    assert np.array_equal(rerun.gamma_star, first.gamma_star)


def test_achieved_norm_monotone_in_cap():
    bank = _random_bank(17, n_contrasts=6, m=2)
    for norm in ("l1", "l2", "linf"):
        vals = [
            mcc_minimize(bank, norm=norm, r2_cap=cap).achieved_norm
            for cap in (0.0, 0.1, 0.3, 0.6, 1.0)
        ]
        # the subgradient solves carry ~1e-5 objective noise each
        for a, b in zip(vals, vals[1:]):
            assert b <= a + 1e-4


def _scalar_candidates_l1(naive, g, radius):
    kinks = [naive[i] / g[i] for i in range(len(g)) if abs(g[i]) > 1e-14]
    cands = [min(max(z, -radius), radius) for z in kinks] + [-radius, radius, 0.0]
    return min(np.abs(naive - g * z).sum() for z in cands)


def _scalar_candidates_linf(naive, g, radius):
    cands = [-radius, radius, 0.0]
    for i in range(len(g)):
        if abs(g[i]) > 1e-14:
            cands.append(naive[i] / g[i])
    for i in range(len(g)):
        for j in range(i + 1, len(g)):
            for sign in (1.0, -1.0):
                denom = g[i] - sign * g[j]
                if abs(denom) > 1e-14:
                    cands.append((naive[i] - sign * naive[j]) / denom)
    cands = [min(max(z, -radius), radius) for z in cands]
    return min(np.abs(naive - g * z).max() for z in cands)


def test_l1_scalar_instance_exact():
    # m=1 turns the optimization into a piecewise-linear scalar problem whose
    # minimum sits at a kink or the ball boundary
    naive = np.array([1.0, -0.4])
    deltas = np.array([[0.5], [0.3]])
    sigma = np.array([[0.25]])
    bank = ContrastBank(
        deltas=deltas, naive=naive, sigma_y_given_t=1.2, sigma_u_given_t=sigma
    )
    cap = 0.5
    radius = math.sqrt(cap)
    g = 1.2 * deltas[:, 0] / math.sqrt(0.25)
    oracle = _scalar_candidates_l1(naive, g, radius)
    res = mcc_minimize(bank, norm="l1", r2_cap=cap)
    assert res.achieved_norm == pytest.approx(oracle, abs=2e-5)


def test_linf_scalar_instance_exact():
    naive = np.array([1.0, -0.4, 0.2])
    deltas = np.array([[0.5], [0.3], [-0.6]])
    sigma = np.array([[0.25]])
    bank = ContrastBank(
        deltas=deltas, naive=naive, sigma_y_given_t=1.2, sigma_u_given_t=sigma
    )
    cap = 0.4
    radius = math.sqrt(cap)
    g = 1.2 * deltas[:, 0] / math.sqrt(0.25)
    oracle = _scalar_candidates_linf(naive, g, radius)
    res = mcc_minimize(bank, norm="linf", r2_cap=cap)
    assert res.achieved_norm == pytest.approx(oracle, abs=2e-5)


def test_mcc_report_matches_pate():
    bank = _random_bank(19)
    res = mcc_minimize(bank, norm="l2", r2_cap=0.3)
    rows = mcc_report(bank, res.gamma_star)
    adjusted = pate_vector(
        bank, SensitivitySpec.from_gamma(res.gamma_star, bank.sigma_u_given_t)
    )
    assert len(rows) == bank.n_contrasts
    for row, adj, nv in zip(rows, adjusted, bank.naive):
        assert row.adjusted == pytest.approx(float(adj), abs=1e-12)
        assert row.naive == pytest.approx(float(nv), abs=1e-12)
        assert row.shrinkage_ratio == pytest.approx(float(adj / nv), abs=1e-12)


def test_mcc_report_zero_naive_ratio_nan():
    bank = ContrastBank(
        deltas=np.array([[0.4], [0.2]]),
        naive=np.array([0.0, 1.0]),
        sigma_y_given_t=1.0,
        sigma_u_given_t=np.array([[0.2]]),
    )
    rows = mcc_report(bank, np.array([0.5]))
    assert math.isnan(rows[0].shrinkage_ratio)
    assert math.isfinite(rows[1].shrinkage_ratio)


def test_mcc_minimize_validation():
    bank = _random_bank(23)
    with pytest.raises(ValueError):
        mcc_minimize(bank, norm="l3")
    with pytest.raises(CalibrationError):
        mcc_minimize(bank, r2_cap=1.5)
    singular = ContrastBank(
        deltas=np.array([[0.4, 0.1]]),
        naive=np.array([1.0]),
        sigma_y_given_t=1.0,
        sigma_u_given_t=np.diag([0.2, 0.0]),
    )
    with pytest.raises(DegenerateModelError):
        mcc_minimize(singular, norm="l2", r2_cap=0.5)
