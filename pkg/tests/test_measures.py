import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fepstefan.lattice import ERGODIC, all_configurations, h_values, two_phased_decompose
from fepstefan.measures import (
    LocalFunction,
    ProfileSpec,
    alpha_of,
    detailed_balance_residual,
    gcm_weight,
    h_expectation,
    nu_alpha_weight,
    sample_ergodic_torus,
    sample_gcm,
    sample_mu_N,
    sample_nu_alpha,
    sample_subcritical,
    script_H,
    stationarity_residual,
)

DENSITIES = [Fraction(11, 20), Fraction(3, 5), Fraction(3, 4), Fraction(9, 10), Fraction(99, 100)]


# --- flux ------------------------------------------------------------------


def test_script_H_examples():
    assert script_H(Fraction(1, 2)) == 0
    assert script_H(Fraction(1)) == 1
    assert script_H(Fraction(3, 4)) == Fraction(2, 3)
    assert script_H(0.75) == pytest.approx(2 / 3)


def test_script_H_rejects_out_of_range():
    with pytest.raises(ValueError):
        script_H(1.2)
    with pytest.raises(ValueError):
        script_H(Fraction(-1, 3))


@given(st.floats(0, 1), st.floats(0, 1))
def test_script_H_monotone_and_lipschitz_four(a, b):
    lo, hi = min(a, b), max(a, b)
    assert script_H(lo) <= script_H(hi) + 1e-15
    assert script_H(hi) - script_H(lo) <= 4 * (hi - lo) + 1e-12


# --- profiles --------------------------------------------------------------


def test_reference_profile_assumptions():
    ref = ProfileSpec.reference()
    assert ref.satisfies_h1() and ref.satisfies_h2() and ref.satisfies_t1()
    assert ref.u_star == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(ref.critical_points(), [0.0, 0.5], atol=1e-12)


def test_profile_out_of_range_is_rejected():
    with pytest.raises(ValueError):
        ProfileSpec.sine(0.9, 0.3)


def test_profile_from_csv(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("u,rho\n0,0.2\n0.5,0.8\n")
    spec = ProfileSpec.from_csv(path)
    assert spec(0.25) == pytest.approx(0.5)
    assert spec(0.75) == pytest.approx(0.5)
    assert ProfileSpec.from_dict({"family": "csv", "path": str(path)}) == spec


def test_profile_dict_roundtrip():
    for spec in (ProfileSpec.reference(), ProfileSpec.constant(0.3), ProfileSpec.sine(0.6, 0.1, 0.2)):
        assert ProfileSpec.from_dict(spec.to_dict()) == spec


def test_analytic_derivative_matches_finite_difference():
    ref = ProfileSpec.reference()
    u = np.linspace(0, 1, 17)
    fd = (ref(u + 1e-6) - ref(u - 1e-6)) / 2e-6
    assert np.allclose(ref.derivative(u), fd, atol=1e-6)


# --- product initial law ---------------------------------------------------


def test_mu_N_degenerate_profiles():
    assert sample_mu_N(ProfileSpec.constant(1.0), 50, 0).particles == 50
    assert sample_mu_N(ProfileSpec.constant(0.0), 50, 0).particles == 0


def test_mu_N_mean_within_binomial_band():
    n = 100_000
    eta = sample_mu_N(ProfileSpec.constant(0.7), n, 11)
    assert abs(eta.particles / n - 0.7) <= 3 * math.sqrt(0.21 / n)


def test_mu_N_rejects_bad_profile():
    with pytest.raises(ValueError):
        sample_mu_N(lambda u: 1.5 + 0 * u, 10, 0)


# --- grand-canonical window law --------------------------------------------


def test_gcm_weight_two_sites():
    rho = Fraction(3, 4)
    assert [gcm_weight(s, rho) for s in [(1, 1), (1, 0), (0, 1), (0, 0)]] == [
        Fraction(1, 2), Fraction(1, 4), Fraction(1, 4), 0]
    for r in DENSITIES:
        assert gcm_weight((1, 1), r) == 2 * r - 1
        assert gcm_weight((1, 0), r) == gcm_weight((0, 1), r) == 1 - r


def test_gcm_weight_zero_on_adjacent_empties():
    assert gcm_weight((1, 0, 0, 1), Fraction(3, 5)) == 0


def test_gcm_weight_domain():
    for bad in (Fraction(1, 2), Fraction(1), Fraction(1, 3)):
        with pytest.raises(ValueError):
            gcm_weight((1, 1), bad)


@pytest.mark.parametrize("rho", DENSITIES)
def test_gcm_weights_normalized_exactly(rho):
    for width in range(1, 11):
        total = sum(gcm_weight(s, rho) for s in itertools.product((0, 1), repeat=width))
        assert total == 1


@pytest.mark.parametrize("rho", DENSITIES)
def test_gcm_weights_consistent_under_marginalization(rho):
    for width in range(1, 9):
        for s in itertools.product((0, 1), repeat=width):
            assert gcm_weight(s + (0,), rho) + gcm_weight(s + (1,), rho) == gcm_weight(s, rho)
            assert gcm_weight((0,) + s, rho) + gcm_weight((1,) + s, rho) == gcm_weight(s, rho)


def test_alpha_of():
    assert alpha_of(Fraction(3, 4)) == 3
    assert alpha_of("0.6") == Fraction(3, 2)


@pytest.mark.parametrize("rho", [Fraction(3, 5), Fraction(3, 4), Fraction(9, 10)])
def test_stationarity_residual_vanishes(rho):
    funcs = [LocalFunction.occupation(0), LocalFunction.product([0, 1])]
    funcs += [LocalFunction.pattern(-1, p) for p in itertools.product((0, 1), repeat=3)]
    for f in funcs:
        assert stationarity_residual(f, rho) == 0


@pytest.mark.parametrize("rho", [Fraction(3, 5), Fraction(3, 4), Fraction(9, 10)])
def test_bernoulli_control_is_not_stationary(rho):
    assert stationarity_residual(LocalFunction.product([0, 1]), rho, "bernoulli") != 0


def test_stationarity_rejects_non_local_function():
    with pytest.raises(ValueError):
        stationarity_residual(lambda eta: 0, Fraction(3, 4))


@pytest.mark.parametrize("rho", DENSITIES)
def test_h_mean_equals_flux(rho):
    assert h_expectation(rho) == script_H(rho) == (2 * rho - 1) / rho


def test_sample_gcm_windows_are_ergodic():
    rows = sample_gcm(0.6, 64, 5, count=500)
    assert not np.any((rows[:, :-1] == 0) & (rows[:, 1:] == 0))


def test_sample_gcm_pair_probability():
    rows = sample_gcm(0.75, 2, 6, count=200_000)
    p = np.mean(rows[:, 0] & rows[:, 1])
    se = math.sqrt(0.5 * 0.5 / rows.shape[0])
    assert abs(p - 0.5) <= 3 * se


def test_sample_gcm_h_mean():
    rows = sample_gcm(0.75, 3, 7, count=200_000)
    h = rows[:, 0] * rows[:, 1] + rows[:, 1] * rows[:, 2] - rows[:, 0] * rows[:, 1] * rows[:, 2]
    assert abs(h.mean() - 2 / 3) <= 3 * h.std() / math.sqrt(h.size)


def test_sample_gcm_chi_square_four_sites():
    samples = 1_000_000
    rows = sample_gcm(0.75, 4, 8, count=samples)
    codes = rows @ np.array([8, 4, 2, 1])
    observed = np.bincount(codes, minlength=16)
    patterns = list(itertools.product((0, 1), repeat=4))
    expected = np.array([float(gcm_weight(p, Fraction(3, 4))) for p in patterns]) * samples
    support = expected > 0
    assert observed[~support].sum() == 0
    assert stats.chisquare(observed[support], expected[support]).pvalue > 0.01


def test_sample_gcm_needs_zero_anchored_start_to_be_size_biased():
    """A window started at an empty site has the wrong one-site marginal."""
    rows = sample_gcm(0.75, 1, 9, count=200_000)
    assert abs(rows.mean() - 0.75) < 0.005


def test_sample_gcm_correlations_decay():
    rows = sample_gcm(0.75, 12, 10, count=200_000).astype(float)
    centered = rows - rows.mean(axis=0)
    cov = [abs(np.mean(centered[:, 0] * centered[:, d])) for d in (1, 3, 6, 11)]
    assert cov[0] > cov[1] > cov[2]
    assert cov[3] < 0.01


# --- subcritical and zero-range laws ---------------------------------------


def test_subcritical_samples_are_alternating():
    seen = set()
    for seed in range(40):
        eta = sample_subcritical(0.3, 10, seed)
        assert eta.particles == 5
        assert np.all(eta.occupancy != np.roll(eta.occupancy, 1))
        seen.add(eta.to_string())
    assert seen == {"0101010101", "1010101010"}


def test_subcritical_errors():
    with pytest.raises(ValueError):
        sample_subcritical(0.4, 9, 0)
    with pytest.raises(ValueError):
        sample_subcritical(0.6, 10, 0)


def test_nu_alpha_samples():
    assert set(sample_nu_alpha(1.0, 20, 0).counts) == {1}
    omega = sample_nu_alpha(2.5, 200_000, 1)
    assert omega.counts.min() >= 1
    sd = math.sqrt((1 - 1 / 2.5) / (1 / 2.5) ** 2)
    assert abs(omega.counts.mean() - 2.5) <= 3 * sd / math.sqrt(omega.size)
    with pytest.raises(ValueError):
        sample_nu_alpha(0.5, 3, 0)


def test_nu_alpha_weight_sums_to_one_per_site():
    alpha = Fraction(3, 2)
    assert sum(nu_alpha_weight((p,), alpha) for p in range(1, 200)) == pytest.approx(1, abs=1e-30)
    assert nu_alpha_weight((0, 2), alpha) == 0


@pytest.mark.parametrize("alpha, k, cap", [(2, 2, 5), (1.5, 3, 4), (1.5, 1, 5), (2, 3, 5)])
def test_detailed_balance_exact(alpha, k, cap):
    assert detailed_balance_residual(alpha, k, cap) == 0


def test_detailed_balance_size_limit():
    with pytest.raises(ValueError):
        detailed_balance_residual(2, 9, 2)


def test_ergodic_torus_sampler_is_uniform():
    n, particles = 10, 7
    rows = all_configurations(n)
    targets = [r.tobytes() for r in rows if r.sum() == particles and two_phased_decompose(r) is ERGODIC]
    index = {t: i for i, t in enumerate(targets)}
    counts = np.zeros(len(targets))
    draws = 20_000
    for seed in range(draws):
        counts[index[sample_ergodic_torus(n, particles, seed).occupancy.tobytes()]] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_ergodic_torus_sampler_local_h_mean():
    # the canonical equilibrium should approach pi_rho locally
    eta = sample_ergodic_torus(100_000, 75_000, 3)
    assert abs(h_values(eta).mean() - 2 / 3) < 0.01
