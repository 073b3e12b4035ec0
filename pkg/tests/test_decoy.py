"""
Tests for decoy-state bounds, the LP oracle and the key-rate formula
"""
import math

import numpy as np
import pytest

from mdiqkd.config import Basis, BoundMode, FluctuationConfig, Y11Formula
from mdiqkd.exceptions import (
    BoundValidityError, DecoyBoundError, DomainError, TallyStructureError,
)
from mdiqkd.models import BoundedRates, LPOracleResult, TALLY_SHAPE
from mdiqkd.decoy import (
    binary_entropy, check_bound_validity, decoy_bounds, e11_upper_finite, e11_upper_infinite,
    forward_gains, key_length, key_rate, p11, y11_denominator, y11_lower_finite, y11_lower_infinite,
    y11_oracle_lp,
)
from mdiqkd.tally import fluct_bounds, from_tables

MEANS = (0.3, 0.1, 0.01)
PUBLISHED_KEY_PARAMS = dict(
    q=0.011, p11=0.0494, y11_z_lower=4.1e-4, e11_x_upper=0.151,
    gain_signal=4.66e-5, qber_signal=0.0178, f=1.16, total_pulses=1.69e11,
)


def synthetic_yields(rng: np.random.Generator, cutoff: int = 10):
    """Yields growing with photon number, and error yields below them"""
    i, j = np.meshgrid(np.arange(cutoff + 1), np.arange(cutoff + 1), indexing="ij")
    t_a, t_b = rng.uniform(1e-3, 0.1, size=2)
    dark = rng.uniform(0.0, 1e-3)
    yields = 1.0 - (1.0 - dark) * (1.0 - t_a) ** i * (1.0 - t_b) ** j
    yields *= rng.uniform(0.5, 1.0, size=yields.shape)
    error_yields = yields * rng.uniform(0.0, 0.5, size=yields.shape)
    return yields, error_yields


def bounded_pair(gains, error_gains, pulses: float, n_alpha: float):
    """Z/X envelopes built from one 3x3 table copied into both bases"""
    q = np.stack([gains, gains])
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(q > 0, np.stack([error_gains, error_gains]) / np.where(q > 0, q, 1.0), 0.0)
    t = from_tables(q, e, np.full(TALLY_SHAPE, pulses))
    return fluct_bounds(t, t.sent, FluctuationConfig(n_alpha=n_alpha))


class TestBinaryEntropy:
    @pytest.mark.parametrize("x,expected", [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0), (0.151, 0.6124)])
    def test_values(self, x, expected):
        assert binary_entropy(x) == pytest.approx(expected, abs=1e-4)

    def test_symmetry(self):
        for x in (0.01, 0.1, 0.3):
            assert binary_entropy(x) == pytest.approx(binary_entropy(1 - x))

    def test_domain(self):
        with pytest.raises(DomainError):
            binary_entropy(1.5)


class TestP11:
    def test_values(self):
        assert p11(0.3) == pytest.approx(0.049393, abs=1e-6)
        assert p11(1.0) == pytest.approx(math.exp(-2.0))
        assert p11(0.0) == 0.0

    def test_negative_mean(self):
        with pytest.raises(DomainError):
            p11(-0.1)


class TestY11Bounds:
    def test_published_z_data(self, published_tables):
        gains, _ = published_tables
        assert y11_lower_infinite(gains[0], MEANS) == pytest.approx(4.49e-4, rel=0.01)

    def test_zero_gains(self):
        assert y11_lower_infinite(np.zeros((3, 3)), MEANS) == 0.0

    def test_result_is_a_probability(self):
        assert 0.0 <= y11_lower_infinite(np.full((3, 3), 0.9), MEANS) <= 1.0

    def test_intensity_ordering(self, published_tables):
        gains, _ = published_tables
        with pytest.raises(DomainError):
            y11_lower_infinite(gains[0], (0.1, 0.3, 0.01))

    def test_incomplete_table(self):
        with pytest.raises(TallyStructureError):
            y11_lower_infinite(np.zeros((2, 3)), MEANS)

    def test_denominator_variants(self):
        mu, nu, omega = MEANS
        assert y11_denominator(mu, nu, omega, Y11Formula.DERIVED) == pytest.approx(0.29 ** 2 * 0.09 ** 2 * 0.2)
        assert y11_denominator(mu, nu, omega, Y11Formula.AS_PRINTED) == pytest.approx(0.2 ** 2 * 0.09 ** 2 * 0.2)

    def test_finite_equals_infinite_without_fluctuations(self, published_tables):
        gains, qbers = published_tables
        t = from_tables(gains, qbers, np.full(TALLY_SHAPE, 1e10))
        bounded = fluct_bounds(t, t.sent, FluctuationConfig(n_alpha=0.0))
        assert y11_lower_finite(bounded.for_basis(Basis.Z), MEANS) == pytest.approx(
            y11_lower_infinite(gains[0], MEANS), rel=1e-12)

    def test_finite_bound_weakens_with_sigma(self, published_tables):
        gains, qbers = published_tables
        t = from_tables(gains, qbers, np.full(TALLY_SHAPE, 5e9))
        values = [
            y11_lower_finite(fluct_bounds(t, t.sent, FluctuationConfig(n_alpha=n)).for_basis(Basis.Z), MEANS)
            for n in (0.0, 1.0, 2.0, 3.0)
        ]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestE11Bounds:
    def test_zero_yield_is_an_error(self, published_tables):
        gains, qbers = published_tables
        with pytest.raises(DecoyBoundError):
            e11_upper_infinite(gains[1], qbers[1], 0.0, MEANS)

    def test_published_x_data(self, published_tables):
        gains, qbers = published_tables
        y11_x = y11_lower_infinite(gains[1], MEANS)
        e11 = e11_upper_infinite(gains[1], qbers[1], y11_x, MEANS)
        assert 0.05 < e11 < 0.15

    def test_finite_bound_is_looser(self, published_tables):
        gains, qbers = published_tables
        t = from_tables(gains, qbers, np.full(TALLY_SHAPE, 5e9))
        bounded = fluct_bounds(t, t.sent, FluctuationConfig(n_alpha=3.0))
        x = bounded.for_basis(Basis.X)
        finite = e11_upper_finite(x, y11_lower_finite(x, MEANS), MEANS)
        y11_x = y11_lower_infinite(gains[1], MEANS)
        assert finite > e11_upper_infinite(gains[1], qbers[1], y11_x, MEANS)

    def test_decoy_bounds_bundle(self, published_tables):
        gains, qbers = published_tables
        t = from_tables(gains, qbers, np.full(TALLY_SHAPE, 5e9))
        bounds = decoy_bounds(fluct_bounds(t, t.sent, FluctuationConfig()), MEANS, BoundMode.FINITE_N_ALPHA)
        assert bounds.mode is BoundMode.FINITE_N_ALPHA
        assert 0 < bounds.y11_z_lower < 1
        assert 0 < bounds.e11_x_upper < 0.5


class TestLinearProgramOracle:
    def test_zero_data(self):
        zeros = np.zeros((3, 3))
        result = y11_oracle_lp(BoundedRates.exact(zeros, zeros), MEANS, cutoff=8)
        assert result.y11_min == pytest.approx(0.0, abs=1e-12)

    def test_cutoff_minimum(self):
        zeros = np.zeros((3, 3))
        with pytest.raises(DomainError):
            y11_oracle_lp(BoundedRates.exact(zeros, zeros), MEANS, cutoff=4)

    def test_recovers_true_yield_range(self, rng):
        yields, error_yields = synthetic_yields(rng)
        bounded = BoundedRates.exact(forward_gains(yields, MEANS), forward_gains(error_yields, MEANS))
        result = y11_oracle_lp(bounded, MEANS, cutoff=10)
        assert result.y11_min - 1e-9 <= yields[1, 1] <= result.y11_max + 1e-9

    def test_published_z_data_infinite_key(self, published_tables):
        gains, qbers = published_tables
        z_gains = gains[0]
        exact = BoundedRates.exact(z_gains, z_gains * np.nan_to_num(qbers[0]))
        for cutoff in (10, 20):
            result = y11_oracle_lp(exact, MEANS, cutoff=cutoff)
            assert result.y11_min >= y11_lower_infinite(z_gains, MEANS) - 1e-9
            assert result.y11_min <= result.y11_max

    def test_published_z_data_finite_envelopes(self, published_tables):
        gains, qbers = published_tables
        t = from_tables(gains, qbers, np.full(TALLY_SHAPE, 5e9))
        bounded = fluct_bounds(t, t.sent, FluctuationConfig()).for_basis(Basis.Z)
        result = y11_oracle_lp(bounded, MEANS)
        assert result.y11_min >= y11_lower_finite(bounded, MEANS) - 1e-9

    def test_inconsistent_error_envelopes_skip_e11_only(self):
        yields = np.zeros((11, 11))
        yields[1, 1] = 0.05
        gains = forward_gains(yields, MEANS)
        # error gains above the gains admit no eY <= Y
        result = y11_oracle_lp(BoundedRates.exact(gains, 2.0 * gains), MEANS, cutoff=10)
        assert result.e11_max is None
        assert result.y11_min <= 0.05 + 1e-9
        check_bound_validity(y11_lower=y11_lower_infinite(gains, MEANS), e11_upper=0.0, oracle=result)

    def test_printed_denominator_fails_against_the_oracle(self):
        yields = np.zeros((11, 11))
        yields[1, 1] = 0.05
        gains = forward_gains(yields, MEANS)
        oracle = y11_oracle_lp(BoundedRates.exact(gains, 0.1 * gains), MEANS, cutoff=10)
        derived = y11_lower_infinite(gains, MEANS)
        printed = y11_lower_infinite(gains, MEANS, Y11Formula.AS_PRINTED)
        assert derived == pytest.approx(0.05, rel=1e-9)
        assert printed == pytest.approx(0.05 * (0.29 / 0.2) ** 2, rel=1e-9)
        check_bound_validity(y11_lower=derived, oracle=oracle)
        with pytest.raises(BoundValidityError):
            check_bound_validity(y11_lower=printed, oracle=oracle)

    @pytest.mark.parametrize("seed", range(100))
    def test_analytic_bounds_never_beat_the_oracle(self, seed):
        rng = np.random.default_rng(seed)
        yields, error_yields = synthetic_yields(rng)
        gains = forward_gains(yields, MEANS)
        error_gains = forward_gains(error_yields, MEANS)

        exact = BoundedRates.exact(gains, error_gains)
        y11_inf = y11_lower_infinite(gains, MEANS)
        oracle = y11_oracle_lp(exact, MEANS, cutoff=10)
        assert y11_inf <= oracle.y11_min + 1e-9 + 1e-7 * oracle.y11_min
        assert oracle.y11_min <= yields[1, 1] + 1e-9

        bounded = bounded_pair(gains, error_gains, pulses=1e10, n_alpha=3.0)
        y11_fin = y11_lower_finite(bounded.for_basis(Basis.Z), MEANS)
        assert y11_fin <= y11_inf + 1e-15

        if y11_inf > 0:
            qbers = np.where(gains > 0, error_gains / gains, 0.0)
            e11_inf = e11_upper_infinite(gains, qbers, y11_inf, MEANS)
            check_bound_validity(y11_lower=y11_inf, e11_upper=e11_inf, oracle=oracle)
            assert e11_inf >= error_yields[1, 1] / yields[1, 1] - 1e-9
            if y11_fin > 0:
                e11_fin = e11_upper_finite(bounded.for_basis(Basis.X), y11_fin, MEANS)
                assert e11_fin >= e11_inf - 1e-12


class TestBoundValidity:
    def oracle(self, y11_min=1e-4, e11_max=0.1) -> LPOracleResult:
        return LPOracleResult(basis=Basis.Z, y11_min=y11_min, y11_max=1e-3, e11_max=e11_max, cutoff=10)

    def test_passes_when_looser(self):
        check_bound_validity(y11_lower=0.9e-4, e11_upper=0.2, oracle=self.oracle())

    def test_y11_above_lp_minimum(self):
        with pytest.raises(BoundValidityError):
            check_bound_validity(y11_lower=2e-4, oracle=self.oracle())

    def test_e11_below_lp_maximum(self):
        with pytest.raises(BoundValidityError):
            check_bound_validity(e11_upper=0.05, oracle=self.oracle())

    def test_no_oracle_is_a_no_op(self):
        check_bound_validity(y11_lower=1.0, e11_upper=0.0, oracle=None)


class TestKeyRate:
    def test_published_parameters(self):
        rate, length = key_rate(**PUBLISHED_KEY_PARAMS)
        assert 9.3e-9 <= rate <= 10.3e-9
        assert 1570 <= length <= 1740
        assert length == math.floor(rate * 1.69e11)

    def test_reference_value(self):
        report = key_rate(**PUBLISHED_KEY_PARAMS)
        assert report.rate == pytest.approx(9.721e-9, rel=1e-3)
        assert 1640 <= report.key_length <= 1645

    def test_zero_yield_gives_no_key(self):
        params = dict(PUBLISHED_KEY_PARAMS, y11_z_lower=0.0)
        assert tuple(key_rate(**params)) == (0.0, 0)

    def test_rate_grows_with_yield(self):
        rates = [key_rate(**dict(PUBLISHED_KEY_PARAMS, y11_z_lower=y)).rate for y in (3e-4, 4e-4, 5e-4)]
        assert rates[0] < rates[1] < rates[2]

    def test_rate_falls_with_phase_error(self):
        rates = [key_rate(**dict(PUBLISHED_KEY_PARAMS, e11_x_upper=e)).rate for e in (0.1, 0.15, 0.2)]
        assert rates[0] > rates[1] > rates[2]

    def test_error_correction_inefficiency(self):
        with pytest.raises(DomainError):
            key_rate(**dict(PUBLISHED_KEY_PARAMS, f=0.9))

    def test_probability_inputs(self):
        with pytest.raises(DomainError):
            key_rate(**dict(PUBLISHED_KEY_PARAMS, qber_signal=1.5))

    def test_key_length(self):
        assert key_length(1e-8, 1.69e11) == 1690
        with pytest.raises(DomainError):
            key_length(1e-8, -1.0)
