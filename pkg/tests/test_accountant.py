"""
Tests for the Renyi privacy accountant
"""

import json
import math

import numpy as np
import pytest
from autodp import rdp_bank

from hadiff import (
    GaussianMechanism,
    NoiseConvention,
    PrivacyLedger,
    compose,
    per_step_sensitivity_noise,
    rdp_epsilon,
    required_noise_std,
    to_eps_delta,
)
from hadiff.accountant import DEFAULT_ORDERS, clip_factors, noise_std


class TestMechanism:

    def test_noise_conventions(self):
        """Test the standard deviation under each convention"""
        assert GaussianMechanism(4.0, 2.0).std == 8.0
        assert GaussianMechanism(4.0, 2.0, convention="variance").std == 4.0
        assert GaussianMechanism.absolute(4.0, 3.0).std == 3.0
        assert noise_std(9.0, 1.5, NoiseConvention.VARIANCE) == 4.5

    def test_rdp_cost(self):
        """Test the cost of one step at a few orders"""
        assert rdp_epsilon(GaussianMechanism(3.0, 2.0), 8.0) == 1.0
        # noise std equal to the sensitivity costs alpha / 2
        for alpha in (1.5, 2.0, 32.0):
            assert rdp_epsilon(GaussianMechanism.absolute(0.7, 0.7), alpha) == alpha / 2

    @pytest.mark.parametrize(
        "mech",
        [
            GaussianMechanism(1.0, 3.0),
            GaussianMechanism(4.0, 0.5, convention="variance"),
            GaussianMechanism.absolute(2.5, 7.0),
        ],
    )
    def test_rdp_cost_matches_autodp(self, mech):
        """Test the per-order cost against autodp's Gaussian mechanism with sigma = std / K"""
        for alpha in DEFAULT_ORDERS[1:]:
            expected = rdp_bank.RDP_gaussian({"sigma": mech.std / mech.sensitivity}, alpha)
            assert rdp_epsilon(mech, alpha) == pytest.approx(expected, rel=1e-12)

    def test_invalid_parameters(self):
        """Test that sensitivity, noise and order are validated"""
        with pytest.raises(ValueError, match="sensitivity must be positive"):
            GaussianMechanism(0.0, 1.0)
        with pytest.raises(ValueError, match="noise_multiplier must be positive"):
            GaussianMechanism(1.0)
        with pytest.raises(ValueError, match="noise_std must be positive"):
            GaussianMechanism.absolute(1.0, -1.0)
        with pytest.raises(ValueError, match="RDP order must be a finite number > 1"):
            rdp_epsilon(GaussianMechanism(1.0, 1.0), 1.0)

    def test_required_noise(self):
        """Test that the required noise meets the target exactly"""
        std = required_noise_std(2.0, 8.0, 0.5)
        assert std == pytest.approx(2.0 * math.sqrt(8.0))
        cost = rdp_epsilon(GaussianMechanism.absolute(2.0, std), 8.0)
        assert cost == pytest.approx(0.5)


class TestLedger:

    def test_hundred_steps(self):
        """Test that 100 steps with multiplier 2 cost exactly 100 at order 8"""
        ledger = PrivacyLedger()
        mech = GaussianMechanism(1.3, 2.0)
        for _ in range(100):
            compose(ledger, mech)
        assert ledger.epsilon(8.0) == 100.0
        assert len(ledger) == 100
        assert ledger.events[-1].step == 99

    def test_composition_is_additive(self):
        """Test that two identical mechanisms cost twice one"""
        mech = GaussianMechanism(1.0, 1.7)
        once = PrivacyLedger().compose(mech)
        twice = PrivacyLedger().compose(mech).compose(mech)
        np.testing.assert_array_equal(twice.totals, 2 * once.totals)

    def test_empty_ledger_conversion(self):
        """Test that an empty ledger converts at the largest order"""
        ledger = PrivacyLedger()
        epsilon, order = to_eps_delta(ledger, 1e-5)
        assert order == 64.0
        assert epsilon == pytest.approx(math.log(1e5) / 63)

    def test_conversion_picks_best_order(self):
        """Test that the conversion is the minimum over the order grid"""
        ledger = PrivacyLedger()
        for _ in range(10):
            ledger.compose(GaussianMechanism(1.0, 1.0))
        epsilon, order = ledger.to_eps_delta(1e-5)
        candidates = [
            10 * alpha / 2 + math.log(1e5) / (alpha - 1) for alpha in DEFAULT_ORDERS
        ]
        assert epsilon == pytest.approx(min(candidates))
        assert order == DEFAULT_ORDERS[int(np.argmin(candidates))]

    def test_extra_orders(self):
        """Test adding orders to the default grid"""
        ledger = PrivacyLedger(extra_orders=[10.0])
        assert 10.0 in ledger.orders
        assert list(ledger.orders) == sorted(ledger.orders)

    def test_invalid_orders_and_delta(self):
        """Test that orders must exceed 1 and delta must lie in (0, 1)"""
        with pytest.raises(ValueError, match="RDP orders must be finite numbers > 1"):
            PrivacyLedger([0.5, 2.0])
        with pytest.raises(ValueError, match=r"delta must lie in \(0, 1\)"):
            PrivacyLedger().to_eps_delta(1.0)
        with pytest.raises(ValueError, match="Order 7.0 not tracked. Available orders"):
            PrivacyLedger().epsilon(7.0)

    def test_snapshot_is_independent(self):
        """Test that composing after a snapshot leaves the snapshot alone"""
        ledger = PrivacyLedger().compose(GaussianMechanism(1.0, 2.0))
        snap = ledger.snapshot()
        ledger.compose(GaussianMechanism(1.0, 2.0))
        assert len(snap) == 1
        assert snap.epsilon(2.0) == 0.25

    def test_export_and_rebuild(self):
        """Test that a JSON export rebuilds the same totals"""
        ledger = PrivacyLedger()
        ledger.compose(GaussianMechanism(2.0, 1.1))
        ledger.compose(GaussianMechanism.absolute(0.5, 0.9))
        ledger.compose(GaussianMechanism(4.0, 0.8, convention="variance"))
        data = json.loads(ledger.to_json(deltas=[1e-5]))
        assert data["conversions"][0]["delta"] == 1e-5
        rebuilt = PrivacyLedger.from_dict(data)
        np.testing.assert_allclose(rebuilt.totals, ledger.totals, rtol=1e-15)
        assert [e.convention for e in rebuilt.events] == ["multiplier", "absolute", "variance"]

    def test_rebuild_requires_events(self):
        """Test that an export without events is rejected"""
        with pytest.raises(ValueError, match="Ledger export has no 'events'"):
            PrivacyLedger.from_dict({"orders": [2.0]})


class TestStepSensitivity:

    def test_clip_factors(self):
        """Test scale factors below, at and above the bound"""
        no_clip, factors = clip_factors([0.5, 1.0, 4.0, float("nan")], 1.0)
        assert no_clip.tolist() == [True, True, False, False]
        assert factors.tolist() == [1.0, 1.0, 0.25, 0.0]

    def test_norms_within_bound(self):
        """Test that samples inside the bound are untouched"""
        step = per_step_sensitivity_noise([0.1, 0.9, 1.0], 1.0, noise_multiplier=2.0)
        assert step.noise_std == 2.0
        assert step.clipped == 0
        assert step.clip_factors.tolist() == [1.0, 1.0, 1.0]

    def test_violations_are_reported(self, caplog):
        """Test that norms above the bound are scaled and logged"""
        step = per_step_sensitivity_noise([0.5, 3.0, 2.0], 1.0)
        assert step.violations.tolist() == [1, 2]
        assert step.clip_factors[1] == pytest.approx(1 / 3)
        assert "2 sample(s) exceed the sensitivity bound" in caplog.text
