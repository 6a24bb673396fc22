import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entrylab.atmos import (
    AtmoSample,
    PSEUDO_GRID_KM,
    exp_density,
    generate_profile,
)
from entrylab.estimators import (
    ExponentialEstimator,
    FadingMemoryState,
    FilteredExponentialEstimator,
    LstmDensityEstimator,
    Measurement,
    TruthProfileEstimator,
    build_measurement,
    make_estimator,
    post_shock_stagnation_pressure,
    stagnation_pressure_feature,
)
from entrylab.fnpeg import LongitudinalState, predict_range
from entrylab.neural import init_model
from entrylab.pipeline import compute_norm_stats, TrajectorySample
from entrylab.sim import make_guidance_config


class TestExponentialEstimator:
    def test_matches_law(self, exp_model):
        est = ExponentialEstimator(exp_model)
        for h in (0.0, 10.15, 55.0, 130.0):
            assert est.density_at(h) == pytest.approx(exp_density(exp_model, h),
                                                      rel=1e-12)

    def test_surface_value(self):
        assert ExponentialEstimator().density_at(0.0) == pytest.approx(2.63e-2)

    def test_consumes_no_measurements(self):
        assert not ExponentialEstimator().uses_measurements


class TestFadingMemory:
    def test_fixed_point(self):
        state = FadingMemoryState()
        new = state.observe(1.0, 1.0, 1.0, 1.0)
        assert new.rho_lift == 1.0 and new.rho_drag == 1.0

    def test_single_update(self):
        state = FadingMemoryState()
        new = state.observe(2.0, 2.0, 1.0, 1.0)
        # 1 + (1 - 0.9) (2 - 1) = 1.1
        assert new.rho_lift == pytest.approx(1.1, rel=1e-14)
        assert new.rho_drag == pytest.approx(1.1, rel=1e-14)

    def test_geometric_convergence_to_constant_bias(self):
        # closed form: error shrinks by exactly beta per step
        k = 1.5
        state = FadingMemoryState()
        err = abs(state.rho_drag - k)
        for n in range(50):
            state = state.observe(k, k, 1.0, 1.0)
            new_err = abs(state.rho_drag - k)
            assert new_err == pytest.approx(0.9 * err, rel=1e-12)
            err = new_err
        assert err == pytest.approx(abs(1.0 - k) * 0.9**50, rel=1e-9)
        assert err < 1e-2 * abs(1.0 - k)

    @settings(max_examples=30, deadline=None)
    @given(k=st.floats(0.2, 4.0), steps=st.integers(1, 30))
    def test_per_step_contraction(self, k, steps):
        state = FadingMemoryState()
        for _ in range(steps):
            before = abs(state.rho_lift - k)
            state = state.observe(k, k, 1.0, 1.0)
            assert abs(state.rho_lift - k) == pytest.approx(0.9 * before,
                                                            rel=1e-10, abs=1e-15)

    def test_invalid_expected(self):
        with pytest.raises(ValueError):
            FadingMemoryState().observe(1.0, 1.0, 0.0, 1.0)

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            FadingMemoryState(beta=1.0)


class TestFilteredEstimator:
    def _estimator(self, planet, vehicle):
        return FilteredExponentialEstimator(
            vehicle_lift_to_drag=vehicle.lift_to_drag,
            ballistic_coefficient=vehicle.ballistic_coefficient,
            planet_radius=planet.radius)

    def test_density_view_stays_exponential(self, planet, vehicle, exp_model):
        est = self._estimator(planet, vehicle)
        assert est.density_at(33.0) == pytest.approx(
            exp_density(exp_model, 33.0), rel=1e-12)

    def test_unit_ratios_match_pure_exponential_bitwise(self, planet, vehicle,
                                                        mission):
        gcfg = make_guidance_config(mission, planet)
        lon = LongitudinalState(1.018, 1.1, -0.2, 0.07)
        z_filter = predict_range(lon, 0.8, self._estimator(planet, vehicle),
                                 gcfg, vehicle, planet)
        z_exp = predict_range(lon, 0.8, ExponentialEstimator(), gcfg, vehicle,
                              planet)
        assert z_filter == z_exp  # bit-for-bit

    def test_observe_updates_scales(self, planet, vehicle):
        est = self._estimator(planet, vehicle)
        # sensed acceleration consistent with 1.3x denser air than expected
        from entrylab.dynamics import SphericalState, spherical_to_cart, aero_accels

        h = 40e3
        state = SphericalState(planet.radius + h, 0.3, 0.4, 3200.0, -0.1, 1.0)
        rho_true = 1.3 * est.density_at(h / 1000.0)
        cart = spherical_to_cart(state)
        aero = aero_accels(cart, 0.4, rho_true, vehicle)
        meas = build_measurement(0.0, state, aero.vector, 2.0)
        est.observe(meas)
        sl, sd = est.lift_drag_scale()
        assert sd == pytest.approx(1.0 + 0.1 * (1.3 - 1.0), rel=1e-6)
        assert sl == pytest.approx(sd, rel=1e-6)

    def test_pre_activation_skipped(self, planet, vehicle):
        est = self._estimator(planet, vehicle)
        from entrylab.dynamics import SphericalState

        state = SphericalState(planet.radius + 120e3, 0.3, 0.4, 4000.0, -0.2, 1.0)
        meas = build_measurement(0.0, state, np.array([0.0, 0.0, 0.0]), 1.0)
        est.observe(meas)  # drag_sensed = 0 -> no update
        assert est.lift_drag_scale() == (1.0, 1.0)


def _tiny_lstm_model():
    samples = []
    rng = np.random.default_rng(3)
    for i in range(4):
        n = 6 + i
        feats = rng.standard_normal((n, 10)) * [1e4, 0.01, 0.01, 100.0, 0.01,
                                                0.01, 1.0, 1.0, 1.0, 0.1]
        feats[:, 0] += 3.43e6
        feats[:, 3] += 3000.0
        eta = np.sqrt(-np.log10(2.63e-2 * np.exp(-PSEUDO_GRID_KM / 10.15)))
        samples.append(TrajectorySample(feats, np.arange(n, dtype=float),
                                        eta + 0.01 * rng.standard_normal(39),
                                        AtmoSample(1.0, 2.0, 1 + i), 0.0, 11.0))
    stats = compute_norm_stats(samples)
    model = init_model(10, 8, 39, seed=1)
    model.stats = stats
    return model, samples


class TestLstmEstimator:
    def test_prior_matches_exponential(self, exp_model):
        model, _ = _tiny_lstm_model()
        est = LstmDensityEstimator(model)
        # before any observation the prior is the nominal law (grid-sampled,
        # log-linear interpolation is exact for an exponential law)
        for h in (10.0, 37.0, 62.0):
            assert est.density_at(h) == pytest.approx(
                exp_density(exp_model, h), rel=1e-9)

    def test_observe_produces_finite_positive_profile(self):
        model, samples = _tiny_lstm_model()
        est = LstmDensityEstimator(model)
        est.observe(Measurement(0.0, samples[0].features[0]))
        dens = [est.density_at(h) for h in (0.0, 40.0, 80.0, 130.0)]
        assert all(np.isfinite(d) and d > 0.0 for d in dens)
        assert np.all(est.predicted_profile.eta >= 0.0)

    def test_streaming_matches_batch_inference(self):
        from entrylab.neural.lstm import forward_batch
        from entrylab.pipeline import normalize_features

        model, samples = _tiny_lstm_model()
        est = LstmDensityEstimator(model)
        feats = samples[1].features
        for i in range(feats.shape[0]):
            est.observe(Measurement(float(i), feats[i]))
        x = normalize_features(model.stats, feats)[None]
        preds, _ = forward_batch(model, x, np.array([feats.shape[0]]))
        eta_batch = preds[0, -1] * model.stats.target_std + model.stats.target_mean
        np.testing.assert_allclose(est.predicted_profile.eta,
                                   np.maximum(eta_batch, 0.0), rtol=1e-12)

    def test_deterministic(self):
        model, samples = _tiny_lstm_model()
        out = []
        for _ in range(2):
            est = LstmDensityEstimator(model)
            for i in range(5):
                est.observe(Measurement(float(i), samples[0].features[i]))
            out.append(est.predicted_profile.eta.copy())
        np.testing.assert_array_equal(out[0], out[1])

    def test_requires_stats(self):
        model = init_model(10, 8, 39, seed=1)
        with pytest.raises(ValueError):
            LstmDensityEstimator(model)


class TestTruthEstimator:
    def test_exact_on_grid(self, gas):
        profile = generate_profile(AtmoSample(1.7, 2.1, 99), gas)
        est = TruthProfileEstimator(profile)
        i = 100
        assert est.density_at(profile.altitude_km[i]) == pytest.approx(
            profile.density[i], rel=1e-12)


class TestMeasurement:
    def test_feature_vector_order(self):
        from entrylab.dynamics import SphericalState

        state = SphericalState(3.4e6, 0.1, 0.2, 3000.0, -0.1, 1.2)
        meas = build_measurement(5.0, state, np.array([1.0, 2.0, 3.0]), 2.5)
        np.testing.assert_allclose(
            meas.vector,
            [3.4e6, 0.1, 0.2, 3000.0, -0.1, 1.2, 1.0, 2.0, 3.0, 2.5])
        assert meas.load == pytest.approx(math.sqrt(14.0))
        assert meas.state.psi == 1.2


class TestStagnationPressure:
    def test_shock_factor_tends_to_one(self):
        p01 = 137.0
        assert post_shock_stagnation_pressure(p01, 1.0 + 1e-9, 1.28) == \
            pytest.approx(p01, rel=1e-6)

    def test_subsonic_rejected(self):
        with pytest.raises(ValueError):
            post_shock_stagnation_pressure(100.0, 0.9, 1.28)

    def test_mach_10_against_independent_evaluation(self):
        # standalone normal-shock calculator: both brackets evaluated apart
        g, m2 = 1.28, 100.0
        b1 = ((g + 1) * m2 / ((g - 1) * m2 + 2)) ** (g / (g - 1))
        b2 = ((g + 1) / (2 * g * m2 - (g - 1))) ** (1 / (g - 1))
        assert post_shock_stagnation_pressure(100.0, 10.0, g) == \
            pytest.approx(100.0 * b1 * b2, rel=1e-12)

    def test_log_linearity_in_static_pressure(self, gas):
        f1 = stagnation_pressure_feature(3000.0, 50.0, gas)
        f2 = stagnation_pressure_feature(3000.0, 100.0, gas)
        assert f2 - f1 == pytest.approx(math.log10(2.0), rel=1e-9)

    def test_subsonic_fallback_is_isentropic(self, gas):
        from entrylab.atmos import speed_of_sound

        a = speed_of_sound(gas)
        v = 1.05 * a  # below the supersonic cutoff
        g = gas.ratio_of_specific_heats
        p01 = 100.0 * (1 + 0.5 * (g - 1) * 1.05**2) ** (g / (g - 1))
        assert stagnation_pressure_feature(v, 100.0, gas) == pytest.approx(
            math.log10(p01), rel=1e-12)


class TestFactory:
    def test_kinds(self, planet, vehicle):
        assert isinstance(make_estimator("exponential"), ExponentialEstimator)
        assert isinstance(make_estimator("filter", vehicle=vehicle, planet=planet),
                          FilteredExponentialEstimator)
        with pytest.raises(ValueError):
            make_estimator("lstm")
        with pytest.raises(ValueError):
            make_estimator("nope")
