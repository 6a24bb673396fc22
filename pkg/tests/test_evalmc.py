import math

import numpy as np
import pytest

from entrylab.estimators import NoiseSpec
from entrylab.evalmc import (
    CampaignResult,
    CaseResult,
    compare,
    density_error_map,
    inject_noise,
    load_campaign_results,
    run_campaign,
    save_campaign,
    save_error_map,
    summarize,
)
from entrylab.neural import init_model
from entrylab.pipeline import Dataset, generate_dataset


class TestInjectNoise:
    def test_zero_spec_identity(self, planet, rng):
        spec = NoiseSpec(r_m=0, angle_deg=0, v_mps=0, fpa_deg=0, heading_deg=0,
                         accel_g=0, pressure_frac=0)
        vec = rng.standard_normal(10)
        out = inject_noise(vec, spec, rng, planet.g0)
        np.testing.assert_array_equal(out, vec)

    def test_radius_noise_std(self, planet):
        rng = np.random.default_rng(0)
        base = np.zeros(10)
        draws = inject_noise(np.tile(base, (100_000, 1)), NoiseSpec(), rng,
                             planet.g0)
        assert draws[:, 0].std() == pytest.approx(5.0 / 3.0, rel=0.03)

    def test_acceleration_sigma_conversion(self, planet):
        # 3-sigma of 1e-7 g converts through the planet's surface gravity
        spec = NoiseSpec()
        sig = spec.sigmas(planet.g0)
        assert sig[6] == pytest.approx(1e-7 * planet.g0 / 3.0, rel=1e-12)

    def test_pressure_noise_multiplicative_before_log(self, planet):
        rng = np.random.default_rng(1)
        vec = np.zeros(10)
        vec[9] = 2.0  # log10 of 100 Pa
        draws = inject_noise(np.tile(vec, (50_000, 1)), NoiseSpec(), rng,
                             planet.g0)
        ratio = 10.0 ** (draws[:, 9] - 2.0)
        assert ratio.mean() == pytest.approx(1.0, abs=3e-4)
        assert ratio.std() == pytest.approx(0.01 / 3.0, rel=0.05)

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(r_m=-1.0)


class TestSummarize:
    def _campaign(self, values_km):
        camp = CampaignResult(method="test")
        for i, v in enumerate(values_km):
            camp.results.append(CaseResult(i, i, v / 3396.2, v))
        return camp

    def test_single_case(self):
        s = summarize(self._campaign([1.0]))
        assert s.mean_km == s.p1_km == s.p99_km == 1.0
        assert s.sigma_km == 0.0

    def test_known_five_values(self):
        # hand-computed linear-interpolation order statistics
        vals = [1.0, 2.0, 3.0, 4.0, 5.0]
        s = summarize(self._campaign(vals))
        assert s.mean_km == pytest.approx(3.0)
        assert s.sigma_km == pytest.approx(math.sqrt(2.0))
        assert s.p1_km == pytest.approx(1.0 + 0.04 * 1.0)  # 1 + (0.01*4 - 0)*1
        assert s.p99_km == pytest.approx(4.0 + 0.96 * 1.0)

    def test_symmetric_signed_distribution(self):
        camp = self._campaign([-2.0, -1.0, 1.0, 2.0])
        signed = camp.signed_s_f_km()
        assert signed.mean() == pytest.approx(0.0, abs=1e-12)
        assert summarize(camp).mean_km == pytest.approx(1.5)

    def test_km_deg_consistency(self, planet):
        camp = self._campaign([1.0, 2.0])
        for r in camp.results:
            assert r.s_f_km == pytest.approx(
                math.degrees(r.s_f_rad) * math.pi / 180.0 * 3396.2, rel=1e-12)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            summarize(CampaignResult(method="x"))

    def test_compare(self):
        a = self._campaign([1.0])
        b = self._campaign([2.0])
        rows = compare([a, b])
        assert [r.mean_km for r in rows] == [1.0, 2.0]


class TestRunCampaign:
    def test_single_case_deterministic(self):
        a = run_campaign("exponential", 1, master_seed=11)
        b = run_campaign("exponential", 1, master_seed=11)
        assert a.results[0].s_f_km == b.results[0].s_f_km

    def test_jobs_parity(self):
        a = run_campaign("exponential", 4, master_seed=12, jobs=1)
        b = run_campaign("exponential", 4, master_seed=12, jobs=2)
        assert [r.s_f_km for r in a.results] == [r.s_f_km for r in b.results]

    def test_lstm_requires_model(self):
        with pytest.raises(ValueError):
            run_campaign("lstm", 1, master_seed=1)

    def test_exponential_noise_invariance(self):
        a = run_campaign("exponential", 3, master_seed=13)
        b = run_campaign("exponential", 3, master_seed=13, noise=NoiseSpec())
        assert [r.s_f_km for r in a.results] == [r.s_f_km for r in b.results]


class TestCampaignIO:
    def test_round_trip(self, tmp_path):
        camp = run_campaign("exponential", 3, master_seed=21)
        save_campaign(tmp_path / "camp", camp)
        loaded = load_campaign_results(tmp_path / "camp")
        for a, b in zip(camp.results, loaded):
            assert a.case_id == b.case_id
            assert a.s_f_km == b.s_f_km  # repr round-trip is exact
        summary = summarize(camp)
        import json

        stored = json.loads((tmp_path / "camp" / "summary.json").read_text())
        assert stored["mean_km"] == summary.mean_km

    def test_rerun_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            save_campaign(tmp_path / name,
                          run_campaign("exponential", 3, master_seed=22))
        assert (tmp_path / "a" / "results.csv").read_bytes() == \
            (tmp_path / "b" / "results.csv").read_bytes()


class TestDensityErrorMap:
    def _dataset_and_model(self):
        ds = generate_dataset(3, "exponential", master_seed=99)
        stats = ds.ensure_stats()
        model = init_model(10, 8, 39, seed=2)
        model.stats = stats
        return ds, model

    def test_shapes_and_finiteness(self):
        ds, model = self._dataset_and_model()
        emap = density_error_map(model, ds)
        assert emap.mean_pct.shape[1] == 39
        assert emap.mean_pct.shape[0] == max(s.features.shape[0] for s in ds.samples)
        assert np.isfinite(emap.full_length_mean())
        assert emap.quartile_means().shape == (4,)

    def test_perfect_predictor_zero_error(self):
        # a model whose output is forced to the exact normalized target
        ds, model = self._dataset_and_model()
        stats = ds.stats

        class Oracle:
            def __init__(self, target_eta):
                self.stats = stats
                self._eta = target_eta

        import entrylab.evalmc as ev

        # bypass the network: patch forward_batch to emit exact targets
        orig = ev.forward_batch
        try:
            def fake_forward(model_, x, lengths, training=False):
                from entrylab.pipeline import normalize_targets

                n = int(lengths[0])
                eta_n = normalize_targets(stats, fake_forward.target)
                return np.tile(eta_n, (1, n, 1)), None

            ev.forward_batch = fake_forward
            total = 0.0
            for s in ds.samples:
                fake_forward.target = s.target_eta
                one = Dataset([s], 0, "exponential")
                emap = ev.density_error_map(model, one, stats)
                total += emap.full_length_mean()
            assert total == pytest.approx(0.0, abs=1e-9)
        finally:
            ev.forward_batch = orig

    def test_delta_rho_formula(self):
        # rho_hat = 1.01 rho -> exactly 1.0 percent
        rho = 3.3e-4
        assert 100.0 * abs((1.01 * rho - rho) / rho) == pytest.approx(1.0)

    def test_error_map_csv(self, tmp_path):
        ds, model = self._dataset_and_model()
        emap = density_error_map(model, ds)
        save_error_map(tmp_path / "emap.csv", emap)
        lines = (tmp_path / "emap.csv").read_text().splitlines()
        assert lines[0].startswith("sequence_length,h_4km,")
        assert len(lines) == emap.mean_pct.shape[0] + 1

    def test_empty_dataset_rejected(self):
        _, model = self._dataset_and_model()
        with pytest.raises(ValueError):
            density_error_map(model, Dataset([], 0, "exponential"))
