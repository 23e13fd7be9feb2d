import numpy as np
import pytest
from numpy.testing import assert_allclose

import hbsae.predictor as predictor
from hbsae.model import (CensusFrame, SurveySample, TransformSpec, build_rho_grid,
                         validate_problem)
from hbsae.predictor import (IndicatorSpec, complete_area, fast_hb_draws, fgt_for_draw,
                             fgt_terms, hb_draws)
from hbsae.sampler import ParameterDraws, draw_parameters
from hbsae.simulation import generate_population, generate_responses, preset
from hbsae.streams import SeededStream


def fixed_draws(H, beta, u, sigma2, rho=0.5):
    beta = np.tile(np.asarray(beta, float), (H, 1))
    u = np.tile(np.asarray(u, float), (H, 1))
    return ParameterDraws(np.full(H, rho), np.full(H, sigma2), beta, u)


def sim_problem(seed=31, transform=TransformSpec("logshift", 0.0), **changes):
    cfg = preset("smoke", **changes)
    pop = generate_population(cfg, SeededStream(seed))
    y = generate_responses(pop, cfg, SeededStream(seed).child("y"))
    i = pop.sample_index
    sample = SurveySample(pop.area[i], np.exp(y[i]), pop.X[i])
    return validate_problem(sample, pop.census, transform), cfg


class TestFGT:
    def test_head_count(self):
        assert fgt_for_draw([6.0, 18.0], [], 0, 12) == 0.5

    def test_gap(self):
        assert fgt_for_draw([6.0], [18.0], 1, 12) == 0.25

    @pytest.mark.parametrize("alpha", [0, 0.5, 1, 2])
    def test_nobody_poor(self, alpha):
        assert fgt_for_draw([12.0, 30.0], [13.0], alpha, 12) == 0.0

    def test_zero_power_convention(self):
        assert_allclose(fgt_terms([0.0, 5.0, 12.0], 0, 12), [1, 1, 0])

    def test_monotone_in_alpha(self):
        e = np.random.default_rng(0).lognormal(2.5, 0.6, 500)
        vals = [fgt_for_draw(e, [], a, 12) for a in (0, 0.5, 1, 2, 3)]
        assert np.all(np.diff(vals) <= 0)

    def test_spec_guards(self):
        with pytest.raises(ValueError):
            IndicatorSpec.fgt(-1, 12)
        with pytest.raises(ValueError):
            IndicatorSpec.fgt(0, 0)
        assert IndicatorSpec.fgt(1, 12).name == "F1"


def one_area(census_rows, census_w=None, count=None, sample_y=(1.0, 2.0, 3.0)):
    y = np.asarray(sample_y, float)
    sample = SurveySample(np.ones(y.size, dtype=int), y, np.ones((y.size, 1)))
    k = census_rows
    census = CensusFrame(np.ones(k, dtype=int), np.ones((k, 1)),
                         np.asarray(count if count is not None else np.ones(k), int),
                         census_w, area_sizes=None if k else {1: y.size})
    return validate_problem(sample, census)


class TestCompleteArea:
    def test_census_fraction_one(self):
        prob = one_area(0)
        draws = fixed_draws(5, [2.0], [0.1], 0.3)
        out = complete_area(prob, draws, 0, SeededStream(1))
        assert out.shape == (5, 0)

    def test_degenerate_variance(self):
        prob = one_area(2, count=[2, 3])
        draws = fixed_draws(4, [2.0], [0.25], 1e-18)
        out = complete_area(prob, draws, 0, SeededStream(2))
        assert out.shape == (4, 5)
        assert_allclose(out, 2.25, atol=1e-8)

    def test_het_weight_scales_variance(self):
        prob = one_area(1, census_w=np.array([4.0]))
        H = 100_000
        out = complete_area(prob, fixed_draws(H, [0.0], [0.0], 2.0), 0, SeededStream(3))
        assert abs(out[:, 0].var() / 0.5 - 1) < 0.05

    def test_logshift_inverse_applied(self):
        sample = SurveySample(np.ones(3, dtype=int), np.array([1.0, 2.0, 3.0]),
                              np.ones((3, 1)))
        census = CensusFrame(np.array([1]), np.ones((1, 1)), np.array([2]))
        prob = validate_problem(sample, census, TransformSpec("logshift", 2.0))
        out = complete_area(prob, fixed_draws(2, [np.log(10.0)], [0.0], 1e-18), 0,
                            SeededStream(4))
        assert_allclose(out, 8.0, rtol=1e-8)


class TestHB:
    def test_custom_without_census_is_fixed(self):
        prob = one_area(0, sample_y=(1.0, 4.0, 7.0, 2.0))
        grid = build_rho_grid(prob, 50)
        spec = IndicatorSpec.custom(lambda e: float(np.mean(e)), "mean")
        d = hb_draws(prob, grid, [spec], 20, SeededStream(5))
        assert np.all(d.get("mean") == 3.5)

    def test_five_unit_brute_force(self):
        sample = SurveySample(np.array([1, 1, 1]), np.array([5.0, 15.0, 9.0]),
                              np.column_stack([np.ones(3), [0.0, 1.0, 2.0]]))
        census = CensusFrame(np.array([1, 1]), np.array([[1.0, 0.0], [1.0, 1.0]]),
                             np.array([3, 2]))
        prob = validate_problem(sample, census)
        draws = fixed_draws(3, [8.0, 5.0], [1.0], 0.0)   # the sigma2 -> 0 limit
        # generated: 3 units at 9, 2 units at 14; poor (z=12): 5, 9, 9, 9, 9
        grid = build_rho_grid(prob, 20)
        out = hb_draws(prob, grid, [IndicatorSpec.fgt(0, 12), IndicatorSpec.fgt(1, 12)],
                       3, SeededStream(6), draws=draws)
        assert np.all(out.get("F0") == 5 / 8)
        gaps = 7 / 12 + 4 * (3 / 12)
        assert np.all(out.get("F1") == gaps / 8)

    def test_streaming_equals_materialized(self, monkeypatch):
        prob, cfg = sim_problem()
        grid = build_rho_grid(prob, 100)
        stream = SeededStream(7)
        draws = draw_parameters(prob, grid, 1500, stream.child("theta"))
        specs = [IndicatorSpec.fgt(0, 12), IndicatorSpec.fgt(1, 12)]
        streamed = hb_draws(prob, grid, specs, 1500, stream, draws=draws)
        monkeypatch.setattr(predictor, "_CHUNK_ELEMS", 128)
        chunked = hb_draws(prob, grid, specs, 1500, stream, draws=draws)
        assert np.array_equal(streamed.values, chunked.values)
        for d in (0, 4):
            full = complete_area(prob, draws, d, stream)
            sample = prob.welfare[prob.unit_area == d]
            for k, s in enumerate(specs):
                ref = [fgt_for_draw(sample, full[h], s.alpha, s.z) for h in range(1500)]
                assert np.array_equal(streamed.values[k, d], ref)

    def test_head_count_bounds(self):
        prob, cfg = sim_problem()
        grid = build_rho_grid(prob, 100)
        d = hb_draws(prob, grid, [IndicatorSpec.fgt(0, 12)], 300, SeededStream(8))
        for j in range(prob.D):
            s = prob.welfare[prob.unit_area == j]
            poor = int(np.sum(s < 12))
            N, n = prob.N_d[j], prob.n_d[j]
            assert np.all(d.values[0, j] >= poor / N)
            assert np.all(d.values[0, j] <= (poor + N - n) / N)

    def test_alpha_monotone_per_draw(self):
        prob, cfg = sim_problem()
        grid = build_rho_grid(prob, 100)
        d = hb_draws(prob, grid, [IndicatorSpec.fgt(0, 12), IndicatorSpec.fgt(1, 12)],
                     200, SeededStream(9))
        assert np.all(d.get("F1") <= d.get("F0"))
        assert np.all((d.values >= 0) & (d.values <= 1))

    def test_nonsampled_area_wider(self):
        cfg = preset("smoke")
        pop = generate_population(cfg, SeededStream(10))
        y = generate_responses(pop, cfg, SeededStream(11))
        i = pop.sample_index
        keep = pop.area[i] != 3
        sample = SurveySample(pop.area[i][keep], np.exp(y[i][keep]), pop.X[i][keep])
        rest = np.ones(pop.area.size, dtype=bool)
        rest[i[keep]] = False
        census = CensusFrame.from_units(pop.area[rest], pop.X[rest])
        prob = validate_problem(sample, census, TransformSpec("logshift", 0.0))
        assert prob.n_d[2] == 0 and prob.N_d[2] == 60
        grid = build_rho_grid(prob, 200)
        d = hb_draws(prob, grid, [IndicatorSpec.fgt(0, 12)], 2000, SeededStream(12))
        var = d.values[0].var(axis=1)
        assert np.all(var[2] > np.delete(var, 2))


class TestFastHB:
    def _setup(self, H=500):
        prob, cfg = sim_problem(D=20, N_d=200, n_d=20)
        grid = build_rho_grid(prob, 200)
        stream = SeededStream(13)
        draws = draw_parameters(prob, grid, H, stream.child("theta"))
        return prob, grid, stream, draws

    def test_census_design_identical(self):
        prob, grid, stream, draws = self._setup()
        specs = [IndicatorSpec.fgt(0, 12), IndicatorSpec.fgt(1, 12)]
        hb = hb_draws(prob, grid, specs, 500, stream, draws=draws)
        fast = fast_hb_draws(prob, grid, specs, 500, 1.0, stream, draws=draws)
        assert np.array_equal(hb.values, fast.values)

    def test_half_census_close_to_hb(self):
        prob, grid, stream, draws = self._setup(H=1000)
        spec = [IndicatorSpec.fgt(0, 12)]
        hb = hb_draws(prob, grid, spec, 1000, stream, draws=draws).values[0]
        fast = fast_hb_draws(prob, grid, spec, 1000, 100, stream, draws=draws).values[0]
        se = np.sqrt(hb.var(1) / 1000 + fast.var(1) / 1000)
        assert np.all(np.abs(hb.mean(1) - fast.mean(1)) < 2 * se)

    def test_size_one_noisier(self):
        prob, grid, stream, draws = self._setup()
        spec = [IndicatorSpec.fgt(0, 12)]
        hb = hb_draws(prob, grid, spec, 500, stream, draws=draws).values[0]
        fast = fast_hb_draws(prob, grid, spec, 500, 1, stream, draws=draws).values[0]
        assert np.all(np.isin(fast, [0.0, 1.0]))
        assert np.all(fast.var(1) > hb.var(1))

    def test_size_above_population(self):
        prob, grid, stream, draws = self._setup(H=10)
        with pytest.raises(ValueError, match="exceeds"):
            fast_hb_draws(prob, grid, [IndicatorSpec.fgt(0, 12)], 10, 201, stream,
                          draws=draws)
