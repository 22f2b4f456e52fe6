import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats
from scipy.special import expit

from peerfx import streams
from peerfx.dgp import (
    DgpConfig,
    Sample,
    calibrate_offset,
    degree_limit,
    draw_heterogeneity,
    draw_outcomes,
    draw_x1,
    expected_link_probability,
    form_links,
    reference_design,
    simulate,
)
from peerfx.errors import ConfigError
from peerfx.network import AdjacencyNetwork, CoefVector, row_normalize


class ZeroRng:
    """Stands in for a Generator: every normal draw at its mean, beta at its mean."""

    def normal(self, loc=0.0, scale=1.0, size=None):
        shape = np.shape(loc) if size is None else size
        return np.broadcast_to(np.asarray(loc, dtype=float), shape).copy() * 0.0

    def beta(self, a, b, size=None):
        return np.full(size, a / (a + b))


class TestConfig:
    def test_phi_default_binds_unit_bound(self):
        cfg = DgpConfig()
        lo = cfg.phi_value * (cfg.alpha_low - cfg.xi_mean)
        hi = cfg.phi_value * (cfg.alpha_high + 1 - cfg.xi_mean)
        assert max(abs(lo), abs(hi)) == pytest.approx(1.0)

    def test_dict_round_trip(self):
        cfg = DgpConfig(n=50, lambda_=0.5, beta=CoefVector(0.4, [2.0], [0.5]), seed=9)
        assert DgpConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            DgpConfig.from_dict({"nn": 10})

    @pytest.mark.parametrize("bad", [dict(mu0=0), dict(n=1), dict(h_form="cubic"),
                                     dict(beta=CoefVector(0.5, [1], [1]), phi=-1)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            DgpConfig(**bad)

    def test_custom_h(self):
        cfg = DgpConfig(h_form="custom", h_expr="a**2 + kappa")
        assert_allclose(cfg.h([0.0, 2.0]), [3.0, 7.0])

    def test_custom_h_has_no_builtins(self):
        cfg = DgpConfig(h_form="custom", h_expr="__import__('os')")
        with pytest.raises(NameError):
            cfg.h([0.0])


class TestHeterogeneity:
    def test_mean_draw_plug_in(self):
        cfg = DgpConfig(phi=0.5)
        a = draw_heterogeneity(cfg, np.array([1.0, -1.0]), ZeroRng())
        assert_allclose(a, [0.5, -0.75])

    def test_xi_centered(self):
        cfg = DgpConfig()
        rng = streams.stream(1, 0, "xi")
        xi = rng.beta(cfg.mu0, cfg.mu1, size=10**6) - cfg.xi_mean
        sd = stats.beta(cfg.mu0, cfg.mu1).std()
        assert abs(xi.mean()) <= 3 * sd / 1e3

    def test_support(self):
        cfg = DgpConfig()
        a = draw_heterogeneity(cfg, np.repeat([1.0, -1.0], 5000), streams.stream(2, 0, "xi"))
        phi = cfg.phi_value
        assert a.min() >= phi * (cfg.alpha_low - cfg.xi_mean) - 1e-12
        assert a.max() <= phi * (cfg.alpha_high + 1 - cfg.xi_mean) + 1e-12
        assert np.abs(a).max() <= 1 + 1e-12


class TestX1:
    def test_forced_zero_draws(self):
        assert_allclose(draw_x1(np.zeros(3), ZeroRng()), 1.25)

    def test_conditional_mean_quadrature(self):
        t, w = np.polynomial.hermite.hermgauss(60)
        e_cos = np.sum(w * np.cos(1.0 + np.sqrt(2.0) * t)) / np.sqrt(np.pi)
        expected = 3.0 + e_cos / 0.8
        x1 = draw_x1(np.ones(10**6), streams.stream(3, 0, "x1"))
        assert abs(x1.mean() - expected) <= 0.01

    @pytest.mark.parametrize("level", [1.0, -1.0])
    def test_conditional_variance(self, level):
        x1 = draw_x1(np.full(10**5, level), streams.stream(4, 0, "x1"))
        assert x1.var() >= 9.0


class TestLinks:
    cfg = DgpConfig(n=30)

    def test_saturation(self):
        x2 = np.ones(30)
        a = np.zeros(30)
        rng = streams.stream(0, 0, "links")
        full = form_links(self.cfg.with_(surplus_offset=1e6), x2, a, rng)
        empty = form_links(self.cfg.with_(surplus_offset=-1e6), x2, a, rng)
        assert full.d.sum() == 30 * 29
        assert empty.d.sum() == 0

    def test_link_frequency(self):
        n = 448  # 100128 dyads
        cfg = DgpConfig(n=n, lambda_=1.0)
        net = form_links(cfg, np.ones(n), np.zeros(n), streams.stream(5, 0, "links"))
        freq = net.d.sum() / (n * (n - 1))
        assert abs(freq - expit(1.0)) <= 0.005

    def test_exchangeable(self):
        cfg = DgpConfig(n=40)
        s = simulate(cfg, 0)
        u = streams.dyad_shocks(40, streams.stream(0, 7, "links"))
        perm = np.random.default_rng(0).permutation(40)
        direct = form_links(cfg, s.x2[:, 0], s.a, u=u)
        permuted = form_links(cfg, s.x2[perm, 0], s.a[perm], u=u[np.ix_(perm, perm)])
        assert_array_equal(permuted.d, direct.permute(perm).d)


class TestOutcomes:
    def test_linear_only(self):
        cfg = DgpConfig(n=10, beta=CoefVector(0.0, [2.0], [0.0]), h_form="custom",
                        h_expr="0 * a")
        net = AdjacencyNetwork.from_edges(10, [(i, i + 1) for i in range(9)])
        x1 = np.arange(10.0)
        y, ups = draw_outcomes(cfg, net, x1, np.zeros(10), eps=np.zeros(10))
        assert_allclose(y, 2 * x1)
        assert_array_equal(ups, 0)

    def test_all_zero(self):
        cfg = DgpConfig(n=10, h_form="custom", h_expr="0 * a")
        net = AdjacencyNetwork.from_edges(10, [(0, 1), (2, 3)])
        y, _ = draw_outcomes(cfg, net, np.zeros(10), np.zeros(10), eps=np.zeros(10))
        assert_array_equal(y, 0)

    def test_sin_at_zero(self):
        assert DgpConfig(kappa=3.0).h(0.0) == 0.0

    def test_system_solved(self):
        cfg = DgpConfig(n=60)
        s = simulate(cfg, 1)
        g = row_normalize(s.network).g
        x1 = s.x1[:, 0]
        rhs = x1 + g @ x1 + s.upsilon
        assert_allclose(s.y - 0.2 * g @ s.y, rhs, atol=1e-10)


class TestSimulate:
    def test_reproducible(self):
        cfg = DgpConfig(n=50, seed=11)
        a, b = simulate(cfg, 4), simulate(cfg, 4)
        assert_array_equal(a.y, b.y)
        assert_array_equal(a.network.d, b.network.d)

    def test_replications_differ(self):
        cfg = DgpConfig(n=50, seed=11)
        assert not np.array_equal(simulate(cfg, 0).y, simulate(cfg, 1).y)

    def test_order_independent(self):
        cfg = DgpConfig(n=30, seed=2)
        forward = [simulate(cfg, r).y for r in range(3)]
        backward = [simulate(cfg, r).y for r in (2, 1, 0)][::-1]
        for f, b in zip(forward, backward):
            assert_array_equal(f, b)

    def test_csv_round_trip(self, tmp_path):
        s = simulate(DgpConfig(n=25), 0)
        data, edges = s.to_csv(tmp_path)
        back = Sample.from_csv(data, edges)
        for name in ("x1", "x2", "y", "a", "upsilon"):
            assert_array_equal(getattr(back, name), getattr(s, name))
        assert_array_equal(back.network.d, s.network.d)

    def test_csv_column_selection(self, tmp_path):
        s = simulate(DgpConfig(n=25), 0)
        data, edges = s.to_csv(tmp_path)
        back = Sample.from_csv(data, edges, x1_cols=["x1", "x2"])
        assert back.x1.shape == (25, 2)
        assert_array_equal(back.x1[:, 1], s.x2[:, 0])


def _mean_degree_by_integration(cfg, offset, m=3000):
    # independent oracle: midpoint rule over uniform quantiles of the two Beta draws
    u = (np.arange(m) + 0.5) / m
    xi = stats.beta(cfg.mu0, cfg.mu1).ppf(u) - cfg.xi_mean
    phi = cfg.phi_value
    total = 0.0
    for xa, pa in ((1.0, cfg.p_x2), (-1.0, 1 - cfg.p_x2)):
        for xb, pb in ((1.0, cfg.p_x2), (-1.0, 1 - cfg.p_x2)):
            ai = phi * ((cfg.alpha_high if xa == 1 else cfg.alpha_low) + xi)
            aj = phi * ((cfg.alpha_high if xb == 1 else cfg.alpha_low) + xi)
            s = xa * xb * cfg.lambda_ + ai[:, None] + aj[None, :] + offset
            total += pa * pb * expit(s).mean()
    return (cfg.n - 1) * total


class TestCalibration:
    @pytest.mark.parametrize("kind,n", [("sparse", 100), ("dense", 250)])
    def test_offset_hits_target_by_integration(self, kind, n):
        cfg = reference_design(kind, n, 0.2)
        oracle = _mean_degree_by_integration(cfg, cfg.offset_value)
        assert oracle == pytest.approx(cfg.target_mean_degree, rel=1e-5)

    def test_quadrature_matches_integration(self):
        cfg = DgpConfig()
        p = expected_link_probability(cfg, 0.3)
        assert (cfg.n - 1) * p == pytest.approx(_mean_degree_by_integration(cfg, 0.3), rel=1e-6)

    def test_offset_monotone(self):
        cfg = DgpConfig()
        assert calibrate_offset(cfg, 5.0) < calibrate_offset(cfg, 20.0)

    def test_dense_mean_degree(self):
        cfg = reference_design("dense", 100, 0.2)
        deg = [simulate(cfg, r).network.degrees.mean() / 99 for r in range(200)]
        assert abs(np.mean(deg) - 24 / 99) <= 0.02

    def test_sparse_mean_degree(self):
        cfg = reference_design("sparse", 100, 0.2)
        deg = np.mean([simulate(cfg, r).network.degrees.mean() for r in range(200)])
        assert abs(deg - 1.9) <= 0.19

    def test_degree_limit_is_group_average(self):
        cfg = reference_design("dense", 100, 0.2)
        x2 = np.array([1.0, -1.0])
        a = np.array([0.3, -0.4])
        lim = degree_limit(cfg, x2, a)
        assert np.all((lim > 0) & (lim < 1))
        # larger own heterogeneity means more links
        assert degree_limit(cfg, [1.0], [0.5])[0] > degree_limit(cfg, [1.0], [0.0])[0]
