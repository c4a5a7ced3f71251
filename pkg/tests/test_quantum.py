import io
import json
import math

import numpy as np
import pytest

from photocount import dsp, quantum as Q
from photocount.errors import ConfigurationError, PhysicalityError, ProvenanceError

N = 2_000_000


def gaussian_acc(var, seed=0, n=N):
    x = np.random.default_rng(seed).normal(0, math.sqrt(var), n)
    return dsp.accumulate([x], cross=False)


def phase_random_squeezed(r, seed=0, n=N):
    # single quadrature of a squeezed vacuum seen at a uniformly random phase
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 2 * math.pi, n)
    v = 0.5 * (math.exp(2 * r) * np.cos(phi) ** 2 + math.exp(-2 * r) * np.sin(phi) ** 2)
    return dsp.accumulate([np.sqrt(v) * rng.standard_normal(n)], cross=False)


def close(value, target, err, k=4.0):
    return abs(value - target) <= k * err


def test_vacuum():
    s = Q.photon_stats(gaussian_acc(0.5))
    assert close(s.n, 0.0, s.n_err)
    assert close(s.var_n, 0.0, s.var_n_err)


@pytest.mark.parametrize("n", [0.2, 1.0, 3.0])
def test_thermal_is_bose_einstein(n):
    s = Q.photon_stats(gaussian_acc(n + 0.5, seed=int(10 * n)))
    assert close(s.n, n, s.n_err)
    assert close(s.var_n, n * (n + 1), s.var_n_err)
    assert close(s.fano, n + 1, s.fano_err)


def test_squeezed_vacuum_is_pure_pairs():
    r = 0.6
    s = Q.photon_stats(phase_random_squeezed(r))
    n = math.sinh(r) ** 2
    assert close(s.n, n, s.n_err)
    assert close(s.var_n, 2 * n * (n + 1), s.var_n_err)
    sq = Q.m_and_variances(s)
    assert close(sq.m, math.sinh(r) * math.cosh(r), sq.m_err)
    assert not sq.below_thermal


def test_stats_from_cumulants_algebra():
    c = Q.Cumulants(1.2, 0.3, np.diag([1e-6, 4e-6]))
    s = Q.stats_from_cumulants(c)
    assert s.n == pytest.approx(0.7)
    assert s.var_n == pytest.approx(2 / 3 * 0.3 + 1.44 - 0.25)
    assert s.n_err == pytest.approx(1e-3)
    assert s.var_n_err == pytest.approx(math.sqrt((2 * 1.2) ** 2 * 1e-6 + (2 / 3) ** 2 * 4e-6))
    assert c.x4 == pytest.approx(0.3 + 3 * 1.44)


def test_empty_accumulator_rejected():
    with pytest.raises(ConfigurationError):
        Q.photon_stats(dsp.MomentAccumulator(1))
    with pytest.raises(ConfigurationError):
        Q.cumulants(gaussian_acc(0.5, n=1000), stream=1)


def test_reference_subtraction_removes_added_noise():
    rng = np.random.default_rng(3)
    noise = 4.0
    ref = dsp.accumulate([rng.normal(0, math.sqrt(0.5 + noise), N)], cross=False)
    cond = dsp.accumulate([rng.normal(0, math.sqrt(1.5 + noise), N)], cross=False)
    c = Q.reference_subtract(Q.cumulants(cond), Q.cumulants(ref))
    s = Q.stats_from_cumulants(c)
    assert close(s.n, 1.0, s.n_err)
    assert close(s.var_n, 2.0, s.var_n_err)


def test_reference_provenance_checked():
    a = Q.Cumulants(1.0, 0.0, provenance="aaa#0")
    b = Q.Cumulants(1.0, 0.0, provenance="bbb#0")
    with pytest.raises(ProvenanceError):
        Q.reference_subtract(a, b)


def test_m_and_variances_anchor():
    n, m = 0.0292, 0.183
    s = Q.PhotonStats(n, m * m + n * (n + 1), float("nan"))
    sq = Q.m_and_variances(s)
    assert sq.m == pytest.approx(m)
    assert sq.V_minus == pytest.approx(0.3462, abs=1e-4)
    assert sq.squeezing_db == pytest.approx(-1.6, abs=0.01)
    assert sq.V_plus == pytest.approx(n + 0.5 + m)


def test_below_thermal_clamps():
    sq = Q.m_and_variances(Q.PhotonStats(0.5, 0.7, 1.4))
    assert sq.below_thermal and sq.m == 0.0


def _four_streams(cov, seed, n=N):
    z = np.random.default_rng(seed).multivariate_normal(np.zeros(4), cov, n, method="cholesky")
    return dsp.accumulate(list(z.T))


def test_pair_stats_thermal_uncorrelated():
    cov = np.diag([0.9, 0.9, 1.3, 1.3])
    ps = Q.pair_stats(_four_streams(cov, 4))
    assert close(ps.n1, 0.4, 1e-3) and close(ps.n2, 0.8, 1e-3)
    assert close(ps.corr, 0.0, ps.corr_err)
    assert ps.var_n1 == pytest.approx(0.4 * 1.4, rel=0.02)
    assert ps.delta2_thermal == pytest.approx((2 * 0.32 + 1.2) / 4, rel=0.01)


def test_pair_stats_two_mode_squeezed():
    r = 0.5
    a, c = math.cosh(2 * r) / 2, math.sinh(2 * r) / 2
    cov = np.array([[a, 0, c, 0], [0, a, 0, -c], [c, 0, a, 0], [0, -c, 0, a]])
    ps = Q.pair_stats(_four_streams(cov, 5))
    assert close(ps.corr, c ** 2, ps.corr_err)
    n = math.sinh(r) ** 2
    assert close(ps.corr, n * (n + 1), ps.corr_err)


def test_pair_stats_identical_streams():
    x = np.random.default_rng(6).normal(0, 1.0, 200_000)
    p = np.random.default_rng(7).normal(0, 1.0, 200_000)
    ps = Q.pair_stats(dsp.accumulate([x, p, x, p]))
    # symmetric ordering: self-covariance exceeds var_n by 1/4
    assert ps.corr == pytest.approx(ps.var_n1 + 0.25, rel=1e-9)


def test_pair_stats_requires_cross():
    with pytest.raises(ConfigurationError):
        Q.pair_stats(dsp.accumulate([np.zeros(10)] * 4, cross=False))
    with pytest.raises(ConfigurationError):
        Q.pair_stats(dsp.accumulate([np.zeros(10)] * 4), streams=(0, 1, 1, 2))


def test_vacuum_covariance():
    gb = Q.covariance(0.0, 0.0, 0.0)
    assert gb.det == pytest.approx(1 / 16)
    assert gb.mu == pytest.approx(1.0)
    assert gb.symplectic_eigenvalues() == pytest.approx((0.5, 0.5))
    assert Q.entanglement_of_formation(gb) == 0.0


@pytest.mark.parametrize("r", [0.1, 0.4, 1.0])
def test_tmsv_pure_and_ef_closed_form(r):
    n, m = math.sinh(r) ** 2, math.sinh(r) * math.cosh(r)
    gb = Q.covariance(n, n, m)
    assert gb.det == pytest.approx(1 / 16)
    assert gb.mu == pytest.approx(1.0)
    assert gb.nu_tilde_minus() == pytest.approx(math.exp(-2 * r) / 2)
    c2, s2 = math.cosh(r) ** 2, math.sinh(r) ** 2
    ef = c2 * math.log2(c2) - s2 * math.log2(s2)
    assert Q.entanglement_of_formation(gb) == pytest.approx(ef, rel=1e-9)
    db = 10 * math.log10(math.exp(-2 * r))
    assert Q.ef_from_squeezing_db(db) == pytest.approx(ef, rel=1e-9)


def test_ef_anchor_and_monotone():
    assert Q.ef_from_squeezing_db(-2.0) == pytest.approx(0.307, abs=2e-3)
    vals = [Q.ef_from_squeezing_db(d) for d in np.linspace(0, 6, 13)]
    assert vals[0] == 0.0
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_thermal_covariance_separable():
    gb = Q.covariance(0.5, 0.5, 0.0)
    assert Q.entanglement_of_formation(gb) == 0.0
    assert gb.mu == pytest.approx(0.25)


def test_covariance_clamp_and_reject():
    bound = Q.physical_bound(0.0292, 0.0292)
    gb = Q.covariance(0.0292, 0.0292, bound * 1.01, m_err=0.01)
    assert gb.clamped and gb.m == pytest.approx(bound)
    with pytest.raises(PhysicalityError):
        Q.covariance(0.0292, 0.0292, 0.183, m_err=0.001)
    with pytest.raises(PhysicalityError):
        Q.covariance(-0.5, 0.1, 0.0, m_err=0.01)
    assert Q.covariance(-1e-4, 0.1, 0.0, m_err=0.01).n_A == 0.0


def test_asymmetry_flag():
    assert Q.covariance(0.5, 0.1, 0.1).asymmetric
    assert not Q.covariance(0.5, 0.5, 0.1).asymmetric


def test_rates():
    df = np.array([0.5e9, 1e9, 2e9])
    ef = np.array([0.2, 0.2, 0.2])
    np.testing.assert_allclose(Q.entanglement_rate(df, ef, "wideband"), 2 * df * ef)
    np.testing.assert_allclose(Q.entanglement_rate(df, ef, "bichromatic"), 2 * df * ef)
    grid = np.linspace(0, 2e9, 41)
    lin = Q.entanglement_rate(grid, grid * 1e-10, "bichromatic")
    np.testing.assert_allclose(lin, grid ** 2 * 1e-10, rtol=1e-12)
    with pytest.raises(ConfigurationError):
        Q.entanglement_rate(df[::-1], ef)
    with pytest.raises(ConfigurationError):
        Q.entanglement_rate(df, ef, "other")


def test_steering_thermal_separable():
    st = Q.steering(Q.covariance(0.3, 0.3, 0.0))
    assert st.cls == "separable"
    assert st.G_AtoB == st.G_BtoA == 0.0
    assert not st.entangled


@pytest.mark.parametrize("r", [0.2, 0.7])
def test_steering_tmsv(r):
    gb = Q.covariance(math.sinh(r) ** 2, math.sinh(r) ** 2, math.sinh(r) * math.cosh(r))
    st = Q.steering(gb)
    assert st.G_AtoB == pytest.approx(math.log(math.cosh(2 * r)))
    assert st.G_BtoA == pytest.approx(st.G_AtoB)
    assert st.cls == "two-way"
    assert st.eta == pytest.approx(gb.mu_A * gb.mu_B)


def test_steering_one_way():
    gb = Q.covariance(0.5, 0.1, math.sqrt(0.14))
    st = Q.steering(gb)
    assert st.G_AtoB == pytest.approx(-math.log(2 * (0.6 - 0.14)))
    assert st.G_BtoA == 0.0
    assert st.cls == "steerable A->B"
    assert st.entangled


def test_steering_entangled_not_steerable():
    # n < m <= 0.374 at n = 0.2: entangled but neither direction steerable
    gb = Q.covariance(0.2, 0.2, 0.3)
    st = Q.steering(gb)
    assert st.entangled and st.cls == "entangled"


def test_duan():
    lams = np.linspace(0.1, 0.9, 9)
    v = 0.45 + 0.2 * (lams - 0.5) ** 2
    d = Q.duan_check(lams, v)
    assert d.lambda_star == pytest.approx(0.5)
    np.testing.assert_array_equal(d.inseparable, v < 0.5)
    assert Q.lambda_to_a(0.5) == pytest.approx(1.0)
    assert Q.lambda_to_a(np.array([0.8]))[0] == pytest.approx(4 ** 0.25)
    with pytest.raises(ConfigurationError):
        Q.duan_check(lams, v[:-1])


def test_c4_diagnostic():
    c2 = np.linspace(0.5, 3.0, 8)
    rng = np.random.default_rng(8)
    err = np.full(c2.size, 1e-3)
    lin = Q.c4_vs_c2_diagnostic(c2, err * rng.standard_normal(c2.size), err)
    assert lin.linear and lin.n_points == 8
    bent = Q.c4_vs_c2_diagnostic(c2, 0.05 * c2 + err * rng.standard_normal(c2.size), err)
    assert not bent.linear and bent.alpha == pytest.approx(0.05, abs=5e-3)
    mask = np.ones(8, bool)
    mask[3] = False
    assert Q.c4_vs_c2_diagnostic(c2, np.where(mask, 0.0, 5.0), err, mask).linear
    with pytest.raises(ConfigurationError):
        Q.c4_vs_c2_diagnostic(c2[:2], c2[:2])


def test_jackknife_matches_analytic_error():
    s = Q.photon_stats(gaussian_acc(1.5, seed=9))
    # var(x^2) = 2 sigma^4 for a Gaussian
    assert s.n_err == pytest.approx(math.sqrt(2 * 1.5 ** 2 / N), rel=0.35)


def test_write_rows_csv_and_json():
    s = Q.PhotonStats(0.1, 0.11, 1.1, 0.01, 0.02, 0.03)
    rows = [Q.result_row("a", s, config_hash="abc"), Q.result_row("b", extra_col=1.5)]
    text = Q.write_rows(rows)
    head = text.splitlines()[0].split(",")
    assert head[:len(Q.ROW_FIELDS)] == Q.ROW_FIELDS and head[-1] == "extra_col"
    buf = io.StringIO()
    Q.write_rows([Q.result_row("c", n=np.float64(0.5), m=float("nan"))], buf, fmt="json")
    data = json.loads(buf.getvalue())
    assert data[0]["n"] == 0.5 and data[0]["m"] is None
