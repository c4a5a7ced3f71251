import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.constants import e as ELECTRON, h as PLANCK, k as BOLTZMANN

from photocount import junction as J
from photocount.errors import ConfigurationError, PhysicalityError
from photocount.modes import make_bichromatic, make_monochromatic, make_wideband

SQZ = J.JunctionModel.squeezing_point()


def test_squeezing_point_parameters():
    assert SQZ.Vdc == pytest.approx(PLANCK * 12e9 / (2 * ELECTRON))
    assert SQZ.z == pytest.approx(ELECTRON * 0.43e-6 * 52.5 * math.sqrt(2) / (PLANCK * 12e9))
    assert SQZ.z == pytest.approx(0.6433, abs=1e-4)


def test_s2_limits():
    f = 6e9
    assert J.s2(f, 0.0, R=50, Te=1e-6) == pytest.approx(PLANCK * f / 50, rel=1e-12)
    te = 300.0
    assert J.s2(1e3, 0.0, R=50, Te=te) == pytest.approx(2 * BOLTZMANN * te / 50, rel=1e-9)
    v = 1e-3
    assert J.s2(f, v, R=50, Te=0.01) == pytest.approx(ELECTRON * v / 50, rel=1e-3)
    # 0/0 point: each term tends to 2 k Te / R
    nu = ELECTRON * 1e-5 / PLANCK
    got = J.s2(nu, 1e-5, R=50, Te=0.02)
    expect = 0.5 * (J.spectral_density(2 * nu, 50, 0.02) + 2 * BOLTZMANN * 0.02 / 50)
    assert got == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("f", [1e9, 4e9, 6e9, 10e9])
@pytest.mark.parametrize("te", [0.005, 0.017, 0.2, 2.0])
def test_equilibrium_is_bose_einstein(f, te):
    m = J.JunctionModel(Te=te)
    assert J.occupancy(np.array([f]), m)[0] == pytest.approx(J.bose_einstein(f, te), rel=1e-9, abs=1e-15)


def test_vacuum_occupancy_zero():
    m = J.JunctionModel(Te=1e-4)
    np.testing.assert_allclose(J.occupancy(np.array([4e9, 8e9]), m), 0.0, atol=1e-12)


def test_occupancy_even_in_vdc():
    m = J.JunctionModel(Vdc=30e-6, Iac_rms=0.3e-6)
    f = np.array([3e9, 5e9, 9e9])
    np.testing.assert_allclose(J.occupancy(f, m), J.occupancy(f, m.with_bias(Vdc=-30e-6)), rtol=1e-12)


def test_occupancy_bias_sweep_shape():
    # flat near zero bias, linear at large bias
    m = J.JunctionModel(Te=0.017)
    f = np.array([4e9])
    n = [J.occupancy(f, m.with_bias(Vdc=i * m.R))[0] for i in (0.0, 0.05e-6, 4e-6, 8e-6)]
    assert abs(n[1] - n[0]) < 0.01
    slope1 = (n[3] - n[2]) / 4e-6
    slope2 = (J.occupancy(f, m.with_bias(Vdc=12e-6 * m.R))[0] - n[3]) / 4e-6
    assert slope1 == pytest.approx(slope2, rel=1e-6)


def test_photoassisted_continuity():
    m = J.JunctionModel(Vdc=20e-6)
    f = np.array([4e9, 6e9])
    np.testing.assert_allclose(J.occupancy(f, m, z=1e-6), J.occupancy(f, m, z=0.0), atol=1e-9)


def test_bessel_weights_sum_to_one():
    from scipy import special
    for z in (0.1, 0.64, 3.0, 25.0):
        k = J.bessel_orders(z)
        assert abs(1 - np.sum(special.jv(k, z) ** 2)) < 1e-12
        assert k.max() >= max(10, math.ceil(3 * z))


def test_photoassisted_is_convex_combination():
    m = SQZ
    f = np.array([6e9])
    from scipy import special
    vals = [J.occupancy(f, m.with_bias(Vdc=m.Vdc + k * PLANCK * m.f_p / ELECTRON, Iac_rms=0))[0]
            for k in range(-12, 13)]
    w = special.jv(np.arange(-12, 13), m.z) ** 2
    assert J.occupancy(f, m)[0] == pytest.approx(float(np.dot(w, vals)), rel=1e-10)


def test_no_drive_no_pairs():
    m = J.JunctionModel(Vdc=25e-6)
    np.testing.assert_array_equal(J.pair_correlator(np.array([3e9, 6e9]), m), 0)


def test_pair_correlator_symmetric():
    f = np.array([1.3e9, 4.25e9, 5.5e9])
    np.testing.assert_allclose(J.pair_correlator(f, SQZ), J.pair_correlator(12e9 - f, SQZ), rtol=1e-10)


def _s_scalar(nu, R, te):
    x = PLANCK * nu / (2 * BOLTZMANN * te)
    return PLANCK * nu / R / math.tanh(x) if abs(x) > 1e-9 else 2 * BOLTZMANN * te / R


def test_squeezing_point_against_scalar_sum():
    # independent scalar evaluation of the photoassisted sums
    from scipy.special import jv
    f, m = 6e9, SQZ
    nu0 = ELECTRON * m.Vdc / PLANCK
    n = sum(jv(k, m.z) ** 2 * 0.5 * (_s_scalar(f + nu0 + k * m.f_p, m.R, m.Te)
                                     + _s_scalar(f - nu0 - k * m.f_p, m.R, m.Te)) for k in range(-30, 31))
    n = n * m.R / (2 * PLANCK * f) - 0.5
    x = 0.5 * sum(jv(k, m.z) * jv(k - 1, m.z) * (_s_scalar(f - nu0 - k * m.f_p, m.R, m.Te)
                                                 - _s_scalar(f + nu0 - k * m.f_p, m.R, m.Te))
                  for k in range(-30, 31))
    mm = abs(x) * m.R / (2 * PLANCK * math.sqrt(f * (m.f_p - f)))
    assert J.occupancy(np.array([f]), m)[0] == pytest.approx(n, rel=1e-10)
    assert abs(J.pair_correlator(np.array([f]), m)[0]) == pytest.approx(mm, rel=1e-10)
    assert n == pytest.approx(0.1275, abs=1e-3) and mm == pytest.approx(0.2738, abs=1e-3)


@settings(max_examples=1000, deadline=None)
@given(te=st.floats(0.005, 0.2), vdc=st.floats(-80e-6, 80e-6), iac=st.floats(0, 2e-6),
       f=st.floats(0.2e9, 11.8e9))
def test_physicality_random(te, vdc, iac, f):
    m = J.JunctionModel(Te=te, Vdc=vdc, Iac_rms=iac)
    n1 = J.occupancy(np.array([f]), m)[0]
    n2 = J.occupancy(np.array([12e9 - f]), m)[0]
    mm = abs(J.pair_correlator(np.array([f]), m)[0])
    assert mm ** 2 <= n1 * (n2 + 1) + 1e-12


def test_predict_squeezing_anchor_monochromatic():
    state = J.SpectralState.from_model(SQZ, (np.arange(2400) + 0.5) * 5e6)
    p = J.predict(make_monochromatic(6e9, 200e6, "raised-cosine"), state)
    assert p.squeezing_db == pytest.approx(-1.6, abs=0.5)
    assert p.V_minus == pytest.approx(p.n + 0.5 - p.m)


def test_predict_thermal_no_pairs():
    state = J.SpectralState.thermal(0.7)
    p = J.predict(make_wideband(4e9, 8e9), state)
    assert p.m == 0 and p.V_minus == p.V_plus == pytest.approx(1.2)


def test_lambda_prefactor():
    state = J.SpectralState.flat_pairs(0.3, 0.2)
    lams = np.linspace(0.05, 0.95, 19)
    ps = J.lambda_sweep(4.25e9, 7.75e9, 200e6, state, lams)
    m = np.array([p.m for p in ps])
    np.testing.assert_allclose(m, 2 * np.sqrt(lams * (1 - lams)) * 0.2, rtol=1e-9)
    assert lams[np.argmax(m)] == pytest.approx(0.5)


def test_dispersion_ordering():
    state = J.SpectralState.from_model(SQZ, (np.arange(2400) + 0.5) * 5e6)
    disp = J.quadratic_dispersion()
    assert disp(10e9) - disp(1e9) == pytest.approx(5 * math.pi)
    bi = make_bichromatic(3.5e9, 8.5e9, 200e6, shape="raised-cosine")
    wb = make_wideband(3.5e9, 8.5e9)
    dbi = J.predict(bi, state, disp).m / J.predict(bi, state).m
    dwb = J.predict(wb, state, disp).m / J.predict(wb, state).m
    assert dwb < dbi


def test_linear_phase_is_harmless():
    state = J.SpectralState.flat_pairs(0.2, 0.3)
    wb = make_wideband(4e9, 8e9)
    p0 = J.predict(wb, state)
    p1 = J.predict(wb, state, lambda f: 3e-9 * f)
    assert p1.m == pytest.approx(p0.m, rel=1e-12)


def test_mode_beyond_grid():
    state = J.SpectralState.thermal(0.1, f_max=5e9)
    with pytest.raises(ConfigurationError):
        J.predict(make_monochromatic(8e9, 200e6), state)


def test_effective_frequency_limits():
    m = J.JunctionModel(Te=0.017)
    f1, f2 = 4.25e9, 7.75e9
    i, fe = J.effective_frequency(m, [1e-9, 1e-3], f1, f2)
    assert fe[0] == pytest.approx(f1, rel=0.01)
    assert fe[1] == pytest.approx(2 * f1 * f2 / (f1 + f2), rel=1e-3)
    assert 2 * f1 * f2 / (f1 + f2) == pytest.approx(5.49e9, rel=1e-3)
    _, same = J.effective_frequency(m, [1e-6, 5e-6], 5e9, 5e9)
    np.testing.assert_allclose(same, 5e9)


def test_effective_frequency_omits_empty_points():
    m = J.JunctionModel(Te=1e-4)
    i, fe = J.effective_frequency(m, [0.0, 5e-6], 4e9, 8e9)
    assert list(i) == [5e-6]


def test_state_csv_round_trip(tmp_path):
    state = J.SpectralState.from_model(SQZ, (np.arange(100) + 0.5) * 5e6 + 5.75e9)
    p = tmp_path / "s.csv"
    state.to_csv(p)
    back = J.SpectralState.from_csv(p)
    np.testing.assert_array_equal(back.n_bar, state.n_bar)
    np.testing.assert_array_equal(back.m_bar, state.m_bar)
    assert back.f_p == state.f_p


def test_unphysical_state_rejected():
    with pytest.raises(PhysicalityError):
        J.SpectralState.flat_pairs(0.0292, 0.183).check_physical()
