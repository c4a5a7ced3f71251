import json

import numpy as np
import pytest

from photocount import calib as C
from photocount.errors import ConfigurationError

FREQS = np.linspace(2e9, 10e9, 9)
IDC = np.linspace(-20e-6, 20e-6, 21)
GAIN = 70 + 2 * np.sin(FREQS / 1.3e9)
TN = 3 + 0.2 * FREQS / 1e9


def test_noiseless_round_trip():
    psd = C.synthetic_spectra(FREQS, IDC, Te=0.0174, gain_db=GAIN, noise_temp=TN)
    res = C.fit_thermometry(FREQS, IDC, psd)
    assert res.Te == pytest.approx(0.0174, rel=1e-6)
    np.testing.assert_allclose(res.gain_db, GAIN, atol=1e-6)
    np.testing.assert_allclose(res.noise_temp, TN, rtol=1e-6)
    np.testing.assert_allclose(res.Te_per_bin, 0.0174, rtol=1e-5)
    assert res.residual_rms < 1e-10


def test_noisy_fit_within_error():
    rng = np.random.default_rng(0)
    psd = C.synthetic_spectra(FREQS, IDC, Te=0.03, gain_db=GAIN, noise_temp=TN, rel_noise=1e-4, rng=rng)
    res = C.fit_thermometry(FREQS, IDC, psd)
    assert abs(res.Te - 0.03) < 5 * res.Te_err
    np.testing.assert_allclose(res.gain_db, GAIN, atol=0.01)


def test_scale_invariance():
    psd = C.synthetic_spectra(FREQS, IDC, Te=0.02, gain_db=GAIN, noise_temp=TN)
    a = C.fit_thermometry(FREQS, IDC, psd)
    b = C.fit_thermometry(FREQS, IDC, psd * 1e3)
    assert b.Te == pytest.approx(a.Te, rel=1e-6)
    np.testing.assert_allclose(b.gain_db - a.gain_db, 30.0, atol=1e-6)
    np.testing.assert_allclose(b.noise_temp, a.noise_temp, rtol=1e-6)


def test_zero_bias_only_rejected():
    psd = C.synthetic_spectra(FREQS, np.zeros(3), Te=0.02)
    with pytest.raises(ConfigurationError):
        C.fit_thermometry(FREQS, np.zeros(3), psd)


def test_narrow_bias_rejected():
    idc = np.linspace(-0.05e-6, 0.05e-6, 9)
    psd = C.synthetic_spectra(FREQS, idc, Te=0.05)
    with pytest.raises(ConfigurationError):
        C.fit_thermometry(FREQS, idc, psd)


def test_shape_checked():
    with pytest.raises(ConfigurationError):
        C.fit_thermometry(FREQS, IDC, np.ones((3, 3)))


def test_inverse_gain():
    psd = C.synthetic_spectra(FREQS, IDC, Te=0.02, gain_db=GAIN, noise_temp=TN)
    res = C.fit_thermometry(FREQS, IDC, psd)
    np.testing.assert_allclose(res.inverse_gain(FREQS), 10 ** (-GAIN / 20), rtol=1e-6)


def test_json_and_csv(tmp_path):
    psd = C.synthetic_spectra(FREQS, IDC, Te=0.02)
    res = C.fit_thermometry(FREQS, IDC, psd)
    p = tmp_path / "c.json"
    res.to_json(p, config_hash="abc")
    data = json.loads(p.read_text())
    assert data["Te"] == res.Te and data["config_hash"] == "abc"
    assert len(data["gain_db"]) == FREQS.size
    lines = res.to_csv().splitlines()
    assert lines[0] == "f,gain_db,noise_temp,Te_bin" and len(lines) == FREQS.size + 1


def test_spectra_csv_round_trip(tmp_path):
    psd = C.synthetic_spectra(FREQS, IDC, Te=0.02)
    p = tmp_path / "s.csv"
    C.write_spectra_csv(p, FREQS, IDC, psd)
    f, i, grid = C.read_spectra_csv(p)
    np.testing.assert_array_equal(f, FREQS)
    np.testing.assert_array_equal(i, IDC)
    np.testing.assert_array_equal(grid, psd)
    lines = p.read_text().splitlines()
    (tmp_path / "hole.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ConfigurationError):
        C.read_spectra_csv(tmp_path / "hole.csv")


def test_interlace_plan():
    assert C.interlace_plan(["a", "b", "c"]) == ["R", "a", "R", "b", "R", "c", "R"]
    assert C.interlace_plan(["a", "b", "c"], 2) == ["R", "a", "b", "R", "c", "R"]
    assert C.interlace_plan([]) == []
    with pytest.raises(ConfigurationError):
        C.interlace_plan(["a"], 0)


def test_interlacing_cancels_linear_drift():
    # gain drifts linearly in time; each condition is referenced to the mean
    # of its neighbouring references
    conds = [f"c{k}" for k in range(6)]
    true_n = {c: 0.1 * (k + 1) for k, c in enumerate(conds)}
    noise = 5.0

    def measure(slot):
        return 1 + 2e-3 * slot

    def run(plan):
        out, refs = {}, []
        for slot, item in enumerate(plan):
            g = measure(slot)
            refs.append((slot, g * (noise + 0.5)) if item == "R" else None)
            if item != "R":
                out[item] = (slot, g * (noise + 0.5 + true_n[item]))
        est = {}
        ref_pts = [r for r in refs if r is not None]
        for c, (slot, val) in out.items():
            before = max(r for r in ref_pts if r[0] < slot)
            after = min(r for r in ref_pts if r[0] > slot)
            w = (slot - before[0]) / (after[0] - before[0])
            ref = (1 - w) * before[1] + w * after[1]
            est[c] = val * (noise + 0.5) / ref - (noise + 0.5)
        return est

    est = run(C.interlace_plan(conds))
    for c in conds:
        assert est[c] == pytest.approx(true_n[c], abs=1e-12)
    # a single leading reference leaves a drift bias
    slot_vals = {c: (k + 1, measure(k + 1)) for k, c in enumerate(conds)}
    naive = {c: g * (noise + 0.5 + true_n[c]) / measure(0) - (noise + 0.5) for c, (s, g) in slot_vals.items()}
    assert max(abs(naive[c] - true_n[c]) for c in conds) > 0.01
