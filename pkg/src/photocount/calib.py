"""Shot-noise thermometry of the detection chain.

The digitized one-sided voltage density at frequency ``f`` and dc current
``I`` is modeled as ``PSD = a(f) S2(f, I R, Te) + b(f)`` where
``a = G Z R / 2`` and ``b = G Z k T_N``. For a fixed ``Te`` the model is
linear in ``(a, b)`` per bin, so ``Te`` is fitted by variable projection:
a coarse scan followed by a local least-squares refinement of the
projected residual.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import e as ELECTRON, k as BOLTZMANN
from scipy.optimize import least_squares

from .errors import ConfigurationError
from .junction import s2

logger = logging.getLogger(__name__)

MIN_BIAS_POINTS = 7
MIN_CROSSOVER = 5.0


@dataclass
class CalibResult:
    freqs: np.ndarray
    gain_db: np.ndarray
    noise_temp: np.ndarray
    Te: float
    Te_err: float
    Te_per_bin: np.ndarray
    residual_rms: float
    param_cov: np.ndarray = field(repr=False)
    impedance: float = 50.0
    R: float = 52.5

    @property
    def Te_scatter(self) -> float:
        return float(np.std(self.Te_per_bin))

    def inverse_gain(self, f):
        """``1/|g(f)|`` interpolated from the fitted power gain."""
        g_db = np.interp(np.asarray(f, dtype=float), self.freqs, self.gain_db)
        return 10 ** (-g_db / 20)

    def to_json(self, path=None, **extra) -> str | None:
        payload = {"Te": self.Te, "Te_err": self.Te_err, "Te_scatter": self.Te_scatter,
                   "residual_rms": self.residual_rms, "R": self.R, "impedance": self.impedance,
                   "freqs": self.freqs.tolist(), "gain_db": self.gain_db.tolist(),
                   "noise_temp": self.noise_temp.tolist(), "Te_per_bin": self.Te_per_bin.tolist()}
        payload.update(extra)
        text = json.dumps(payload, indent=2)
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None

    def to_csv(self, path=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["f", "gain_db", "noise_temp", "Te_bin"])
        for row in zip(self.freqs, self.gain_db, self.noise_temp, self.Te_per_bin):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None


def synthetic_spectra(freqs, idc, R: float = 52.5, Te: float = 0.0174, gain_db=70.0, noise_temp=4.0,
                      impedance: float = 50.0, rel_noise: float = 0.0, rng=None) -> np.ndarray:
    """PSD grid of shape ``(len(idc), len(freqs))`` from the fit model.

    ``gain_db`` and ``noise_temp`` may be scalars or arrays over ``freqs``.
    ``rel_noise`` adds Gaussian scatter relative to each point.
    """
    f = np.asarray(freqs, dtype=float)
    i = np.asarray(idc, dtype=float)
    g = 10 ** (np.broadcast_to(np.asarray(gain_db, dtype=float), f.shape) / 10)
    tn = np.broadcast_to(np.asarray(noise_temp, dtype=float), f.shape)
    a = g * impedance * R / 2
    b = g * impedance * BOLTZMANN * tn
    psd = a * s2(f[None, :], i[:, None] * R, R=R, Te=Te) + b
    if rel_noise:
        rng = rng if rng is not None else np.random.default_rng()
        psd = psd * (1 + rel_noise * rng.standard_normal(psd.shape))
    return psd


def _design(f, idc, R, Te):
    return s2(f[None, :], idc[:, None] * R, R=R, Te=Te)


def _project(psd_n, f, idc, R, Te):
    """Per-bin linear solve for ``(a, b)`` at fixed ``Te`` on normalized data."""
    shot = _design(f, idc, R, Te)
    shot_n = shot / shot.max(axis=0)
    coefs = np.empty((f.size, 2))
    res = np.empty_like(psd_n)
    for k in range(f.size):
        A = np.column_stack([shot_n[:, k], np.ones(idc.size)])
        c, *_ = np.linalg.lstsq(A, psd_n[:, k], rcond=None)
        coefs[k] = c
        res[:, k] = A @ c - psd_n[:, k]
    return coefs, res, shot.max(axis=0)


def fit_thermometry(freqs, idc, psd, R: float = 52.5, impedance: float = 50.0,
                    te_grid=None) -> CalibResult:
    """Fit gain, noise temperature and a shared electron temperature.

    Parameters
    ----------
    freqs : array (n_f,)
        Bin frequencies in Hz.
    idc : array (n_i,)
        Dc currents in A.
    psd : array (n_i, n_f)
        Measured one-sided densities, any consistent unit.
    """
    f = np.asarray(freqs, dtype=float)
    i = np.asarray(idc, dtype=float)
    y = np.asarray(psd, dtype=float)
    if y.shape != (i.size, f.size):
        raise ConfigurationError("psd must have shape (len(idc), len(freqs))")
    if f.size < 2:
        raise ConfigurationError("need at least two frequency bins")
    if np.unique(i).size < MIN_BIAS_POINTS:
        raise ConfigurationError(f"need at least {MIN_BIAS_POINTS} distinct bias points")
    scale = np.abs(y).max(axis=0)
    yn = y / scale
    grid = np.geomspace(1e-3, 1.0, 121) if te_grid is None else np.asarray(te_grid, dtype=float)
    cost = [np.sum(_project(yn, f, i, R, t)[1] ** 2) for t in grid]
    te0 = float(grid[int(np.argmin(cost))])
    if ELECTRON * np.abs(i).max() * R < MIN_CROSSOVER * BOLTZMANN * te0:
        raise ConfigurationError("bias range too narrow: thermal-to-shot crossover not observed")

    def residual(p):
        return _project(yn, f, i, R, p[0] * 1e-3)[1].ravel()

    sol = least_squares(residual, [te0 * 1e3], bounds=([1e-3], [1e4]), x_scale=[te0 * 1e3],
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    te = float(sol.x[0]) * 1e-3
    coefs, res, smax = _project(yn, f, i, R, te)
    dof = max(res.size - 1 - 2 * f.size, 1)
    s2_res = float(np.sum(res ** 2) / dof)
    jac = sol.jac
    jtj = float(np.sum(jac ** 2)) if jac.size else 0.0
    te_err = math.sqrt(s2_res / jtj) * 1e-3 if jtj > 0 else float("nan")

    a = coefs[:, 0] * scale / smax
    b = coefs[:, 1] * scale
    gain = a * 2 / (impedance * R)
    if np.any(gain <= 0):
        raise ConfigurationError("fitted gain is not positive")
    tn = b * R / (2 * BOLTZMANN * a)
    cov = np.empty((f.size, 2, 2))
    for k in range(f.size):
        shot_n = _design(f[k:k + 1], i, R, te)[:, 0] / smax[k]
        A = np.column_stack([shot_n, np.ones(i.size)])
        sk = np.sum(res[:, k] ** 2) / max(i.size - 2, 1)
        ck = sk * np.linalg.pinv(A.T @ A)
        d = np.diag([scale[k] / smax[k], scale[k]])
        cov[k] = d @ ck @ d

    per_bin = np.empty(f.size)
    for k in range(f.size):
        def rk(p, k=k):
            return _project(yn[:, k:k + 1], f[k:k + 1], i, R, p[0] * 1e-3)[1].ravel()
        per_bin[k] = least_squares(rk, [te * 1e3], bounds=([1e-3], [1e4]), xtol=1e-14,
                                   ftol=1e-14, gtol=1e-14).x[0] * 1e-3

    fitted = yn + res
    rms = float(np.sqrt(np.mean((res / fitted) ** 2)))
    logger.info("thermometry: Te = %.4g mK, residual rms %.3g", te * 1e3, rms)
    return CalibResult(f, 10 * np.log10(gain), tn, te, te_err, per_bin, rms, cov, impedance, R)


def read_spectra_csv(path):
    """Read ``f, Idc, PSD`` rows into ``(freqs, idc, psd grid)``."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    f_all, i_all, p_all = data[names[0]], data[names[1]], data[names[2]]
    freqs, idc = np.unique(f_all), np.unique(i_all)
    grid = np.full((idc.size, freqs.size), np.nan)
    grid[np.searchsorted(idc, i_all), np.searchsorted(freqs, f_all)] = p_all
    if np.isnan(grid).any():
        raise ConfigurationError("spectra CSV does not fill a full (f, Idc) grid")
    return freqs, idc, grid


def write_spectra_csv(path, freqs, idc, psd) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "Idc", "PSD"])
        for a, i in enumerate(idc):
            for b, f in enumerate(freqs):
                w.writerow([repr(float(f)), repr(float(i)), repr(float(psd[a, b]))])


def interlace_plan(conditions, ref_period: int = 1) -> list:
    """Acquisition order alternating references ``'R'`` with conditions.

    ``['c1', 'c2', 'c3']`` with period 1 gives ``R c1 R c2 R c3 R``.
    """
    if ref_period < 1:
        raise ConfigurationError("ref_period must be at least 1")
    conditions = list(conditions)
    if not conditions:
        return []
    plan = ["R"]
    for start in range(0, len(conditions), ref_period):
        plan.extend(conditions[start:start + ref_period])
        plan.append("R")
    return plan
