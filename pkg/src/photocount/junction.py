"""Noise of an ac+dc biased tunnel junction and the photon statistics it predicts.

Conventions
-----------
``s2`` is the symmetrized current noise density ``S2 = (1/2)[s(f + eV/h) +
s(f - eV/h)]`` with ``s(nu) = (h nu / R) coth(h nu / 2 k Te)``. The
occupancy of a monochromatic mode is ``n = S2 R / (2 h f) - 1/2``, which is
the Bose-Einstein law at equilibrium. Under an ac drive at ``f_p`` every
quantity becomes a Bessel-weighted sum over voltage sidebands ``V + k h f_p / e``.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.constants import e as ELECTRON, h as PLANCK, k as BOLTZMANN

from .errors import ConfigurationError, PhysicalityError
from .modes import ModeSpec, make_bichromatic, mirror

logger = logging.getLogger(__name__)

BESSEL_TAIL = 1e-12
PHYSICALITY_TOL = 1e-9


@dataclass(frozen=True)
class JunctionModel:
    """Tunnel junction biased by ``Vdc`` plus an rms ac current at ``f_p``."""

    R: float = 52.5
    Te: float = 0.017
    Vdc: float = 0.0
    Iac_rms: float = 0.0
    f_p: float = 12.0e9

    def __post_init__(self):
        if not (self.R > 0 and self.Te > 0 and self.f_p > 0):
            raise ConfigurationError("R, Te and f_p must be positive")
        if self.Iac_rms < 0:
            raise ConfigurationError("Iac_rms must be non-negative")

    @property
    def z(self) -> float:
        """Photoassisted parameter ``e V_ac / (h f_p)`` with ``V_ac = sqrt(2) Iac R``."""
        return ELECTRON * self.Iac_rms * self.R * math.sqrt(2.0) / (PLANCK * self.f_p)

    @property
    def nu0(self) -> float:
        return ELECTRON * self.Vdc / PLANCK

    def with_bias(self, **kw) -> "JunctionModel":
        params = dict(R=self.R, Te=self.Te, Vdc=self.Vdc, Iac_rms=self.Iac_rms, f_p=self.f_p)
        params.update(kw)
        return JunctionModel(**params)

    @classmethod
    def squeezing_point(cls, **kw) -> "JunctionModel":
        """Squeezing point: ``Vdc = h f_p / 2e`` with 0.43 uA rms drive."""
        f_p = kw.pop("f_p", 12.0e9)
        params = dict(R=52.5, Te=0.017, Vdc=PLANCK * f_p / (2 * ELECTRON), Iac_rms=0.43e-6, f_p=f_p)
        params.update(kw)
        return cls(**params)


def _x_coth_x(x):
    """``x coth(x)`` with its limit 1 at 0."""
    x = np.abs(np.asarray(x, dtype=float))
    small = x < 1e-6
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 3.0, safe / np.tanh(safe))


def spectral_density(nu, R: float, Te: float):
    """``s(nu) = (h nu / R) coth(h nu / 2 k Te)``, even in ``nu``; ``2 k Te / R`` at 0."""
    x = PLANCK * np.asarray(nu, dtype=float) / (2 * BOLTZMANN * Te)
    return 2 * BOLTZMANN * Te / R * _x_coth_x(x)


def s2(f, V, model: JunctionModel | None = None, *, R: float | None = None, Te: float | None = None):
    """Symmetrized current noise density in A^2/Hz at frequency ``f`` and dc voltage ``V``."""
    R = R if R is not None else model.R
    Te = Te if Te is not None else model.Te
    f = np.asarray(f, dtype=float)
    nu = ELECTRON * np.asarray(V, dtype=float) / PLANCK
    return 0.5 * (spectral_density(f + nu, R, Te) + spectral_density(f - nu, R, Te))


def bessel_orders(z: float) -> np.ndarray:
    """Sideband orders ``|k| <= max(10, ceil(3 z))``, widened until the tail is below 1e-12."""
    n_max = max(10, int(math.ceil(3 * z)))
    while True:
        k = np.arange(-n_max, n_max + 1)
        if 1.0 - np.sum(special.jv(k, z) ** 2) < BESSEL_TAIL:
            return k
        n_max *= 2


def occupancy(f, model: JunctionModel, z: float | None = None):
    """Photoassisted occupancy ``n(f)`` of the monochromatic mode at ``f > 0``."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ConfigurationError("occupancy needs f > 0")
    z = model.z if z is None else z
    total = np.zeros_like(f)
    if z == 0:
        total = s2(f, model.Vdc, model)
    else:
        for k in bessel_orders(z):
            w = special.jv(k, z) ** 2
            total = total + w * s2(f, model.Vdc + k * PLANCK * model.f_p / ELECTRON, model)
    return total * model.R / (2 * PLANCK * f) - 0.5


def pair_correlator(f, model: JunctionModel, z: float | None = None):
    """``m(f) = <a(f) a(f_p - f)>`` per unit bandwidth, for ``0 < f < f_p``.

    ``X(f) = (1/2) sum_k J_k J_{k-1} [s(f - nu0 - k f_p) - s(f + nu0 - k f_p)]``
    is the photoassisted cross-correlator of current fluctuations at ``f``
    and ``f_p - f`` and ``m = X R / (2 h sqrt(f (f_p - f)))``. Real with
    this phase convention.
    """
    f = np.asarray(f, dtype=float)
    if np.any((f <= 0) | (f >= model.f_p)):
        raise ConfigurationError("pair correlator needs 0 < f < f_p")
    z = model.z if z is None else z
    x = np.zeros_like(f)
    if z != 0:
        ks = bessel_orders(z)
        ks = np.append(ks, ks[-1] + 1)
        for k in ks:
            w = special.jv(k, z) * special.jv(k - 1, z)
            if w == 0:
                continue
            x = x + w * (spectral_density(f - model.nu0 - k * model.f_p, model.R, model.Te)
                         - spectral_density(f + model.nu0 - k * model.f_p, model.R, model.Te))
        x = 0.5 * x
    return (x * model.R / (2 * PLANCK * np.sqrt(f * (model.f_p - f)))).astype(complex)


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Gaussian state of the line: ``n(f)`` and pair amplitude ``m(f)`` between
    ``f`` and ``f_p - f`` on an increasing frequency grid."""

    freqs: np.ndarray
    n_bar: np.ndarray
    m_bar: np.ndarray | None = None
    f_p: float | None = None
    label: str = ""

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float).ravel()
        n = np.asarray(self.n_bar, dtype=float).ravel()
        if f.size != n.size or f.size < 2 or np.any(np.diff(f) <= 0):
            raise ConfigurationError("state grid must be increasing and match n_bar")
        if np.any(n < -PHYSICALITY_TOL):
            raise PhysicalityError("negative occupancy")
        m = np.zeros(f.size, complex) if self.m_bar is None else np.asarray(self.m_bar, complex).ravel()
        if m.size != f.size:
            raise ConfigurationError("m_bar must match the grid")
        if np.any(m != 0) and self.f_p is None:
            raise ConfigurationError("pair amplitudes need f_p")
        for name, arr in (("freqs", f), ("n_bar", n), ("m_bar", m)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def has_pairs(self) -> bool:
        return bool(np.any(self.m_bar != 0))

    def n_at(self, f):
        return np.interp(np.asarray(f, dtype=float), self.freqs, self.n_bar)

    def m_at(self, f):
        f = np.asarray(f, dtype=float)
        if not self.has_pairs:
            return np.zeros(f.shape, complex)
        inside = (f > 0) & (f < self.f_p)
        re = np.interp(f, self.freqs, self.m_bar.real)
        im = np.interp(f, self.freqs, self.m_bar.imag)
        return np.where(inside, re + 1j * im, 0.0)

    def check_physical(self, tol: float = PHYSICALITY_TOL) -> float:
        """Largest violation of ``|m(f)|^2 <= n(f) (n(f_p - f) + 1)``; raises if above ``tol``."""
        if not self.has_pairs:
            return 0.0
        f = self.freqs[(self.freqs > 0) & (self.freqs < self.f_p)]
        excess = np.abs(self.m_at(f)) ** 2 - self.n_at(f) * (self.n_at(self.f_p - f) + 1)
        worst = float(excess.max(initial=0.0))
        if worst > tol:
            raise PhysicalityError(f"pair amplitude exceeds the Cauchy-Schwarz bound by {worst:.3g}")
        return worst

    @classmethod
    def from_model(cls, model: JunctionModel, freqs, check: bool = True) -> "SpectralState":
        freqs = np.asarray(freqs, dtype=float)
        n = occupancy(freqs, model)
        inside = (freqs > 0) & (freqs < model.f_p)
        m = np.zeros(freqs.size, complex)
        if model.z != 0:
            m[inside] = pair_correlator(freqs[inside], model)
        state = cls(freqs, np.clip(n, 0.0, None), m, model.f_p, "junction")
        if check:
            state.check_physical()
        return state

    @classmethod
    def thermal(cls, n, f_max: float = 16.0e9, grid_spacing: float = 5e6) -> "SpectralState":
        """Flat occupancy ``n`` over ``(0, f_max]``; no pairs."""
        freqs = (np.arange(int(round(f_max / grid_spacing))) + 0.5) * grid_spacing
        return cls(freqs, np.full(freqs.size, float(n)), None, None, f"thermal n={n:g}")

    @classmethod
    def flat_pairs(cls, n, m, f_p: float = 12.0e9, f_max: float = 16.0e9, grid_spacing: float = 5e6,
                   band=None) -> "SpectralState":
        """Flat ``n`` and ``m`` inside ``band`` (default ``(0, f_p)``), vacuum outside."""
        freqs = (np.arange(int(round(f_max / grid_spacing))) + 0.5) * grid_spacing
        lo, hi = band if band is not None else (0.0, f_p)
        inside = (freqs > lo) & (freqs < hi) & (freqs < f_p)
        # keep the band symmetric under f -> f_p - f
        inside &= (f_p - freqs > lo) & (f_p - freqs < hi)
        n_bar = np.where(inside, float(n), 0.0)
        m_bar = np.where(inside, complex(m), 0.0)
        return cls(freqs, n_bar, m_bar, f_p, f"flat n={n:g} m={m:g}")

    def to_csv(self, path_or_buf=None):
        buf = io.StringIO()
        buf.write(f"# f_p: {float(self.f_p)!r}\n# label: {self.label}\n")
        buf.write("f,n_bar,re_m_bar,im_m_bar\n")
        for f, n, m in zip(self.freqs, self.n_bar, self.m_bar):
            buf.write(f"{float(f)!r},{float(n)!r},{float(m.real)!r},{float(m.imag)!r}\n")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_text) -> "SpectralState":
        if isinstance(path_or_text, str) and "\n" in path_or_text:
            text = path_or_text
        else:
            with open(path_or_text) as fh:
                text = fh.read()
        meta, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line and not line.startswith("f,"):
                rows.append([float(x) for x in line.split(",")])
        arr = np.array(rows)
        f_p = None if meta.get("f_p", "None") == "None" else float(meta["f_p"])
        return cls(arr[:, 0], arr[:, 1], arr[:, 2] + 1j * arr[:, 3], f_p, meta.get("label", ""))


def quadratic_dispersion(total: float = 5 * math.pi, f_lo: float = 1e9, f_hi: float = 10e9):
    """Phase ``alpha (f - f_lo)^2`` rising by ``total`` radians between ``f_lo`` and ``f_hi``."""
    alpha = total / (f_hi - f_lo) ** 2

    def phase(f):
        return alpha * (np.asarray(f, dtype=float) - f_lo) ** 2

    phase.alpha = alpha
    return phase


@dataclass(frozen=True)
class Prediction:
    n: float
    m: float
    V_minus: float
    V_plus: float

    @property
    def squeezing_db(self) -> float:
        return 10 * math.log10(self.V_minus / 0.5) if self.V_minus > 0 else -math.inf

    @property
    def var_n(self) -> float:
        return self.n * (self.n + 1) + self.m ** 2


def _phased(mode: ModeSpec, dispersion) -> np.ndarray:
    vals = np.asarray(mode.values)
    if dispersion is not None:
        vals = vals * np.exp(1j * np.asarray(dispersion(mode.frequencies), dtype=float))
    return vals


def pair_moment(a: ModeSpec, b: ModeSpec, state: SpectralState, dispersion=None) -> complex:
    """``<a b>`` for two modes: ``sum beta_a(f) beta_b(f_p - f) m(f) df``."""
    if not state.has_pairs:
        return 0j
    if abs(a.grid_spacing - b.grid_spacing) > 1e-12 * a.grid_spacing:
        raise ConfigurationError("modes live on different grids")
    kp = int(round(state.f_p / a.grid_spacing))
    pb = ModeSpec(b.grid_spacing, _phased(b, dispersion))
    mb = mirror(pb, state.f_p).values
    va = _phased(a, dispersion)
    n = min(va.size, kp)
    f = a.frequencies[:n]
    return complex(np.sum(va[:n] * mb[:n] * state.m_at(f)) * a.grid_spacing)


def predict(mode: ModeSpec, state: SpectralState, dispersion=None) -> Prediction:
    """Mean occupancy, pair amplitude and quadrature variances of ``mode``.

    ``m = |<b^2>|`` uses the global phase that makes ``<b^2>`` real and
    positive; ``V_minus = n + 1/2 - m``.
    """
    f = mode.frequencies
    nz = np.flatnonzero(mode.values)
    if nz.size and f[nz[-1]] > state.freqs[-1] + mode.grid_spacing:
        raise ConfigurationError("mode extends beyond the state grid")
    w = np.abs(mode.values) ** 2
    n = float(np.sum(w * state.n_at(f)) * mode.grid_spacing / mode.norm)
    m = abs(pair_moment(mode, mode, state, dispersion)) / mode.norm
    return Prediction(n, m, n + 0.5 - m, n + 0.5 + m)


def lambda_sweep(f1: float, f2: float, bandwidth: float, state: SpectralState, lams,
                 shape: str = "rect", dispersion=None, **mode_kw):
    """``predict`` for the lambda-weighted modes between ``f1`` and ``f2``."""
    out = [predict(make_bichromatic(f1, f2, bandwidth, lam, shape=shape, **mode_kw), state, dispersion)
           for lam in lams]
    return out


def effective_frequency(model: JunctionModel, Idc, f1: float, f2: float, floor: float = 1e-12):
    """``<H>/(h <N>) = (f1 n1 + f2 n2)/(n1 + n2)`` against dc current.

    Bias points where both occupancies are below ``floor`` are omitted.
    Returns the retained currents and their effective frequencies.
    """
    Idc = np.atleast_1d(np.asarray(Idc, dtype=float))
    keep, out = [], []
    for i in Idc:
        m = model.with_bias(Vdc=i * model.R)
        n1, n2 = occupancy(np.array([f1, f2]), m)
        if n1 + n2 <= floor:
            continue
        keep.append(i)
        out.append((f1 * n1 + f2 * n2) / (n1 + n2))
    return np.array(keep), np.array(out)


def bose_einstein(f, Te: float):
    return 1.0 / np.expm1(PLANCK * np.asarray(f, dtype=float) / (BOLTZMANN * Te))
