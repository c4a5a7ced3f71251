"""Quadrature kernels turning sampled voltage into dimensionless quadratures.

The continuum kernel is ``k(t) = 1/sqrt(Z h |t|)``; sampling at ``dt``
band-limits it to the Nyquist frequency ``f_N = 1/(2 dt)``, which removes
the pole at ``t = 0``. Its frequency response has modulus
``1/sqrt(Z h |f|)``; the ``theta = 0`` kernel is odd in time and yields the
in-phase quadrature, the ``theta = pi/2`` kernel is even and yields the
out-of-phase one.
"""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.constants import h as PLANCK

from .errors import ConfigurationError
from .modes import ModeSpec

THETA_X = 0.0
THETA_P = math.pi / 2


def fresnel(u):
    """Fresnel integrals ``(C(u), S(u))`` with the ``pi x^2 / 2`` convention."""
    s, c = special.fresnel(u)
    return c, s


@dataclass(frozen=True)
class KernelConfig:
    sample_rate: float = 32.0e9
    n_taps: int = 257
    impedance: float = 50.0
    theta: float = THETA_X

    def __post_init__(self):
        if self.n_taps < 1 or self.n_taps % 2 == 0:
            raise ConfigurationError("n_taps must be a positive odd integer")
        if self.sample_rate <= 0 or self.impedance <= 0:
            raise ConfigurationError("sample_rate and impedance must be positive")
        if not (math.isclose(self.theta, THETA_X, abs_tol=1e-12)
                or math.isclose(self.theta, THETA_P, abs_tol=1e-12)):
            raise ConfigurationError("theta must be 0 or pi/2")

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def is_p(self) -> bool:
        return math.isclose(self.theta, THETA_P, abs_tol=1e-12)


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Tap array centred on ``center_index``; output sample ``t`` is
    ``sum_n taps[center + n] * v[t - n]`` (non-causal)."""

    taps: np.ndarray
    config: KernelConfig
    provenance: str = ""
    window_energy: float = 1.0
    mode: ModeSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).ravel()
        if taps.size != self.config.n_taps:
            raise ConfigurationError("tap count does not match config")
        if not np.all(np.isfinite(taps)):
            raise ConfigurationError("non-finite taps")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def center_index(self) -> int:
        return (self.config.n_taps - 1) // 2

    @property
    def sample_rate(self) -> float:
        return self.config.sample_rate

    @property
    def kernel_id(self) -> str:
        hsh = hashlib.sha1(self.taps.tobytes())
        hsh.update(repr(self.config.sample_rate).encode())
        return hsh.hexdigest()[:16]

    def response(self, freqs) -> np.ndarray:
        """Frequency response ``sum_n taps[n] exp(-2 pi i f n dt)`` about the centre."""
        n = np.arange(-self.center_index, self.center_index + 1)
        f = np.atleast_1d(np.asarray(freqs, dtype=float))
        return np.exp(-2j * np.pi * np.outer(f, n) * self.config.dt) @ self.taps

    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        buf.write(f"# provenance: {self.provenance}\n")
        buf.write(f"# sample_rate: {self.config.sample_rate!r}\n")
        buf.write(f"# theta: {self.config.theta!r}\n")
        buf.write(f"# impedance: {self.config.impedance!r}\n")
        buf.write("index,tap\n")
        for n, tap in zip(range(-self.center_index, self.center_index + 1), self.taps):
            buf.write(f"{n},{float(tap)!r}\n")
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
    def from_csv(cls, path_or_text) -> "DiscreteKernel":
        if isinstance(path_or_text, str) and "\n" in path_or_text:
            text = path_or_text
        else:
            with open(path_or_text) as fh:
                text = fh.read()
        header, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                header[key.strip()] = val.strip()
            elif line and not line.startswith("index"):
                _, tap = line.split(",")
                rows.append(float(tap))
        cfg = KernelConfig(sample_rate=float(header["sample_rate"]), n_taps=len(rows),
                           impedance=float(header.get("impedance", 50.0)),
                           theta=float(header.get("theta", 0.0)))
        return cls(np.array(rows), cfg, header.get("provenance", ""))


def quadrature_kernel(cfg: KernelConfig) -> DiscreteKernel:
    """Band-limited samples ``k(n dt)`` of the bare quadrature kernel.

    These are values of the continuous kernel (units 1/(V s)); multiplied
    by ``dt`` they act as a voltage-to-quadrature filter with no mode
    selection.
    """
    m = cfg.center_index if hasattr(cfg, "center_index") else (cfg.n_taps - 1) // 2
    n = np.arange(-m, m + 1)
    amp = 2.0 * math.sqrt(2.0 * cfg.nyquist / (cfg.impedance * PLANCK))
    an = np.abs(n)
    safe = np.where(an == 0, 1, an)
    c, s = fresnel(np.sqrt(2.0 * an))
    if cfg.is_p:
        taps = np.where(an == 0, math.sqrt(2.0), c / np.sqrt(safe))
    else:
        taps = np.where(an == 0, 0.0, np.sign(n) * s / np.sqrt(safe))
    return DiscreteKernel(amp * taps, cfg, provenance=f"bare kernel theta={cfg.theta:g}")


def kernel_response(f, cfg: KernelConfig) -> np.ndarray:
    """Continuum frequency response of the bare kernel at positive ``f``."""
    f = np.asarray(f, dtype=float)
    mag = 1.0 / np.sqrt(cfg.impedance * PLANCK * f)
    return mag if cfg.is_p else -1j * mag


def _inverse_gain_at(inverse_gain, mode: ModeSpec, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if inverse_gain is None:
        return np.ones_like(f)
    if callable(inverse_gain):
        return np.abs(np.asarray(inverse_gain(f), dtype=float)) * np.ones_like(f)
    arr = np.abs(np.asarray(inverse_gain, dtype=float))
    if arr.ndim == 0:
        return np.full_like(f, float(arr))
    if arr.size != mode.values.size:
        raise ConfigurationError("inverse gain must be sampled on the mode grid")
    return np.interp(f, mode.frequencies, arr)


def compose(mode: ModeSpec, quad: DiscreteKernel, inverse_gain=None, *,
            dc_guard: float = 100e6, window: str | None = None,
            normalize: bool = True) -> DiscreteKernel:
    """Taps for ``k * beta * |g|^-1`` truncated to the quad kernel length.

    The product ``k(f) beta(f) / |g(f)|`` is built per frequency bin and
    inverse transformed onto the tap grid, then truncated symmetrically.
    Only the modulus of the gain enters. With ``normalize`` the taps are
    rescaled so the mode actually realized by the truncated filter has unit
    norm, which pins vacuum fluctuations to ``<x^2> = 1/2``.
    ``inverse_gain`` is ``None``, a scalar, a callable of frequency, or an
    array on the mode grid.
    """
    cfg = quad.config
    f = mode.frequencies
    nz = np.flatnonzero(mode.values)
    if nz.size == 0:
        raise ConfigurationError("empty mode")
    fk, bk = f[nz], mode.values[nz]
    if fk[0] - mode.grid_spacing / 2 < dc_guard:
        raise ConfigurationError(f"mode {mode.label!r} has weight below the dc guard {dc_guard:g} Hz")
    if fk[-1] + mode.grid_spacing / 2 > cfg.nyquist:
        raise ConfigurationError(f"mode {mode.label!r} extends beyond Nyquist")
    ig = _inverse_gain_at(inverse_gain, mode, fk)
    if not np.all(np.isfinite(ig)):
        raise ConfigurationError("gain vanishes inside the mode support")
    hk = kernel_response(fk, cfg) * bk * ig
    m = (cfg.n_taps - 1) // 2
    n = np.arange(-m, m + 1)
    phase = np.exp(2j * np.pi * np.outer(n, fk) * cfg.dt)
    taps = 2.0 * cfg.dt * mode.grid_spacing * np.real(phase @ hk)
    full_energy = 2.0 * cfg.dt * mode.grid_spacing * float(np.sum(np.abs(hk) ** 2))
    window_energy = float(np.sum(taps ** 2) / full_energy)
    if window is not None:
        taps = taps * _taper(window, cfg.n_taps)
    kern = DiscreteKernel(taps, cfg, provenance=f"{mode.label} theta={cfg.theta:g}",
                          window_energy=window_energy, mode=mode)
    if normalize:
        norm = realized_norm(kern, inverse_gain)
        kern = DiscreteKernel(taps / math.sqrt(norm), cfg, kern.provenance,
                              window_energy, mode, {"realized_norm_before": norm})
    return kern


def _taper(name: str, n: int) -> np.ndarray:
    if name in ("rect", "boxcar"):
        return np.ones(n)
    if name == "hann":
        return np.hanning(n + 2)[1:-1]
    if name == "blackman":
        return np.blackman(n + 2)[1:-1]
    raise ConfigurationError(f"unknown window {name!r}")


def _dense_response(kern: DiscreteKernel, n_fft: int):
    cfg = kern.config
    m = kern.center_index
    buf = np.zeros(n_fft)
    buf[: cfg.n_taps] = kern.taps
    resp = np.fft.rfft(buf) * np.exp(2j * np.pi * np.arange(n_fft // 2 + 1) * m / n_fft)
    freqs = np.fft.rfftfreq(n_fft, cfg.dt)
    return freqs, resp


def realized_norm(kern: DiscreteKernel, inverse_gain=None, n_fft: int | None = None) -> float:
    """Norm of the mode the taps actually select, ``int |beta_eff|^2 df``."""
    cfg = kern.config
    n_fft = n_fft or max(1 << 16, 64 * cfg.n_taps)
    freqs, resp = _dense_response(kern, n_fft)
    f = freqs[1:]
    ig = _inverse_gain_at(inverse_gain, kern.mode, f) if kern.mode is not None or inverse_gain is None \
        else np.abs(inverse_gain(f))
    dens = np.abs(resp[1:]) ** 2 * cfg.impedance * PLANCK * f / ig ** 2
    # trapezoid over (0, f_N]; the f = 0 end has zero weight
    df = freqs[1] - freqs[0]
    return float((dens.sum() - 0.5 * dens[-1]) * df)


def realized_mode(kern: DiscreteKernel, grid_spacing: float | None = None, inverse_gain=None,
                  gain_phase=None) -> ModeSpec:
    """Mode ``beta_eff(f) = H(f) |g(f)| e^{i phi(f)} / k(f)`` seen by the taps.

    ``gain_phase`` (callable of Hz) adds the chain's phase response so the
    result is the mode referred to the sample.
    """
    cfg = kern.config
    spacing = grid_spacing or (kern.mode.grid_spacing if kern.mode is not None else 5e6)
    n_bins = int(cfg.nyquist // spacing)
    f = (np.arange(n_bins) + 0.5) * spacing
    ref = kern.mode if kern.mode is not None else ModeSpec(spacing, np.zeros(1))
    ig = _inverse_gain_at(inverse_gain, ref, f) if not callable(inverse_gain) else np.abs(inverse_gain(f))
    vals = kern.response(f) / (kernel_response(f, cfg) * ig)
    if gain_phase is not None:
        vals = vals * np.exp(1j * np.asarray(gain_phase(f), dtype=float))
    label = kern.mode.label if kern.mode is not None else kern.provenance
    return ModeSpec(spacing, vals, f"realized({label})")
