"""Synthetic digitizer traces of a Gaussian microwave state.

Each segment is built in the frequency domain on the rfft grid
``f_k = k fs / N``. The complex amplitude ``A_k`` of bin ``k`` has
``<|A_k|^2> = n(f_k) + 1/2`` (vacuum as a classical half quantum) and
``<A_k A_k'> = m(f_k)`` for the partner bin ``k' = k_p - k``. The voltage
bin is ``v_k = i sqrt(Z h f_k / 2) sqrt(df) A_k`` in the ``exp(+2 pi i f t)``
convention of the inverse FFT. Segments are periodic and independent, so
analysis must use the same segment boundaries.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import h as PLANCK, k as BOLTZMANN

from .dsp import DEFAULT_SEGMENT_LENGTH, TraceSegment
from .errors import ConfigurationError, PhysicalityError
from .junction import PHYSICALITY_TOL, SpectralState

logger = logging.getLogger(__name__)

CLIP_WARN_FRACTION = 0.01


def segment_rng(seed: int, sequence_id: int) -> np.random.Generator:
    """Generator for one segment: ``SeedSequence(seed, spawn_key=(sequence_id,))``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(sequence_id,)))


def _complex_normal(rng, size):
    z = rng.standard_normal((2, size))
    return (z[0] + 1j * z[1]) * math.sqrt(0.5)


def bin_amplitudes(state: SpectralState, n_samples: int, sample_rate: float, rng,
                   bound: str = "quantum") -> np.ndarray:
    """Dimensionless amplitudes ``A_k`` for ``k = 0 .. N/2`` (dc and Nyquist zero).

    ``bound`` selects the admissibility check for pair amplitudes:
    ``'quantum'`` enforces ``|m|^2 <= n (n' + 1)``, ``'classical'`` only
    ``|m|^2 <= (n + 1/2)(n' + 1/2)`` which is all the sampler needs.
    """
    if n_samples % 2:
        raise ConfigurationError("segment length must be even")
    nf = n_samples // 2 + 1
    df = sample_rate / n_samples
    f = np.arange(nf) * df
    if state.freqs[-1] + (state.freqs[1] - state.freqs[0]) < f[-1] * (1 - 1e-9):
        raise ConfigurationError("state grid does not cover the Nyquist band")
    s = np.zeros(nf)
    s[1:-1] = state.n_at(f[1:-1]) + 0.5
    amps = np.zeros(nf, complex)
    if not state.has_pairs:
        amps[1:-1] = np.sqrt(s[1:-1]) * _complex_normal(rng, nf - 2)
        return amps
    kp = state.f_p / df
    if abs(kp - round(kp)) > 1e-6:
        raise ConfigurationError("f_p must fall on the synthesis grid (N f_p / fs integer)")
    kp = int(round(kp))
    k = np.arange(1, nf - 1)
    partner = kp - k
    paired = (partner >= 1) & (partner <= nf - 2)
    lo = k[paired & (k < partner)]
    hi = kp - lo
    mid = k[paired & (k == partner)]
    single = k[~paired]
    # m(f) = m(f_p - f); the smaller interpolant keeps grid-edge bins admissible
    m_lo, m_hi = state.m_at(f[lo]), state.m_at(f[hi])
    m = np.where(np.abs(m_lo) <= np.abs(m_hi), m_lo, m_hi)
    s1, s2 = s[lo], s[hi]
    n1, n2 = s1 - 0.5, s2 - 0.5
    excess = np.abs(m) ** 2 - (n1 * (n2 + 1) if bound == "quantum" else s1 * s2)
    if excess.size and excess.max() > PHYSICALITY_TOL:
        raise PhysicalityError(f"pair amplitude violates the {bound} bound by {excess.max():.3g}")
    z1 = _complex_normal(rng, lo.size)
    z2 = _complex_normal(rng, lo.size)
    d = np.sqrt(np.clip(s2 - np.abs(m) ** 2 / s1, 0.0, None))
    amps[lo] = np.sqrt(s1) * z1
    amps[hi] = m / np.sqrt(s1) * np.conj(z1) + d * z2
    if mid.size:
        sm, mm = s[mid], state.m_at(f[mid])
        if np.any(np.abs(mm) > sm):
            raise PhysicalityError("self-paired bin is over-squeezed")
        ph = np.exp(0.5j * np.angle(mm))
        alpha = 0.5 * (np.sqrt(sm + np.abs(mm)) + np.sqrt(sm - np.abs(mm)))
        gamma = 0.5 * (np.sqrt(sm + np.abs(mm)) - np.sqrt(sm - np.abs(mm)))
        zm = _complex_normal(rng, mid.size)
        amps[mid] = ph * (alpha * zm + gamma * np.conj(zm))
    if single.size:
        amps[single] = np.sqrt(s[single]) * _complex_normal(rng, single.size)
    return amps


def synth_segment(state: SpectralState, n_samples: int, sample_rate: float, impedance: float = 50.0,
                  seed: int = 0, sequence_id: int = 0, bound: str = "quantum") -> TraceSegment:
    """One periodic segment of sample voltage (float volts, scale 1)."""
    rng = segment_rng(seed, sequence_id)
    amps = bin_amplitudes(state, n_samples, sample_rate, rng, bound)
    df = sample_rate / n_samples
    f = np.arange(amps.size) * df
    spec = 1j * np.sqrt(impedance * PLANCK * f / 2 * df) * amps * n_samples
    volts = np.fft.irfft(spec, n=n_samples)
    return TraceSegment(volts, sample_rate, 1.0, sequence_id)


def synth_trace(state: SpectralState, n_samples: int, sample_rate: float = 32e9, impedance: float = 50.0,
                seed: int = 0, segment_length: int = DEFAULT_SEGMENT_LENGTH, first_sequence: int = 0,
                bound: str = "quantum"):
    """Yield consecutive independent segments totalling ``n_samples``.

    Segment ``i`` is seeded by ``(seed, first_sequence + i)`` so any subset
    can be regenerated independently.
    """
    if n_samples % segment_length:
        raise ConfigurationError("n_samples must be a multiple of segment_length")
    for i in range(n_samples // segment_length):
        yield synth_segment(state, segment_length, sample_rate, impedance, seed, first_sequence + i, bound)


def _as_function(value):
    if value is None:
        return lambda f: np.zeros_like(np.asarray(f, dtype=float))
    if callable(value):
        return value
    const = float(value)
    return lambda f: np.full_like(np.asarray(f, dtype=float), const)


@dataclass
class ChainModel:
    """Amplification chain from the sample to the digitizer.

    ``gain_db`` and ``noise_temp`` may be constants or callables of
    frequency in Hz. The ADC maps ``u = v / adc_fullscale`` to
    ``u + eps u^3`` and rounds to ``adc_bits`` with saturation. When
    ``adc_fullscale`` is None it is set to ``adc_loading`` times the rms
    of the first segment seen and then kept fixed.
    """

    gain_db: object = 0.0
    noise_temp: object = 0.0
    dispersion: object = None
    adc_bits: int = 10
    adc_fullscale: float | None = None
    adc_loading: float = 4.0
    adc_nonlinearity: float = 0.0
    impedance: float = 50.0

    def __post_init__(self):
        if not 8 <= int(self.adc_bits) <= 16:
            raise ConfigurationError("adc_bits must lie in [8, 16]")
        if self.adc_fullscale is not None and not self.adc_fullscale > 0:
            raise ConfigurationError("adc_fullscale must be positive")

    def amplitude_gain(self, f):
        g = 10.0 ** (np.asarray(_as_function(self.gain_db)(f), dtype=float) / 20.0)
        if np.any(~np.isfinite(g)) or np.any(g <= 0):
            raise ConfigurationError("gain must be finite and positive")
        return g

    def inverse_gain(self, f):
        """``1/|g(f)|`` for :func:`photocount.kernels.compose`."""
        return 1.0 / self.amplitude_gain(f)

    def phase(self, f):
        return np.asarray(_as_function(self.dispersion)(f), dtype=float)

    def noise_psd(self, f):
        """One-sided input-referred amplifier noise density ``Z k T_N`` in V^2/Hz."""
        return self.impedance * BOLTZMANN * np.asarray(_as_function(self.noise_temp)(f), dtype=float)

    @property
    def code_scale(self) -> float:
        return self.adc_fullscale / 2 ** (self.adc_bits - 1)

    def quantize(self, volts: np.ndarray) -> tuple[np.ndarray, float]:
        """ADC codes and the clipped fraction."""
        if self.adc_fullscale is None:
            self.adc_fullscale = float(self.adc_loading * np.std(volts))
        half = 2 ** (self.adc_bits - 1)
        u = volts / self.adc_fullscale
        if self.adc_nonlinearity:
            u = u + self.adc_nonlinearity * u ** 3
        codes = np.rint(u * half)
        clipped = np.count_nonzero((codes < -half) | (codes > half - 1)) / max(codes.size, 1)
        return np.clip(codes, -half, half - 1).astype(np.int16), clipped


def apply_chain(segment: TraceSegment, chain: ChainModel, seed: int = 0, digitize: bool = True) -> TraceSegment:
    """Add amplifier noise, filter by ``|g| e^{i phi}`` and digitize.

    The amplifier noise of segment ``s`` is drawn from
    ``SeedSequence(seed, spawn_key=(s, 1))``, independent of the source.
    """
    v = segment.volts
    n = v.size
    df = segment.sample_rate / n
    f = np.arange(n // 2 + 1) * df
    spec = np.fft.rfft(v)
    psd = chain.noise_psd(f[1:-1])
    if np.any(psd > 0):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(segment.sequence_id, 1)))
        noise = np.zeros(f.size, complex)
        # one-sided density S -> bin amplitude sqrt(S df / 2) per quadrature
        noise[1:-1] = np.sqrt(psd * df) * _complex_normal(rng, f.size - 2) * n / math.sqrt(2.0)
        spec = spec + noise
    spec = spec * chain.amplitude_gain(f) * np.exp(1j * chain.phase(f))
    out = np.fft.irfft(spec, n=n)
    if not digitize:
        return TraceSegment(out, segment.sample_rate, 1.0, segment.sequence_id)
    codes, clipped = chain.quantize(out)
    if clipped > CLIP_WARN_FRACTION:
        warnings.warn(f"ADC clipped {100 * clipped:.2f}% of samples in segment {segment.sequence_id}",
                      RuntimeWarning, stacklevel=2)
    return TraceSegment(codes, segment.sample_rate, chain.code_scale, segment.sequence_id,
                        bit_depth=int(chain.adc_bits))
