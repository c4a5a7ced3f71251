"""scikit-learn style wrappers around the kernel, streaming and fitting code."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import calib, dsp, kernels, quantum
from .errors import ConfigurationError
from .modes import ModeSpec


def _as_trace(X) -> np.ndarray:
    if isinstance(X, dsp.TraceSegment):
        return X.volts
    arr = check_array(np.asarray(X, dtype=np.float64).reshape(-1, 1), ensure_2d=True,
                      ensure_min_samples=1, dtype=np.float64)
    return arr[:, 0]


class QuadratureTransformer(TransformerMixin, BaseEstimator):
    """Voltage trace to one quadrature stream per (mode, theta) pair.

    Parameters
    ----------
    modes : list of ModeSpec
    sample_rate : float
    n_taps : int
    impedance : float
    thetas : tuple of float
        Quadrature angles; ``(0.0,)`` gives ``x`` only, ``(0.0, pi/2)`` gives ``x`` and ``p``.
    inverse_gain : None, float or callable
        ``1/|g(f)|`` deconvolved by every kernel.
    block_size : int
    """

    def __init__(self, modes=None, sample_rate=32e9, n_taps=257, impedance=50.0, thetas=(0.0,),
                 inverse_gain=None, block_size=dsp.DEFAULT_BLOCK_SIZE):
        self.modes = modes
        self.sample_rate = sample_rate
        self.n_taps = n_taps
        self.impedance = impedance
        self.thetas = thetas
        self.inverse_gain = inverse_gain
        self.block_size = block_size

    def fit(self, X=None, y=None):
        if not self.modes:
            raise ConfigurationError("at least one mode is required")
        if any(not isinstance(m, ModeSpec) for m in self.modes):
            raise ConfigurationError("modes must be ModeSpec instances")
        ks = []
        for mode in self.modes:
            for th in self.thetas:
                cfg = kernels.KernelConfig(self.sample_rate, self.n_taps, self.impedance, th)
                ks.append(kernels.compose(mode, kernels.quadrature_kernel(cfg), self.inverse_gain))
        self.kernels_ = ks
        self.engine_ = dsp.OverlapAddEngine(ks, self.block_size)
        self.n_features_out_ = len(ks)
        return self

    def transform(self, X):
        """Valid quadrature samples, shape ``(n_samples - n_taps + 1, n_streams)``."""
        check_is_fitted(self, "kernels_")
        v = _as_trace(X)
        if v.size < self.n_taps:
            raise ConfigurationError("trace shorter than the kernels")
        return self.engine_.convolve(v).T

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "kernels_")
        return np.array([f"{m.label}@{th:g}" for m in self.modes for th in self.thetas], dtype=object)


class PhotonCounter(BaseEstimator):
    """Streaming photocount statistics of one mode.

    ``fit`` / ``partial_fit`` take voltage traces (arrays or TraceSegment);
    each call is one independent segment with its own edge discard.
    """

    def __init__(self, mode=None, sample_rate=32e9, n_taps=257, impedance=50.0, inverse_gain=None,
                 block_size=dsp.DEFAULT_BLOCK_SIZE, segment_length=dsp.DEFAULT_SEGMENT_LENGTH, n_groups=32):
        self.mode = mode
        self.sample_rate = sample_rate
        self.n_taps = n_taps
        self.impedance = impedance
        self.inverse_gain = inverse_gain
        self.block_size = block_size
        self.segment_length = segment_length
        self.n_groups = n_groups

    def _setup(self):
        cfg = kernels.KernelConfig(self.sample_rate, self.n_taps, self.impedance, 0.0)
        self.kernel_ = kernels.compose(self.mode, kernels.quadrature_kernel(cfg), self.inverse_gain)
        self.engine_ = dsp.OverlapAddEngine([self.kernel_], self.block_size, cross=False)
        self.acc_ = dsp.MomentAccumulator(1, self.engine_.provenance, self.engine_.edge, False)
        self._n_calls = 0

    def fit(self, X, y=None):
        self._setup()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "engine_"):
            self._setup()
        if isinstance(X, dsp.TraceSegment):
            if abs(X.sample_rate - self.sample_rate) > 1e-9 * self.sample_rate:
                raise ConfigurationError("trace sample rate differs from the estimator's")
            segs = X.split(self.segment_length)
        else:
            segs = dsp.TraceSegment(_as_trace(X), self.sample_rate).split(self.segment_length)
        for seg in segs:
            if len(seg) >= self.n_taps:
                self.engine_.accumulate(seg, self.acc_, key=(self._n_calls, seg.sequence_id))
        self._n_calls += 1
        self.stats_ = quantum.photon_stats(self.acc_, 0, self.n_groups)
        self.n_ = self.stats_.n
        self.var_n_ = self.stats_.var_n
        self.fano_ = self.stats_.fano
        self.m_ = quantum.m_and_variances(self.stats_).m
        return self

    def predict(self, X=None):
        """Fitted ``(n, var_n, fano)``."""
        check_is_fitted(self, "stats_")
        return np.array([self.n_, self.var_n_, self.fano_])


class ShotNoiseThermometer(RegressorMixin, BaseEstimator):
    """Gain, noise temperature and electron temperature from noise-vs-bias spectra.

    ``X`` has two columns ``(f, Idc)`` covering a full grid; ``y`` is the PSD.
    """

    def __init__(self, R=52.5, impedance=50.0):
        self.R = R
        self.impedance = impedance

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.shape[1] != 2 or y.size != X.shape[0]:
            raise ConfigurationError("X must have columns (f, Idc) matching y")
        freqs, idc = np.unique(X[:, 0]), np.unique(X[:, 1])
        grid = np.full((idc.size, freqs.size), np.nan)
        grid[np.searchsorted(idc, X[:, 1]), np.searchsorted(freqs, X[:, 0])] = y
        if np.isnan(grid).any():
            raise ConfigurationError("samples do not cover a full (f, Idc) grid")
        self.result_ = calib.fit_thermometry(freqs, idc, grid, self.R, self.impedance)
        self.Te_ = self.result_.Te
        self.gain_db_ = self.result_.gain_db
        self.noise_temp_ = self.result_.noise_temp
        self.freqs_ = freqs
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=np.float64)
        f, i = X[:, 0], X[:, 1]
        g = np.interp(f, self.freqs_, self.gain_db_)
        tn = np.interp(f, self.freqs_, self.noise_temp_)
        return np.array([calib.synthetic_spectra([fk], [ik], self.R, self.Te_, gk, tk, self.impedance)[0, 0]
                         for fk, ik, gk, tk in zip(f, i, g, tn)])
