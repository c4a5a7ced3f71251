"""Run configuration: YAML schema, validation and content hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .errors import ConfigurationError
from .junction import JunctionModel, SpectralState, quadratic_dispersion
from .kernels import KernelConfig
from .modes import DEFAULT_BAND, DEFAULT_GRID_SPACING, make_bichromatic, make_monochromatic, make_wideband
from .synth import ChainModel

DC_GUARD = 100e6


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    ``source`` selects the synthesized state: ``{'kind': 'vacuum'}``,
    ``{'kind': 'thermal', 'n': ...}``, ``{'kind': 'flat_pairs', 'n': ..., 'm': ...}``
    or ``{'kind': 'junction', 'R': ..., 'Te': ..., 'Vdc': ..., 'Iac_rms': ..., 'f_p': ...}``
    (``'squeezing_point': true`` fills the squeezing point). ``modes`` is a list of
    mode descriptions for ``make_*`` constructors.
    """

    seed: int = 0
    sample_rate: float = 32e9
    impedance: float = 50.0
    n_taps: int = 257
    block_size: int = 4096
    segment_length: int = 1 << 22
    n_samples: int = 1 << 24
    grid_spacing: float = DEFAULT_GRID_SPACING
    band: tuple = DEFAULT_BAND
    source: dict = field(default_factory=lambda: {"kind": "vacuum"})
    chain: dict = field(default_factory=lambda: {"adc_bits": 16, "adc_loading": 6.0})
    modes: list = field(default_factory=list)
    analysis: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"dir": "out"})

    def __post_init__(self):
        self.band = tuple(float(b) for b in self.band)
        self.validate()

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("sample_rate", "impedance", "grid_spacing"):
            if key in d:
                d[key] = float(d[key])
        for key in ("seed", "n_taps", "block_size", "segment_length", "n_samples"):
            if key in d:
                d[key] = int(float(d[key]))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def dump(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- validation ----------------------------------------------------
    def validate(self) -> None:
        if self.n_taps % 2 == 0:
            raise ConfigurationError("n_taps must be odd")
        if self.segment_length % 2 or self.segment_length < self.n_taps:
            raise ConfigurationError("segment_length must be even and longer than the kernels")
        if self.n_samples <= 0 or self.n_samples % self.segment_length:
            raise ConfigurationError("n_samples must be a positive multiple of segment_length")
        lo, hi = self.band
        if not DC_GUARD <= lo < hi <= self.sample_rate / 2:
            raise ConfigurationError("band must lie within [dc guard, Nyquist]")
        for spec in self.modes:
            self._build_mode(spec)
        if self.source.get("kind", "vacuum") not in ("vacuum", "thermal", "flat_pairs", "junction"):
            raise ConfigurationError(f"unknown source kind {self.source.get('kind')!r}")

    # -- builders ------------------------------------------------------
    def _build_mode(self, spec: dict):
        spec = dict(spec)
        kind = spec.pop("kind", "monochromatic")
        kw = {"grid_spacing": self.grid_spacing, "band": self.band}
        try:
            if kind == "monochromatic":
                return make_monochromatic(float(spec["f0"]), float(spec["bandwidth"]),
                                          spec.get("shape", "raised-cosine"), label=spec.get("label"), **kw)
            if kind == "bichromatic":
                return make_bichromatic(float(spec["f1"]), float(spec["f2"]), float(spec["bandwidth"]),
                                        float(spec.get("lam", 0.5)), float(spec.get("rel_phase", 0.0)),
                                        spec.get("shape", "raised-cosine"), label=spec.get("label"), **kw)
            if kind == "wideband":
                return make_wideband(float(spec["f_lo"]), float(spec["f_hi"]), label=spec.get("label"), **kw)
        except KeyError as exc:
            raise ConfigurationError(f"mode {kind} lacks field {exc}") from None
        raise ConfigurationError(f"unknown mode kind {kind!r}")

    def build_modes(self) -> list:
        return [self._build_mode(s) for s in self.modes]

    def kernel_config(self, theta: float = 0.0) -> KernelConfig:
        return KernelConfig(self.sample_rate, self.n_taps, self.impedance, theta)

    def junction_model(self) -> JunctionModel:
        src = dict(self.source)
        src.pop("kind", None)
        preset = src.pop("squeezing_point", False)
        params = {k: float(v) for k, v in src.items() if k in ("R", "Te", "Vdc", "Iac_rms", "f_p")}
        return JunctionModel.squeezing_point(**params) if preset else JunctionModel(**params)

    def state(self) -> SpectralState:
        kind = self.source.get("kind", "vacuum")
        f_max = self.sample_rate / 2 + self.grid_spacing
        if kind == "vacuum":
            return SpectralState.thermal(0.0, f_max, self.grid_spacing)
        if kind == "thermal":
            return SpectralState.thermal(float(self.source["n"]), f_max, self.grid_spacing)
        if kind == "flat_pairs":
            band = self.source.get("band")
            return SpectralState.flat_pairs(float(self.source["n"]), float(self.source["m"]),
                                            float(self.source.get("f_p", 12e9)), f_max, self.grid_spacing,
                                            tuple(band) if band else None)
        freqs = (np.arange(int(math.ceil(f_max / self.grid_spacing))) + 0.5) * self.grid_spacing
        return SpectralState.from_model(self.junction_model(), freqs)

    def chain_model(self) -> ChainModel:
        c = dict(self.chain)
        total = c.pop("dispersion_total", None)
        disp = quadratic_dispersion(float(total)) if total else None
        kw = {k: c[k] for k in ("gain_db", "noise_temp", "adc_bits", "adc_fullscale", "adc_loading",
                                "adc_nonlinearity") if k in c}
        return ChainModel(dispersion=disp, impedance=self.impedance, **kw)
