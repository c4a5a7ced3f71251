"""Command line interface.

Subcommands share one YAML run configuration (see :class:`RunConfig`)::

    photocount synth     run.yaml          # write trace files and a provenance sidecar
    photocount analyze   run.yaml          # photocount statistics of every configured mode
    photocount spectrum  run.yaml          # squeezing spectrum over a sideband grid
    photocount entangle  run.yaml          # E_f and entanglement rate against bandwidth
    photocount steer     run.yaml          # purities and steerability against bandwidth
    photocount calibrate run.yaml          # shot-noise thermometry of the chain
    photocount bench     run.yaml          # throughput against worker count

Exit codes: 0 success, 2 invalid input, 3 physicality violation, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, calib, dsp, junction, kernels, quantum, synth
from .config import RunConfig
from .errors import AlignmentError, ConfigurationError, PhysicalityError, ProvenanceError
from .modes import make_bichromatic, make_monochromatic, make_wideband

logger = logging.getLogger("photocount")

EXIT_OK, EXIT_INVALID, EXIT_PHYSICALITY, EXIT_IO = 0, 2, 3, 4
SIDECAR = "provenance.json"
TRACE_GLOB = "trace_*.bin"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _outdir(cfg: RunConfig, args) -> Path:
    out = Path(args.out or cfg.output.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _write_rows(path: Path, rows, cfg: RunConfig) -> None:
    for r in rows:
        r["config_hash"] = cfg.config_hash
    fmt = "json" if path.suffix == ".json" else "csv"
    quantum.write_rows(rows, path, fmt)
    logger.info("wrote %s", path)


def _trace_paths(cfg: RunConfig, traces, default_dir: Path) -> tuple[list[Path], dict | None]:
    """Trace files and the sidecar of the directory they came from."""
    if traces:
        paths = []
        for t in traces:
            p = Path(t)
            paths.extend(sorted(p.glob(TRACE_GLOB)) if p.is_dir() else [p])
    else:
        paths = sorted(default_dir.glob(TRACE_GLOB))
    if not paths:
        raise FileNotFoundError(f"no trace files found (looked in {traces or default_dir})")
    side = paths[0].parent / SIDECAR
    meta = json.loads(side.read_text()) if side.exists() else None
    return paths, meta


def _segment_length(cfg: RunConfig, meta: dict | None) -> int:
    if meta is None:
        logger.warning("no provenance sidecar; assuming segment_length %d", cfg.segment_length)
        return cfg.segment_length
    seg = int(meta["segment_length"])
    if seg != cfg.segment_length:
        raise AlignmentError(f"traces were synthesized with segment_length {seg}, "
                             f"configuration asks for {cfg.segment_length}")
    return seg


def _inverse_gain(cfg: RunConfig, args):
    """``1/|g|`` from a calibration file, or None when deconvolution is off."""
    if not cfg.analysis.get("deconvolve", False):
        return None
    if not getattr(args, "calibration", None):
        raise ConfigurationError("deconvolution requested but no --calibration file given")
    data = json.loads(Path(args.calibration).read_text())
    freqs, gain_db = np.asarray(data["freqs"]), np.asarray(data["gain_db"])
    return lambda f: 10 ** (-np.interp(np.asarray(f, dtype=float), freqs, gain_db) / 20)


def _kernel_bank(cfg: RunConfig, modes, inverse_gain=None) -> list:
    quad = kernels.quadrature_kernel(cfg.kernel_config(kernels.THETA_X))
    return [kernels.compose(m, quad, inverse_gain) for m in modes]


def _measure(cfg: RunConfig, args, modes) -> list:
    """Photon statistics of every mode from trace files, reference-subtracted when asked."""
    paths, meta = _trace_paths(cfg, args.traces, _outdir(cfg, args))
    seg = _segment_length(cfg, meta)
    bank = _kernel_bank(cfg, modes, _inverse_gain(cfg, args))
    workers = dsp.resolve_workers(args.workers)
    n_groups = int(cfg.analysis.get("n_groups", 32))
    acc = dsp.process_files(paths, bank, segment_length=seg, block_size=cfg.block_size,
                            workers=workers, cross=False)
    if getattr(args, "reference", None):
        rpaths, rmeta = _trace_paths(cfg, [args.reference], Path(args.reference))
        racc = dsp.process_files(rpaths, bank, segment_length=_segment_length(cfg, rmeta),
                                 block_size=cfg.block_size, workers=workers, cross=False)
        stats = []
        for i in range(len(bank)):
            c = quantum.reference_subtract(quantum.cumulants(acc, i, n_groups),
                                           quantum.cumulants(racc, i, n_groups))
            stats.append(quantum.stats_from_cumulants(c))
    else:
        stats = [quantum.photon_stats(acc, i, n_groups) for i in range(len(bank))]
    n_sigma = float(cfg.analysis.get("n_sigma", 5.0))
    for m, s in zip(modes, stats):
        if s.n < -n_sigma * max(s.n_err, 1e-12):
            raise PhysicalityError(f"{m.label}: n = {s.n:.4g} is {n_sigma:g} sigma below vacuum")
    return stats


class _TheoryStats:
    """Prediction dressed up with the fields of :class:`quantum.PhotonStats`."""

    def __init__(self, p: junction.Prediction):
        self.n, self.var_n = p.n, p.var_n
        self.fano = p.var_n / p.n if p.n > 0 else float("nan")
        self.n_err = self.var_n_err = self.fano_err = 0.0
        self.cov = None


def _stats(cfg: RunConfig, args, modes) -> list:
    if args.theory:
        state = cfg.state()
        disp = cfg.chain_model().phase if cfg.chain.get("dispersion_total") else None
        return [_TheoryStats(junction.predict(m, state, disp)) for m in modes]
    return _measure(cfg, args, modes)


def _mode_kw(cfg: RunConfig) -> dict:
    return {"grid_spacing": cfg.grid_spacing, "band": cfg.band}


def _center(cfg: RunConfig) -> float:
    if "center" in cfg.analysis:
        return float(cfg.analysis["center"])
    return float(cfg.source.get("f_p", 12e9)) / 2


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    """Write synthetic digitizer traces for the configured source and chain."""
    out = _outdir(cfg, args)
    state = cfg.state()
    chain = cfg.chain_model()
    bound = cfg.source.get("bound", "quantum")
    files = []
    for seg in synth.synth_trace(state, cfg.n_samples, cfg.sample_rate, cfg.impedance, cfg.seed,
                                 cfg.segment_length, bound=bound):
        coded = synth.apply_chain(seg, chain, cfg.seed)
        path = out / f"trace_{seg.sequence_id:05d}.bin"
        dsp.write_trace(path, coded)
        files.append({"name": path.name, "sha256": dsp.file_sha256(path), "sequence_id": seg.sequence_id})
        logger.info("wrote %s", path)
    dsp.write_provenance(out / SIDECAR, {
        "config_hash": cfg.config_hash, "seed": cfg.seed, "segment_length": cfg.segment_length,
        "sample_rate": cfg.sample_rate, "adc_fullscale": chain.adc_fullscale, "files": files,
        "version": __version__})
    cfg.dump(out / "config.yaml")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    """Photon statistics of every configured mode from trace files."""
    modes = cfg.build_modes()
    if not modes:
        raise ConfigurationError("configuration lists no modes")
    rows = []
    for mode, s in zip(modes, _stats(cfg, args, modes)):
        sq = quantum.m_and_variances(s)
        rows.append(quantum.result_row(mode.label, s, sq))
    _write_rows(_outdir(cfg, args) / (args.output or "analysis.csv"), rows, cfg)
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, args) -> int:
    """Squeezing of bichromatic ``(f, 2 f_c - f)`` modes over a sideband grid."""
    fc = _center(cfg)
    bw = float(cfg.analysis.get("bandwidth", 200e6))
    sidebands = np.asarray(cfg.analysis.get("sidebands", np.arange(4.25e9, 5.8e9, 0.25e9)), dtype=float)
    kw = _mode_kw(cfg)
    modes = [make_bichromatic(f, 2 * fc - f, bw, 0.5, 0.0, "raised-cosine", label=f"bi {f / 1e9:.4g}GHz", **kw)
             for f in sidebands]
    rows = []
    for f, mode, s in zip(sidebands, modes, _stats(cfg, args, modes)):
        sq = quantum.m_and_variances(s)
        rows.append(quantum.result_row(mode.label, s, sq, f=float(f)))
    _write_rows(_outdir(cfg, args) / (args.output or "spectrum.csv"), rows, cfg)
    return EXIT_OK


def _bipartites(cfg: RunConfig, args):
    """Two-mode states against bandwidth for bichromatic and wideband partitions.

    Bichromatic: sub-modes at ``f_c -/+ d`` of width ``bw`` with ``m`` from
    their balanced superposition. Wideband: the halves of ``[f_c - d, f_c + d]``
    with ``m`` from the full band, which is their balanced superposition.
    """
    fc = _center(cfg)
    bw = float(cfg.analysis.get("bandwidth", 200e6))
    grid = np.asarray(cfg.analysis.get("df_grid", np.arange(0.25e9, 2.01e9, 0.25e9)), dtype=float)
    kw = _mode_kw(cfg)
    modes = []
    for d in grid:
        modes += [make_monochromatic(fc - d, bw, "raised-cosine", **kw),
                  make_monochromatic(fc + d, bw, "raised-cosine", **kw),
                  make_bichromatic(fc - d, fc + d, bw, 0.5, 0.0, "raised-cosine", **kw),
                  make_wideband(fc - d, fc, **kw), make_wideband(fc, fc + d, **kw),
                  make_wideband(fc - d, fc + d, **kw)]
    stats = _stats(cfg, args, modes)
    n_sigma = float(cfg.analysis.get("n_sigma", 3.0))
    out = {"bichromatic": [], "wideband": []}
    for i, d in enumerate(grid):
        chunk = stats[6 * i:6 * i + 6]
        for kind, (a, b, ab) in (("bichromatic", chunk[0:3]), ("wideband", chunk[3:6])):
            sq = quantum.m_and_variances(ab)
            m_err = sq.m_err if np.isfinite(sq.m_err) else 0.0
            gb = quantum.covariance(a.n, b.n, sq.m, m_err, n_sigma)
            out[kind].append((float(d), gb))
    return out


def cmd_entangle(cfg: RunConfig, args) -> int:
    """Entanglement of formation and Gebit/s rate against sideband spacing."""
    rows = []
    for kind, items in _bipartites(cfg, args).items():
        d = np.array([x[0] for x in items])
        ef = np.array([quantum.entanglement_of_formation(gb) for _, gb in items])
        rate = quantum.entanglement_rate(d, ef, kind)
        for dk, (_, gb), e, r in zip(d, items, ef, rate):
            rows.append(quantum.result_row(kind, df=dk, n_A=gb.n_A, n_B=gb.n_B, m=gb.m, E_f=e, rate=r,
                                           clamped=gb.clamped, asymmetric=gb.asymmetric))
    _write_rows(_outdir(cfg, args) / (args.output or "entanglement.csv"), rows, cfg)
    return EXIT_OK


def cmd_steer(cfg: RunConfig, args) -> int:
    """Gaussian steering in both directions against sideband spacing."""
    rows = []
    for kind, items in _bipartites(cfg, args).items():
        for d, gb in items:
            st = quantum.steering(gb)
            rows.append(quantum.result_row(kind, st=st, df=d, n_A=gb.n_A, n_B=gb.n_B, m=gb.m,
                                           G_AtoB=st.G_AtoB, G_BtoA=st.G_BtoA))
    _write_rows(_outdir(cfg, args) / (args.output or "steering.csv"), rows, cfg)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> int:
    """Fit gain, noise temperature and electron temperature from shot-noise spectra."""
    spec = dict(cfg.analysis.get("calibration", {}))
    R = float(cfg.source.get("R", spec.get("R", 52.5)))
    if args.spectra:
        freqs, idc, psd = calib.read_spectra_csv(args.spectra)
    else:
        freqs = np.asarray(spec.get("freqs", np.linspace(1e9, 10e9, 10)), dtype=float)
        idc = np.asarray(spec.get("idc", np.linspace(-3e-6, 3e-6, 25)), dtype=float)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0, 2)))
        psd = calib.synthetic_spectra(freqs, idc, R, float(spec.get("Te", 0.0174)),
                                      spec.get("gain_db", 70.0), spec.get("noise_temp", 4.0),
                                      cfg.impedance, float(spec.get("rel_noise", 0.0)), rng)
    res = calib.fit_thermometry(freqs, idc, psd, R, cfg.impedance)
    out = _outdir(cfg, args)
    res.to_json(out / "calibration.json", config_hash=cfg.config_hash)
    res.to_csv(out / "calibration.csv")
    print(f"Te = {res.Te * 1e3:.3f} +/- {res.Te_err * 1e3:.3f} mK")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    """Samples per second of the full pipeline against worker count."""
    modes = cfg.build_modes() or [make_monochromatic(6e9, 200e6, **_mode_kw(cfg))]
    bank = _kernel_bank(cfg, modes)
    rng = np.random.default_rng(cfg.seed)
    counts = [int(w) for w in (args.workers_list or [1, 2, 4])]
    report = {"config_hash": cfg.config_hash, "n_modes": len(bank), "n_samples": cfg.n_samples,
              "block_size": cfg.block_size, "cross": args.cross, "results": []}
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for i in range(cfg.n_samples // cfg.segment_length):
            codes = rng.integers(-2000, 2000, cfg.segment_length, dtype=np.int16)
            p = Path(tmp) / f"trace_{i:05d}.bin"
            dsp.write_trace(p, dsp.TraceSegment(codes, cfg.sample_rate, 1e-4, i, 16))
            paths.append(p)
        for w in counts:
            t0 = time.perf_counter()
            dsp.process_files(paths, bank, segment_length=cfg.segment_length, block_size=cfg.block_size,
                              workers=w, cross=args.cross)
            dt = time.perf_counter() - t0
            report["results"].append({"workers": w, "seconds": dt, "samples_per_s": cfg.n_samples / dt})
            print(f"workers={w}: {cfg.n_samples / dt / 1e6:.1f} MSa/s")
    _write_json(_outdir(cfg, args) / (args.output or "bench.json"), report)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "analyze": cmd_analyze, "spectrum": cmd_spectrum, "entangle": cmd_entangle,
            "steer": cmd_steer, "calibrate": cmd_calibrate, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photocount", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).split("\n")[0])
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("-o", "--out", help="output directory (overrides output.dir)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (default: ${dsp.WORKERS_ENV} or 1)")
        if name in ("analyze", "spectrum", "entangle", "steer"):
            p.add_argument("traces", nargs="*", help="trace files or directories (default: output dir)")
            p.add_argument("--reference", help="directory of reference traces to subtract")
            p.add_argument("--calibration", help="calibration JSON used for deconvolution")
            p.add_argument("--theory", action="store_true", help="evaluate the model instead of traces")
            p.add_argument("--output", help="result file name (.csv or .json)")
        if name == "calibrate":
            p.add_argument("--spectra", help="CSV with columns f, Idc, PSD")
        if name == "bench":
            p.add_argument("--workers-list", nargs="+", type=int)
            p.add_argument("--cross", action="store_true", help="include cross moments")
            p.add_argument("--output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except PhysicalityError as exc:
        logger.error("physicality: %s", exc)
        return EXIT_PHYSICALITY
    except (ConfigurationError, AlignmentError, ProvenanceError, KeyError, TypeError) as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        logger.error("i/o: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
