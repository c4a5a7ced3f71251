"""Photocount statistics and two-mode Gaussian metrics from quadrature moments.

Error bars come from a delete-one-group jackknife over contiguous
super-blocks of the accumulated stream.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dsp import MomentAccumulator
from .errors import ConfigurationError, PhysicalityError, ProvenanceError

VACUUM = 0.5
ASYMMETRY_FLAG = 0.1


# ---------------------------------------------------------------------------
# jackknife over super-blocks
# ---------------------------------------------------------------------------


def jackknife(acc: MomentAccumulator, fn, n_groups: int = 32):
    """Value of ``fn(means)`` and its jackknife covariance.

    ``fn`` maps the dict of moment means to a float or a 1-d array.
    """
    gc, gs = acc.groups(n_groups)
    names = acc.names
    total_c = gc.sum()
    total_s = gs.sum(axis=0)
    if total_c == 0:
        raise ConfigurationError("empty accumulator")
    value = np.atleast_1d(np.asarray(fn(dict(zip(names, total_s / total_c))), dtype=float))
    g = len(gc)
    if g < 2:
        return value, np.full((value.size, value.size), np.nan)
    reps = np.array([np.atleast_1d(fn(dict(zip(names, (total_s - gs[i]) / (total_c - gc[i])))))
                     for i in range(g)])
    dev = reps - reps.mean(axis=0)
    cov = (g - 1) / g * dev.T @ dev
    return value, cov


# ---------------------------------------------------------------------------
# single-mode statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cumulants:
    """Second and fourth cumulants of one quadrature stream with their covariance."""

    c2: float
    c4: float
    cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    count: int = 0
    provenance: str = ""

    @property
    def x2(self) -> float:
        return self.c2

    @property
    def x4(self) -> float:
        return self.c4 + 3 * self.c2 ** 2


def cumulants(acc: MomentAccumulator, stream: int = 0, n_groups: int = 32) -> Cumulants:
    k2, k4 = f"s{stream}^2", f"s{stream}^4"
    if stream >= acc.n_streams:
        raise ConfigurationError(f"accumulator has no stream {stream}")

    def fn(m):
        return [m[k2], m[k4] - 3 * m[k2] ** 2]

    val, cov = jackknife(acc, fn, n_groups)
    prov = f"{acc.provenance}#{stream}" if acc.provenance else ""
    return Cumulants(float(val[0]), float(val[1]), cov, acc.count, prov)


@dataclass(frozen=True)
class PhotonStats:
    n: float
    var_n: float
    fano: float
    n_err: float = float("nan")
    var_n_err: float = float("nan")
    fano_err: float = float("nan")
    x2: float = float("nan")
    x2_err: float = float("nan")
    count: int = 0
    cov: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("cov")
        return d


def stats_from_cumulants(c: Cumulants) -> PhotonStats:
    """``n = C2 - 1/2`` and ``var_n = (2/3) C4 + C2^2 - 1/4``.

    The second form is ``(2/3)<x^4> - <x^2>^2 - 1/4`` rewritten with the
    fourth cumulant ``C4 = <x^4> - 3 <x^2>^2``.
    """
    n = c.c2 - VACUUM
    var_n = 2.0 / 3.0 * c.c4 + c.c2 ** 2 - 0.25
    fano = var_n / n if n != 0 else float("nan")
    # gradients with respect to (C2, C4)
    g_n = np.array([1.0, 0.0])
    g_v = np.array([2 * c.c2, 2.0 / 3.0])
    g_f = (g_v * n - var_n * g_n) / n ** 2 if n != 0 else np.full(2, np.nan)
    jac = np.vstack([g_n, g_v, g_f])
    cov = jac @ c.cov @ jac.T
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return PhotonStats(n, var_n, fano, err[0], err[1], err[2], c.c2, err[0], c.count, cov[:2, :2])


def photon_stats(acc: MomentAccumulator, stream: int = 0, n_groups: int = 32) -> PhotonStats:
    """Mean photon number, its variance and the Fano factor of one stream."""
    if acc.count <= 0:
        raise ConfigurationError("photon_stats needs a non-empty accumulator")
    return stats_from_cumulants(cumulants(acc, stream, n_groups))


def reference_subtract(cond: Cumulants, ref: Cumulants) -> Cumulants:
    """Sample-only cumulants ``C2 = C2c - C2r + 1/2`` and ``C4 = C4c - C4r``.

    Independent additive noise has additive cumulants; the half quantum
    contained in the reference is restored.
    """
    if cond.provenance and ref.provenance and cond.provenance != ref.provenance:
        raise ProvenanceError("condition and reference were measured with different kernels")
    return Cumulants(cond.c2 - ref.c2 + VACUUM, cond.c4 - ref.c4, cond.cov + ref.cov,
                     min(cond.count, ref.count), cond.provenance)


@dataclass(frozen=True)
class Squeezing:
    m: float
    V_minus: float
    V_plus: float
    squeezing_db: float
    below_thermal: bool = False
    m_err: float = float("nan")
    V_minus_err: float = float("nan")
    squeezing_db_err: float = float("nan")


def m_and_variances(stats: PhotonStats) -> Squeezing:
    """Pair amplitude from excess photon-number variance of a Gaussian source.

    ``m = sqrt(var_n - n(n+1))``; a negative radicand clamps to 0 and sets
    ``below_thermal``.
    """
    n, v = stats.n, stats.var_n
    rad = v - n * (n + 1)
    below = rad < 0
    m = math.sqrt(max(rad, 0.0))
    vm, vp = n + VACUUM - m, n + VACUUM + m
    db = 10 * math.log10(vm / VACUUM) if vm > 0 else -math.inf
    m_err = vm_err = db_err = float("nan")
    if stats.cov is not None and m > 0:
        g_m = np.array([-(2 * n + 1), 1.0]) / (2 * m)
        g_vm = np.array([1.0, 0.0]) - g_m
        m_err = math.sqrt(max(g_m @ stats.cov @ g_m, 0.0))
        vm_err = math.sqrt(max(g_vm @ stats.cov @ g_vm, 0.0))
        db_err = 10 / math.log(10) * vm_err / vm if vm > 0 else float("nan")
    return Squeezing(m, vm, vp, db, below, m_err, vm_err, db_err)


# ---------------------------------------------------------------------------
# two sub-modes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairStats:
    n1: float
    n2: float
    var_n1: float
    var_n2: float
    corr: float
    varN_quarter: float
    corr_err: float = float("nan")
    varN_quarter_err: float = float("nan")

    @property
    def delta2_thermal(self) -> float:
        """``<Delta^2>`` of the symmetric bichromatic mode for uncorrelated thermal inputs."""
        return (2 * self.n1 * self.n2 + self.n1 + self.n2) / 4


def _pair_key(i, j):
    i, j = sorted((i, j))
    return f"s{i}^2s{j}^2"


def pair_stats(acc: MomentAccumulator, streams=(0, 1, 2, 3), n_groups: int = 32) -> PairStats:
    """Photon-number correlations of two sub-modes from ``(x1, p1, x2, p2)``.

    ``n_i = (x_i^2 + p_i^2 - 1)/2`` is the symmetrically ordered number; its
    variance exceeds the photon-number variance by 1/4 while cross
    covariances are unchanged.
    """
    if not acc.cross:
        raise ConfigurationError("pair statistics need cross moments")
    if len(set(streams)) != 4 or max(streams) >= acc.n_streams:
        raise ConfigurationError("pair_stats needs four distinct streams")
    x1, p1, x2, p2 = streams

    def sq(m, i):
        return m[f"s{i}^2"]

    def mode(m, x, p):
        mean = (sq(m, x) + sq(m, p) - 1) / 2
        second = (m[f"s{x}^4"] + m[f"s{p}^4"] + 2 * m[_pair_key(x, p)]
                  - 2 * (sq(m, x) + sq(m, p)) + 1) / 4
        return mean, second - mean ** 2 - 0.25

    def fn(m):
        n1, v1 = mode(m, x1, p1)
        n2, v2 = mode(m, x2, p2)
        cross = sum(m[_pair_key(a, b)] for a in (x1, p1) for b in (x2, p2))
        e12 = (cross - (sq(m, x1) + sq(m, p1)) - (sq(m, x2) + sq(m, p2)) + 1) / 4
        corr = e12 - n1 * n2
        return [n1, n2, v1, v2, corr, (v1 + v2) / 4 + corr / 2]

    val, cov = jackknife(acc, fn, n_groups)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return PairStats(*map(float, val), corr_err=float(err[4]), varN_quarter_err=float(err[5]))


# ---------------------------------------------------------------------------
# Gaussian bipartite states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianBipartite:
    """Two-mode Gaussian state in standard form, vacuum variance 1/2."""

    n_A: float
    n_B: float
    m: float
    clamped: bool = False

    @property
    def covariance(self) -> np.ndarray:
        a, b, c = self.n_A + VACUUM, self.n_B + VACUUM, self.m
        z = np.diag([c, -c])
        return np.block([[a * np.eye(2), z], [z, b * np.eye(2)]])

    @property
    def det_A(self) -> float:
        return (self.n_A + VACUUM) ** 2

    @property
    def det_B(self) -> float:
        return (self.n_B + VACUUM) ** 2

    @property
    def det_C(self) -> float:
        return -self.m ** 2

    @property
    def det(self) -> float:
        return ((self.n_A + VACUUM) * (self.n_B + VACUUM) - self.m ** 2) ** 2

    def symplectic_eigenvalues(self) -> tuple[float, float]:
        d = self.det_A + self.det_B + 2 * self.det_C
        root = math.sqrt(max(d * d - 4 * self.det, 0.0))
        return math.sqrt(max((d - root) / 2, 0.0)), math.sqrt((d + root) / 2)

    def nu_tilde_minus(self) -> float:
        """Smallest symplectic eigenvalue of the partial transpose."""
        d = self.det_A + self.det_B - 2 * self.det_C
        return math.sqrt(max((d - math.sqrt(max(d * d - 4 * self.det, 0.0))) / 2, 0.0))

    @property
    def mu_A(self) -> float:
        return 1 / (2 * math.sqrt(self.det_A))

    @property
    def mu_B(self) -> float:
        return 1 / (2 * math.sqrt(self.det_B))

    @property
    def mu(self) -> float:
        return 1 / (4 * math.sqrt(self.det))

    @property
    def asymmetric(self) -> bool:
        tot = self.n_A + self.n_B
        return tot > 0 and abs(self.n_A - self.n_B) / tot > ASYMMETRY_FLAG


def physical_bound(n_A: float, n_B: float) -> float:
    """Largest admissible ``m``: ``m^2 <= min(n_A (n_B + 1), n_B (n_A + 1))``."""
    return math.sqrt(max(min(n_A * (n_B + 1), n_B * (n_A + 1)), 0.0))


def covariance(n_A: float, n_B: float, m: float, m_err: float = 0.0, n_sigma: float = 3.0) -> GaussianBipartite:
    """Standard-form state; ``m`` is clamped to the physical bound when the
    excess is within ``n_sigma`` error bars and rejected otherwise."""
    if n_A < 0 or n_B < 0:
        if min(n_A, n_B) < -n_sigma * max(m_err, 1e-12):
            raise PhysicalityError("negative occupancy")
        n_A, n_B = max(n_A, 0.0), max(n_B, 0.0)
    m = abs(m)
    bound = physical_bound(n_A, n_B)
    if m > bound * (1 + 1e-12):
        if m - n_sigma * m_err > bound:
            raise PhysicalityError(f"m = {m:.4g} exceeds the physical bound {bound:.4g}")
        return GaussianBipartite(n_A, n_B, bound, clamped=True)
    return GaussianBipartite(n_A, n_B, m)


def _h_ef(x: float) -> float:
    if x >= 1:
        return 0.0
    cp = (x ** -0.5 + x ** 0.5) ** 2 / 4
    cm = (x ** -0.5 - x ** 0.5) ** 2 / 4
    out = cp * math.log2(cp)
    if cm > 0:
        out -= cm * math.log2(cm)
    return out


def entanglement_of_formation(gb: GaussianBipartite) -> float:
    """Entanglement of formation in ebits from ``x = 2 nu_tilde_minus``.

    Exact for symmetric states; used as an estimate otherwise (see
    ``gb.asymmetric``).
    """
    return _h_ef(2 * gb.nu_tilde_minus())


def ef_from_squeezing_db(db: float) -> float:
    """E_f of the pure two-mode squeezed vacuum with squeezed variance ``db`` below vacuum."""
    return _h_ef(10 ** (-abs(db) / 10))


def entanglement_rate(df, ef, kind: str = "bichromatic") -> np.ndarray:
    """Entanglement rate in ebit/s against bandwidth ``df``.

    Wideband modes carry ``2 df E_f(df)``; a bichromatic band is a
    continuum of independent pairs, ``2 int_0^df E_f``.
    """
    df = np.asarray(df, dtype=float)
    ef = np.asarray(ef, dtype=float)
    if df.shape != ef.shape or np.any(np.diff(df) <= 0):
        raise ConfigurationError("df must be increasing and match ef")
    if kind == "wideband":
        return 2 * df * ef
    if kind == "bichromatic":
        x = np.concatenate([[0.0], df]) if df[0] > 0 else df
        y = np.concatenate([[ef[0]], ef]) if df[0] > 0 else ef
        out = 2 * cumulative_trapezoid(y, x, initial=0.0)
        return out[1:] if df[0] > 0 else out
    raise ConfigurationError(f"unknown mode kind {kind!r}")


@dataclass(frozen=True)
class Steering:
    eta: float
    G_AtoB: float
    G_BtoA: float
    cls: str
    mu_A: float
    mu_B: float
    mu: float
    nu_tilde_minus: float

    @property
    def entangled(self) -> bool:
        return 2 * self.nu_tilde_minus < 1


def steering(gb: GaussianBipartite, tol: float = 1e-12) -> Steering:
    """Purity ratio ``eta`` and Gaussian steerabilities in both directions."""
    det = 16 * gb.det
    ga = 0.5 * math.log(4 * gb.det_A / det) if det > 0 else math.inf
    gb_ = 0.5 * math.log(4 * gb.det_B / det) if det > 0 else math.inf
    ga, gb_ = max(0.0, ga), max(0.0, gb_)
    nu = gb.nu_tilde_minus()
    ab, ba = ga > tol, gb_ > tol
    if ab and ba:
        cls = "two-way"
    elif ab:
        cls = "steerable A->B"
    elif ba:
        cls = "steerable B->A"
    elif 2 * nu < 1 - tol:
        cls = "entangled"
    else:
        cls = "separable"
    return Steering(gb.mu_A * gb.mu_B / gb.mu, ga, gb_, cls, gb.mu_A, gb.mu_B, gb.mu, nu)


@dataclass(frozen=True)
class DuanResult:
    lams: np.ndarray
    inseparable: np.ndarray
    lambda_star: float
    a: np.ndarray


def lambda_to_a(lam):
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        return (lam / (1 - lam)) ** 0.25


def duan_check(lams, v_minus, tol: float = 0.0) -> DuanResult:
    """Flags ``lambda`` with ``V_minus(lambda) < 1/2 - tol`` and the minimizing ``lambda``."""
    lams = np.asarray(lams, dtype=float)
    v = np.asarray(v_minus, dtype=float)
    if lams.shape != v.shape:
        raise ConfigurationError("lams and v_minus must match")
    flags = v < VACUUM - tol
    return DuanResult(lams, flags, float(lams[int(np.argmin(v))]), lambda_to_a(lams))


@dataclass(frozen=True)
class LinearityReport:
    alpha: float
    alpha_err: float
    beta: float
    beta_err: float
    linear: bool
    n_points: int


def c4_vs_c2_diagnostic(c2, c4, c4_err=None, mask=None, n_sigma: float = 3.0) -> LinearityReport:
    """Fit ``C4 = alpha C2 + beta`` over a drive sweep.

    ``alpha`` consistent with zero means the chain is linear. Points where a
    genuine fourth cumulant is expected (squeezed conditions) should be
    excluded through ``mask`` (True keeps a point).
    """
    c2 = np.asarray(c2, dtype=float)
    c4 = np.asarray(c4, dtype=float)
    keep = np.ones(c2.size, bool) if mask is None else np.asarray(mask, bool)
    if keep.sum() < 3:
        raise ConfigurationError("need at least three sweep points")
    x, y = c2[keep], c4[keep]
    if c4_err is not None:
        w = 1 / np.asarray(c4_err, dtype=float)[keep]
        coef, cov = np.polyfit(x, y, 1, w=w, cov="unscaled")
    else:
        coef, cov = np.polyfit(x, y, 1, cov=True) if x.size > 3 else (np.polyfit(x, y, 1), np.full((2, 2), np.nan))
    a_err, b_err = np.sqrt(np.abs(np.diag(cov)))
    linear = bool(abs(coef[0]) <= n_sigma * a_err) if np.isfinite(a_err) else bool(coef[0] == 0)
    return LinearityReport(float(coef[0]), float(a_err), float(coef[1]), float(b_err), linear, int(x.size))


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------

ROW_FIELDS = ["label", "df", "n", "n_err", "var_n", "var_n_err", "fano", "fano_err", "m", "m_err",
              "V_minus_db", "V_minus_db_err", "E_f", "rate", "mu_A", "mu_B", "mu", "eta", "class",
              "config_hash"]


def result_row(label: str, stats: PhotonStats | None = None, sq: Squeezing | None = None,
               st: Steering | None = None, **extra) -> dict:
    row = dict.fromkeys(ROW_FIELDS, "")
    row["label"] = label
    if stats is not None:
        row.update(n=stats.n, n_err=stats.n_err, var_n=stats.var_n, var_n_err=stats.var_n_err,
                   fano=stats.fano, fano_err=stats.fano_err)
    if sq is not None:
        row.update(m=sq.m, m_err=sq.m_err, V_minus_db=sq.squeezing_db, V_minus_db_err=sq.squeezing_db_err)
    if st is not None:
        row.update(mu_A=st.mu_A, mu_B=st.mu_B, mu=st.mu, eta=st.eta)
        row["class"] = st.cls
    for k, v in extra.items():
        row[k] = v
    return row


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_rows(rows, path_or_buf=None, fmt: str = "csv"):
    rows = list(rows)
    if fmt == "json":
        text = json.dumps([{k: _jsonable(v) for k, v in r.items()} for r in rows], indent=2)
    else:
        fields = list(ROW_FIELDS) + [k for r in rows for k in r if k not in ROW_FIELDS]
        fields = list(dict.fromkeys(fields))
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)
    return None
