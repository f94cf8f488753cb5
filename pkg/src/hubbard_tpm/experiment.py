"""Single grid points and (L, U, tau) sweeps.

A point runs the full chain: assembly, both endpoint decompositions,
propagation, TPM statistics and state-level thermodynamics.  Sweeps write one
CSV row per point in grid order (independent of worker scheduling), one
distribution file per point and a JSON manifest with SHA-256 hashes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import thermo, workstats
from .hamiltonian import HubbardParams, final_hamiltonian, sector_operators
from .propagator import PropagationConfig, propagate
from .spectral import SpectralDecomposition, decompose, free_energy_difference, gibbs_weights, min_gap
from .thermo import ThermoRecord

log = logging.getLogger(__name__)

UNITS = "energies in J, times in 1/J, beta in 1/J"

DEFAULT_U = tuple(round(0.25 * i, 10) for i in range(49))
DEFAULT_TAU = (0.0, 0.2, 0.5, 1.0, 2.5, 5.0, 10.0)
COARSE_U = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 12.0)
COARSE_TAU = (0.0, 0.5, 2.5, 10.0)
COARSE_FROM_L = 8
SPIN_RESOLVED_MAX_DIM = 1000

RECORD_FIELDS = (
    "L", "U", "tau", "beta", "A",
    "mean_work", "variance", "skew3", "skew_std", "delta_F", "sigma", "dissipation",
    "d_eq", "d_adiab", "d_adiab_spin", "fdr_ratio", "lr_gap",
    "jarzynski_residual", "sigma_identity_residual", "mean_crosscheck_residual",
    "discarded_weight", "dropped_mass", "raw_pair_count", "support_size",
    "min_gap", "n_steps", "matvecs", "degenerate_final", "status",
)


@dataclass
class PointResult:
    params: HubbardParams
    record: ThermoRecord
    distribution: workstats.WorkDistribution
    diagnostics: dict

    def row(self) -> dict:
        p = self.params
        row = {"L": p.L, "U": p.U, "tau": p.tau, "beta": p.beta, "A": p.A}
        row.update(self.record.to_dict())
        row.update({k: self.diagnostics[k] for k in RECORD_FIELDS if k in self.diagnostics})
        row["status"] = "ok"
        return row


def instantaneous_min_gap(H_static, H_drive, spec0: SpectralDecomposition, spec_f: SpectralDecomposition,
                          samples: int) -> float:
    """Smallest adjacent level spacing over ``samples`` equally spaced ramp values."""
    gaps = [min_gap(spec0.eigenvalues), min_gap(spec_f.eigenvalues)]
    if samples > 2:
        Hs, D = H_static.toarray(), H_drive.diagonal()
        for s in np.linspace(0, 1, samples)[1:-1]:
            H = Hs + np.diag(s * D)
            gaps.append(min_gap(scipy.linalg.eigvalsh(H)))
    return float(min(gaps))


def run_point(params: HubbardParams, cfg: PropagationConfig | None = None,
              merge_tol: float = workstats.MERGE_TOL, prob_floor: float = workstats.PROB_FLOOR,
              gap_samples: int | None = None) -> PointResult:
    cfg = cfg or PropagationConfig()
    ops = sector_operators(params.L, params.J, params.A)
    Hs, D = ops.static(params.U), ops.drive
    Hf = final_hamiltonian(Hs, D)
    spec0 = decompose(Hs)
    spec_f = decompose(Hf)
    ens0 = gibbs_weights(spec0, params.beta)
    beta = params.beta

    prop = propagate(spec0, Hs, D, params, cfg, ensemble0=ens0, spec_f=spec_f)
    table = workstats.transition_matrix(prop, spec_f, spec0)
    dist = workstats.build_distribution(table, merge_tol, prob_floor)
    tpm_mean, unitary_mean = workstats.mean_energy_crosscheck(table, spec0, Hf, prop)
    del table
    n_steps = int(prop.n_steps.max()) if len(prop.n_steps) else 0
    matvecs, norm_drift = prop.matvecs, prop.norm_drift

    mean_w = workstats.mean(dist)
    var = workstats.central_moment(dist, 2)
    skew = workstats.central_moment(dist, 3)
    dF = free_energy_difference(spec0, spec_f, beta)

    rho_tau = thermo.evolved_state(prop, ensemble0=ens0)
    del prop
    sigma = thermo.entropy_production(rho_tau, spec_f, beta)
    d_eq = thermo.trace_distance(rho_tau, thermo.equilibrium_state(spec_f, beta))
    rho_ad = thermo.adiabatic_reference(ens0, spec_f)
    d_ad = thermo.trace_distance(rho_tau, rho_ad)
    d_ad_spin = float("nan")
    if spec0.dim <= SPIN_RESOLVED_MAX_DIM:
        rho_ad_spin = thermo.adiabatic_reference_resolved(ens0, spec0, spec_f, ops.spin_squared)
        d_ad_spin = thermo.trace_distance(rho_tau, rho_ad_spin)
    purity_drift = abs(rho_tau.purity() - float(np.sum(ens0.weights ** 2)))
    del rho_tau

    record = ThermoRecord(
        mean_work=mean_w, variance=var, skew3=skew,
        skew_std=skew / var ** 1.5 if var > 0 else float("nan"),
        delta_F=dF, sigma=sigma, dissipation=sigma / beta,
        d_eq=d_eq, d_adiab=d_ad,
        fdr_ratio=thermo.fdr_ratio(sigma, var, beta),
        lr_gap=thermo.linear_response_gap(mean_w, dF, var, beta),
    )
    if gap_samples is None:
        gap_samples = 11 if spec0.dim <= 1000 else 2
    diagnostics = {
        "jarzynski_residual": workstats.jarzynski_residual(dist, beta, dF),
        "sigma_identity_residual": abs(sigma - beta * (mean_w - dF)),
        "mean_crosscheck_residual": abs(tpm_mean - unitary_mean),
        "purity_drift": purity_drift,
        "discarded_weight": ens0.weights[ens0.weights < cfg.weight_cutoff].sum().item(),
        "dropped_mass": dist.dropped_mass,
        "raw_pair_count": dist.raw_pair_count,
        "support_size": len(dist),
        "min_gap": instantaneous_min_gap(Hs, D, spec0, spec_f, gap_samples),
        "n_steps": n_steps,
        "matvecs": matvecs,
        "norm_drift": norm_drift,
        "degenerate_final": bool(rho_ad.meta["degenerate_final_levels"]),
        "d_adiab_spin": d_ad_spin,
    }
    return PointResult(params, record, dist, diagnostics)


@dataclass
class SweepGrid:
    L_values: tuple = (4, 6, 8)
    U_values: tuple = DEFAULT_U
    tau_values: tuple = DEFAULT_TAU
    beta: float = 0.4
    A: float = 10.0
    J: float = 1.0
    densify: bool = False

    def __post_init__(self):
        self.L_values = tuple(int(v) for v in self.L_values)
        self.U_values = tuple(float(v) for v in self.U_values)
        self.tau_values = tuple(float(v) for v in self.tau_values)
        if not (self.L_values and self.U_values and self.tau_values):
            raise ValueError("sweep grid is empty")
        if any(L < 2 or L % 2 or L > 8 for L in self.L_values):
            raise ValueError("L values must be even and in [2, 8]")
        if any(u < 0 for u in self.U_values) or any(t < 0 for t in self.tau_values):
            raise ValueError("U and tau must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def axes(self, L: int) -> tuple[tuple, tuple]:
        """U and tau axes for one chain length; the default grids are coarsened at L >= 8."""
        u, t = self.U_values, self.tau_values
        if L >= COARSE_FROM_L and not self.densify:
            if u == DEFAULT_U:
                u = COARSE_U
            if t == DEFAULT_TAU:
                t = COARSE_TAU
        return u, t

    def points(self) -> list[HubbardParams]:
        out = []
        for L in self.L_values:
            us, taus = self.axes(L)
            for U in us:
                for tau in taus:
                    out.append(HubbardParams(L=L, U=U, tau=tau, J=self.J, A=self.A, beta=self.beta))
        return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def records_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# {UNITS}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for row in rows:
        w.writerow([_fmt(row.get(k, float("nan"))) for k in RECORD_FIELDS])
    return buf.getvalue()


def distribution_csv(dist: workstats.WorkDistribution) -> str:
    buf = io.StringIO()
    buf.write(f"# {UNITS}; W in J\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("W", "P"))
    for W, P in dist.rows():
        w.writerow((repr(W), repr(P)))
    return buf.getvalue()


def point_key(p: HubbardParams) -> str:
    key = f"L{p.L}_U{p.U:g}_tau{p.tau:g}"
    if p.A != 10.0:
        key += f"_A{p.A:g}"
    if p.beta != 0.4:
        key += f"_beta{p.beta:g}"
    if p.J != 1.0:
        key += f"_J{p.J:g}"
    return key


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _run_one(args):
    params, cfg, merge_tol, prob_floor = args
    start = time.perf_counter()
    try:
        res = run_point(params, cfg, merge_tol, prob_floor)
        return params, res.row(), distribution_csv(res.distribution), None, time.perf_counter() - start
    except Exception as exc:  # recorded per point, the sweep carries on
        log.exception("point %s failed", point_key(params))
        return params, None, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - start


def run_sweep(grid: SweepGrid, cfg: PropagationConfig | None, out: str | Path, workers: int = 1,
              merge_tol: float = workstats.MERGE_TOL, prob_floor: float = workstats.PROB_FLOOR,
              progress=None) -> dict:
    cfg = cfg or PropagationConfig()
    out = Path(out)
    (out / "dists").mkdir(parents=True, exist_ok=True)
    points = grid.points()
    jobs = [(p, cfg, merge_tol, prob_floor) for p in points]
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for i, res in enumerate(pool.map(_run_one, jobs)):
                results[i] = res
                if progress:
                    progress(i + 1, len(jobs), res)
    else:
        for i, job in enumerate(jobs):
            results[i] = _run_one(job)
            if progress:
                progress(i + 1, len(jobs), results[i])

    rows, entries, failures = [], [], 0
    for i in range(len(jobs)):
        params, row, dist_text, error, wall = results[i]
        entry = {"L": params.L, "U": params.U, "tau": params.tau, "wall_time": wall}
        if error is None:
            name = f"dists/{point_key(params)}.csv"
            (out / name).write_text(dist_text)
            entry.update(status="ok", distribution=name, sha256=_sha(dist_text))
        else:
            failures += 1
            row = {"L": params.L, "U": params.U, "tau": params.tau, "beta": params.beta, "A": params.A,
                   "status": "error"}
            entry.update(status="error", error=error)
        rows.append(row)
        entries.append(entry)

    body = records_csv(rows)
    (out / "records.csv").write_text(body)
    manifest = {
        "units": UNITS,
        "grid": asdict(grid),
        "propagation": asdict(cfg),
        "merge_tol": merge_tol,
        "prob_floor": prob_floor,
        "workers": workers,
        "records": {"file": "records.csv", "sha256": _sha(body), "columns": list(RECORD_FIELDS)},
        "points": entries,
        "failures": failures,
        "complete": failures == 0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return dict(manifest, directory=str(out))


def load_records(out: str | Path) -> list[dict]:
    out = Path(out)
    with open(out / "records.csv", newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    for row in rows:
        for k, v in row.items():
            if k == "status":
                continue
            row[k] = int(v) if k in ("L", "raw_pair_count", "support_size", "n_steps", "matvecs") and v != "nan" \
                else float(v)
    return rows


class IncompleteSweep(RuntimeError):
    pass


@dataclass
class Heatmap:
    U: np.ndarray
    tau: np.ndarray
    values: np.ndarray
    quantity: str
    L: int
    missing: list = field(default_factory=list)


def extract_heatmap(manifest: dict | str | Path, quantity: str, L: int) -> Heatmap:
    """Matrix of ``quantity`` with rows indexed by tau and columns by U; NaN marks missing points."""
    directory = manifest["directory"] if isinstance(manifest, dict) else manifest
    rows = [r for r in load_records(directory) if r["L"] == L]
    if not rows:
        raise IncompleteSweep(f"no records for L={L}")
    if quantity not in RECORD_FIELDS:
        raise KeyError(f"unknown quantity {quantity!r}")
    us = np.array(sorted({r["U"] for r in rows}))
    taus = np.array(sorted({r["tau"] for r in rows}))
    M = np.full((len(taus), len(us)), np.nan)
    missing = []
    for r in rows:
        i, j = np.searchsorted(taus, r["tau"]), np.searchsorted(us, r["U"])
        if r["status"] == "ok":
            M[i, j] = r[quantity]
        else:
            missing.append((r["U"], r["tau"]))
    return Heatmap(us, taus, M, quantity, L, missing)


def heatmap_csv(hm: Heatmap) -> str:
    buf = io.StringIO()
    buf.write(f"# {hm.quantity}, L={hm.L}; {UNITS}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau\\U"] + [repr(float(u)) for u in hm.U])
    for t, row in zip(hm.tau, hm.values):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return buf.getvalue()


def heatmap_svg(hm: Heatmap, cell: int = 14) -> str:
    """Self-contained SVG: diverging blue-white-red map, zero at white."""
    nt, nu = hm.values.shape
    left, top, bottom = 60, 30, 50
    width, height = left + nu * cell + 20, top + nt * cell + bottom
    finite = hm.values[np.isfinite(hm.values)]
    scale = float(np.abs(finite).max()) if finite.size else 1.0
    scale = scale or 1.0

    def colour(v):
        if not np.isfinite(v):
            return "#888888"
        x = max(-1.0, min(1.0, v / scale))
        if x >= 0:
            r, g, b = 255, int(255 * (1 - x)), int(255 * (1 - x))
        else:
            r, g, b = int(255 * (1 + x)), int(255 * (1 + x)), 255
        return f"#{r:02x}{g:02x}{b:02x}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{left}" y="18" font-size="12">{hm.quantity}, L={hm.L} (max |value| {scale:.4g})</text>']
    for i in range(nt):
        y = top + (nt - 1 - i) * cell
        for j in range(nu):
            parts.append(f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{colour(hm.values[i, j])}"/>')
        parts.append(f'<text x="{left - 4}" y="{y + cell - 3}" font-size="9" text-anchor="end">{hm.tau[i]:g}</text>')
    for j in range(0, nu, max(1, nu // 8)):
        parts.append(f'<text x="{left + j * cell + cell / 2}" y="{top + nt * cell + 14}" font-size="9" '
                     f'text-anchor="middle">{hm.U[j]:g}</text>')
    parts.append(f'<text x="{left + nu * cell / 2}" y="{height - 12}" font-size="11" text-anchor="middle">U/J</text>')
    parts.append(f'<text x="14" y="{top + nt * cell / 2}" font-size="11" '
                 f'transform="rotate(-90 14 {top + nt * cell / 2})" text-anchor="middle">tau J</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class Extrema:
    minima: list
    maxima: list
    zero_crossings: list

    @property
    def argmin_U(self) -> float | None:
        return self.minima[0][0] if self.minima else None

    @property
    def argmax_U(self) -> float | None:
        return self.maxima[0][0] if self.maxima else None


def _parabolic(x, y, i):
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a == 0:
        return x1, y1
    xv = -b / (2 * a)
    if not x0 <= xv <= x2:
        return x1, y1
    c = y1 - a * x1 * x1 - b * x1
    return float(xv), float(a * xv * xv + b * xv + c)


def locate_extrema(U, values) -> Extrema:
    """Interior local extrema (parabolic refinement) and linear zero crossings.

    Extrema are returned as (U, value) pairs, each list ordered by U.
    """
    x = np.asarray(U, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(x) < 3 or len(x) != len(y):
        raise ValueError("need at least three (U, value) points")
    order = np.argsort(x)
    x, y = x[order], y[order]
    minima, maxima = [], []
    for i in range(1, len(x) - 1):
        if y[i] < y[i - 1] and y[i] <= y[i + 1]:
            minima.append(_parabolic(x, y, i))
        elif y[i] > y[i - 1] and y[i] >= y[i + 1]:
            maxima.append(_parabolic(x, y, i))
    zeros = []
    for i in range(len(x) - 1):
        if y[i] == 0 and 0 < i and y[i - 1] * y[i + 1] < 0:
            zeros.append(float(x[i]))
        elif y[i] * y[i + 1] < 0:
            zeros.append(float(x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i])))
    return Extrema(minima, maxima, zeros)


def sign_changes(values) -> list[tuple[int, int]]:
    """Indices (i, direction) where sign flips between i and i+1; +1 is negative to positive."""
    y = np.sign(np.asarray(values, dtype=float))
    nz = [(i, s) for i, s in enumerate(y) if s != 0]
    return [(nz[k][0], int(nz[k + 1][1])) for k in range(len(nz) - 1) if nz[k][1] != nz[k + 1][1]]


def curve(rows: list[dict], quantity: str, L: int, tau: float) -> tuple[np.ndarray, np.ndarray]:
    sel = sorted((r["U"], r[quantity]) for r in rows
                 if r["L"] == L and math.isclose(r["tau"], tau) and r["status"] == "ok")
    return np.array([s[0] for s in sel]), np.array([s[1] for s in sel])
