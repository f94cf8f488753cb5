"""Command-line front end.

    hubbard-tpm single  --L 4 --U 10 --tau 10
    hubbard-tpm sweep   --config sweep.json --workers 4
    hubbard-tpm dist    --L 2 --U 1 --tau 1
    hubbard-tpm heatmap --quantity skew3 --L 4
    hubbard-tpm check   quick

Every configuration key is also a flag of the same name; flags override the
config file (flat ``key = value`` lines or a JSON object).  Exit codes:
0 success, 1 invariant failure, 2 configuration error, 3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import experiment, thermo, workstats
from .experiment import UNITS, SweepGrid
from .hamiltonian import HubbardParams, sector_operators
from .propagator import PropagationConfig, propagate
from .spectral import decompose, free_energy_difference, gibbs_weights

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3
JARZYNSKI_ABORT = 1e-6

log = logging.getLogger("hubbard_tpm")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model (energies in J, times in 1/J, beta in 1/J)
    L: int = 4
    U: float = 0.0
    tau: float = 0.0
    J: float = 1.0
    A: float = 10.0
    beta: float = 0.4
    # integrator
    scheme: str = "cf4"
    dt: float | None = None
    tol_unitary: float = 1e-10
    tol_observable: float = 1e-8
    weight_cutoff: float = 1e-12
    batch_size: int = 32
    max_halvings: int = 8
    cheb_tol: float = 1e-15
    threads: int = 1
    # distribution
    merge_tol: float = workstats.MERGE_TOL
    prob_floor: float = workstats.PROB_FLOOR
    # sweep
    L_values: tuple = (4, 6, 8)
    U_values: tuple = experiment.DEFAULT_U
    tau_values: tuple = experiment.DEFAULT_TAU
    densify: bool = False
    # run
    out: str = "hubbard_out"
    workers: int = 1
    verbosity: int = 0

    def params(self) -> HubbardParams:
        return HubbardParams(L=self.L, U=self.U, tau=self.tau, J=self.J, A=self.A, beta=self.beta)

    def propagation(self) -> PropagationConfig:
        return PropagationConfig(scheme=self.scheme, dt=self.dt, tol_unitary=self.tol_unitary,
                                 tol_observable=self.tol_observable, weight_cutoff=self.weight_cutoff,
                                 batch_size=self.batch_size, max_halvings=self.max_halvings,
                                 cheb_tol=self.cheb_tol, threads=self.threads)

    def grid(self) -> SweepGrid:
        return SweepGrid(L_values=self.L_values, U_values=self.U_values, tau_values=self.tau_values,
                         beta=self.beta, A=self.A, J=self.J, densify=self.densify)

    def validate(self) -> "RunConfig":
        """Build every derived object once so bad values fail before any work."""
        try:
            self.params()
            self.propagation()
            self.grid()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.A < 0:
            raise ConfigError("A must be non-negative")
        if self.merge_tol < 0 or self.prob_floor < 0:
            raise ConfigError("merge_tol and prob_floor must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    # -- serialisation -------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_flat(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                text = ",".join(repr(x) for x in v)
            elif v is None:
                text = "none"
            else:
                text = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = {}
        for key, raw in data.items():
            try:
                values[key] = _coerce(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        return cls(**values)


_INT_KEYS = {"L", "batch_size", "max_halvings", "threads", "workers", "verbosity"}
_TUPLE_KEYS = {"L_values": int, "U_values": float, "tau_values": float}


def _coerce(key: str, raw):
    """Convert a JSON value or a flat-file string to the field's type."""
    if key in _TUPLE_KEYS:
        conv = _TUPLE_KEYS[key]
        items = raw.split(",") if isinstance(raw, str) else raw
        return tuple(conv(x) for x in items if str(x).strip() != "")
    if key == "densify":
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return text in ("true", "1", "yes")
    if key in ("scheme", "out"):
        return str(raw).strip()
    if key == "dt" and (raw is None or str(raw).strip().lower() in ("none", "")):
        return None
    if key in _INT_KEYS:
        value = float(raw)
        if value != int(value):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(value)
    return float(raw)


def parse_flat(text: str) -> dict:
    data = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = value
    return data


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return data
    return parse_flat(text)


# -- argument parsing ---------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value or JSON config file")
    for f in fields(RunConfig):
        kind = "list" if f.name in _TUPLE_KEYS else None
        helptext = f"(default: {f.default!r})" if kind is None else "comma-separated list"
        p.add_argument(f"--{f.name}", dest=f.name, default=None, metavar=f.name.upper(), help=helptext)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hubbard-tpm",
                                     description=f"Work statistics of a driven Hubbard chain ({UNITS}).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("single", "run one (L, U, tau) point"),
                       ("sweep", "run an (L, U, tau) grid"),
                       ("dist", "export the work distribution of one point"),
                       ("heatmap", "heatmap of a sweep quantity over (U, tau)")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        if name == "heatmap":
            p.add_argument("--quantity", default="skew3", help="record column (default: skew3)")
            p.add_argument("--sweep-dir", help="sweep directory inside --out (default: --out itself)")
            p.add_argument("--svg", action="store_true", help="also write an SVG rendering")
        if name == "single":
            p.add_argument("--dump-config", action="store_true", help="write the resolved config to out/")
    p = sub.add_parser("check", help="invariant self-check suite")
    p.add_argument("level", nargs="?", choices=("quick", "full"), default="quick")
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    data = load_config(ns.config) if getattr(ns, "config", None) else {}
    for f in fields(RunConfig):
        value = getattr(ns, f.name, None)
        if value is not None:
            data[f.name] = value
    return RunConfig.from_mapping(data).validate()


def _inside(out: Path, path: Path) -> Path:
    resolved = path.resolve()
    if resolved != out.resolve() and out.resolve() not in resolved.parents:
        raise ConfigError(f"{path} lies outside the output directory {out}")
    return resolved


# -- commands -----------------------------------------------------------------

def _summary(res: experiment.PointResult) -> str:
    r, d, p = res.record, res.diagnostics, res.params
    lines = [
        f"# {UNITS}",
        f"L={p.L} U={p.U:g} tau={p.tau:g} beta={p.beta:g} A={p.A:g}",
        f"<W>            {r.mean_work: .10g}",
        f"Var W          {r.variance: .10g}",
        f"skew3          {r.skew3: .10g}",
        f"Delta F        {r.delta_F: .10g}",
        f"<Sigma>        {r.sigma: .10g}",
        f"D_eq           {r.d_eq: .10g}",
        f"D_adiab        {r.d_adiab: .10g}",
        f"FDR ratio      {r.fdr_ratio: .10g}",
        f"Jarzynski res  {d['jarzynski_residual']: .3e}",
    ]
    return "\n".join(lines)


def _check_point(res: experiment.PointResult) -> str | None:
    d = res.diagnostics
    if not d["jarzynski_residual"] <= JARZYNSKI_ABORT:
        return f"Jarzynski residual {d['jarzynski_residual']:.3e} exceeds {JARZYNSKI_ABORT:g}"
    return None


def cmd_single(cfg: RunConfig, dump_config: bool = False) -> int:
    out = Path(cfg.out)
    res = experiment.run_point(cfg.params(), cfg.propagation(), cfg.merge_tol, cfg.prob_floor)
    print(_summary(res))
    problem = _check_point(res)
    target = _inside(out, out / experiment.point_key(res.params))
    target.mkdir(parents=True, exist_ok=True)
    (target / "distribution.csv").write_text(experiment.distribution_csv(res.distribution))
    record = {"units": UNITS, "params": res.params.to_dict(), "record": res.record.to_dict(),
              "diagnostics": res.diagnostics}
    (target / "record.json").write_text(json.dumps(record, indent=2, default=float) + "\n")
    if dump_config:
        (target / "config.json").write_text(cfg.to_json())
    if problem:
        print(f"INVARIANT FAILURE: {problem}", file=sys.stderr)
        print(json.dumps(res.diagnostics, indent=2, default=float), file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_dist(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    res = experiment.run_point(cfg.params(), cfg.propagation(), cfg.merge_tol, cfg.prob_floor)
    path = _inside(out, out / f"dist_{experiment.point_key(res.params)}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(experiment.distribution_csv(res.distribution))
    print(f"{path}  ({len(res.distribution)} lines, {res.distribution.raw_pair_count} transitions)")
    problem = _check_point(res)
    if problem:
        print(f"INVARIANT FAILURE: {problem}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _sweep_summary(rows: list[dict]) -> str:
    lines = [f"# extrema along U ({UNITS})"]
    for L in sorted({r["L"] for r in rows}):
        for tau in sorted({r["tau"] for r in rows if r["L"] == L}):
            for q in ("skew3", "sigma", "d_eq", "fdr_ratio"):
                U, y = experiment.curve(rows, q, L, tau)
                if len(U) < 3:
                    continue
                ex = experiment.locate_extrema(U, y)
                fmt = lambda pts: ",".join(f"{u:.3g}" for u, _ in pts) or "-"
                zeros = ",".join(f"{z:.3g}" for z in ex.zero_crossings) or "-"
                lines.append(f"L={L} tau={tau:g} {q:9s} min@U={fmt(ex.minima)} max@U={fmt(ex.maxima)} "
                             f"zero@U={zeros}")
    return "\n".join(lines)


def cmd_sweep(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    start = time.perf_counter()

    def progress(i, n, res):
        if cfg.verbosity > 0:
            params, _, _, error, wall = res
            state = "ok" if error is None else f"FAILED ({error})"
            print(f"[{i}/{n}] {experiment.point_key(params)} {state} {wall:.1f}s "
                  f"(elapsed {time.perf_counter() - start:.0f}s)", file=sys.stderr, flush=True)

    manifest = experiment.run_sweep(cfg.grid(), cfg.propagation(), out, workers=cfg.workers,
                                    merge_tol=cfg.merge_tol, prob_floor=cfg.prob_floor, progress=progress)
    (out / "config.json").write_text(cfg.to_json())
    rows = experiment.load_records(out)
    ok = [r for r in rows if r["status"] == "ok"]
    print(_sweep_summary(ok))
    bad = [r for r in ok if not r["jarzynski_residual"] <= JARZYNSKI_ABORT]
    if manifest["failures"]:
        print(f"{manifest['failures']} point(s) failed; see {out / 'manifest.json'}", file=sys.stderr)
        return EXIT_PARTIAL
    if bad:
        print(f"INVARIANT FAILURE: Jarzynski residual above {JARZYNSKI_ABORT:g} at "
              f"{[(r['L'], r['U'], r['tau']) for r in bad]}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_heatmap(cfg: RunConfig, quantity: str, sweep_dir: str | None, svg: bool) -> int:
    out = Path(cfg.out)
    source = _inside(out, Path(sweep_dir)) if sweep_dir else out
    if not (source / "records.csv").exists():
        raise ConfigError(f"no sweep records in {source}")
    try:
        hm = experiment.extract_heatmap(source, quantity, cfg.L)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    stem = out / f"heatmap_{quantity}_L{cfg.L}"
    _inside(out, stem).parent.mkdir(parents=True, exist_ok=True)
    Path(f"{stem}.csv").write_text(experiment.heatmap_csv(hm))
    if svg:
        Path(f"{stem}.svg").write_text(experiment.heatmap_svg(hm))
    print(f"{stem}.csv  ({len(hm.tau)} tau x {len(hm.U)} U, {len(hm.missing)} missing)")
    if hm.missing:
        print(f"missing points: {hm.missing}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# -- self-checks ---------------------------------------------------------------

def _dimer_levels(U: float, J: float = 1.0) -> np.ndarray:
    r = math.sqrt(U * U + 16 * J * J)
    return np.sort([0.0, U, (U - r) / 2, (U + r) / 2])


def _free_fermion_levels(L: int) -> np.ndarray:
    from itertools import combinations
    eps = -2 * np.cos(np.arange(1, L + 1) * np.pi / (L + 1))
    fill = [sum(eps[list(c)]) for c in combinations(range(L), L // 2)]
    return np.sort([a + b for a in fill for b in fill])


def _ode_reference(params: HubbardParams) -> np.ndarray:
    """Full propagator from a dense adaptive ODE solve (independent of the Chebyshev path)."""
    from scipy.integrate import solve_ivp
    ops = sector_operators(params.L, params.J, params.A)
    Hs, D = ops.static(params.U).toarray(), ops.drive.diagonal()
    n = Hs.shape[0]

    def rhs(t, y):
        psi = y.reshape(n, n)
        return (-1j * (Hs @ psi + (t / params.tau) * D[:, None] * psi)).ravel()

    sol = solve_ivp(rhs, (0.0, params.tau), np.eye(n, dtype=complex).ravel(), method="DOP853",
                    rtol=1e-12, atol=1e-12)
    return sol.y[:, -1].reshape(n, n)


def _suite(level: str):
    checks = []

    def check(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @check("dimer spectrum matches closed form")
    def _():
        for U in (0.0, 1.5, 8.0):
            eigs = decompose(sector_operators(2).static(U)).eigenvalues
            assert np.allclose(eigs, _dimer_levels(U), atol=1e-12), eigs

    @check("U=0 spectrum is a sum of single-particle levels (L=4)")
    def _():
        eigs = decompose(sector_operators(4).static(0.0)).eigenvalues
        assert np.allclose(eigs, _free_fermion_levels(4), atol=1e-11)

    @check("propagator agrees with a dense ODE solve (L=2)")
    def _():
        params = HubbardParams(L=2, U=2.0, tau=1.0)
        ops = sector_operators(2)
        Hs = ops.static(params.U)
        spec0 = decompose(Hs)
        prop = propagate(spec0, Hs, ops.drive, params, PropagationConfig(tol_observable=1e-12),
                         ensemble0=gibbs_weights(spec0, params.beta))
        ref = _ode_reference(params) @ spec0.eigenvectors
        assert np.abs(prop.vectors - ref[:, prop.indices]).max() < 1e-8

    @check("Jarzynski and entropy identities (L<=4)")
    def _():
        for L, U, tau in ((2, 0.0, 0.0), (2, 3.0, 1.0), (4, 0.0, 0.5), (4, 5.0, 2.5), (4, 10.0, 10.0)):
            res = experiment.run_point(HubbardParams(L=L, U=U, tau=tau))
            d = res.diagnostics
            assert d["jarzynski_residual"] < 1e-8, (L, U, tau, d["jarzynski_residual"])
            assert d["sigma_identity_residual"] < 1e-8, (L, U, tau, d["sigma_identity_residual"])
            assert d["mean_crosscheck_residual"] < 1e-8, (L, U, tau)
            assert d["purity_drift"] < 1e-9, (L, U, tau)

    @check("no drive means no work (A=0)")
    def _():
        res = experiment.run_point(HubbardParams(L=4, U=3.0, tau=1.0, A=0.0))
        r = res.record
        assert abs(r.mean_work) < 1e-10 and abs(r.delta_F) < 1e-10
        assert abs(r.sigma) < 1e-9 and r.d_eq < 1e-9

    @check("trace distance is unitarily invariant")
    def _():
        rng = np.random.default_rng(7)
        n = 6
        X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        a, b = X @ X.conj().T, np.diag(rng.random(n)).astype(complex)
        a, b = a / np.trace(a), b / np.trace(b)
        d0 = thermo.trace_distance(thermo.DensityMatrix(a), thermo.DensityMatrix(b))
        d1 = thermo.trace_distance(thermo.DensityMatrix(Q @ a @ Q.conj().T), thermo.DensityMatrix(Q @ b @ Q.conj().T))
        assert abs(d0 - d1) < 1e-9

    if level == "full":
        @check("L=6 spot checks: identities and row-stochastic transitions")
        def _():
            for U, tau in ((0.0, 1.0), (6.0, 2.5)):
                params = HubbardParams(L=6, U=U, tau=tau)
                ops = sector_operators(6)
                Hs = ops.static(U)
                spec0, spec_f = decompose(Hs), decompose(Hs + ops.drive)
                prop = propagate(spec0, Hs, ops.drive, params, ensemble0=gibbs_weights(spec0, params.beta),
                                 spec_f=spec_f)
                table = workstats.transition_matrix(prop, spec_f, spec0)
                assert np.abs(table.row_sums - 1).max() < 1e-9
                dist = workstats.build_distribution(table)
                dF = free_energy_difference(spec0, spec_f, params.beta)
                assert workstats.jarzynski_residual(dist, params.beta, dF) < 1e-8

        @check("adiabatic limit: D(rho_tau, rho_adiab) < 1e-2 at L=2, tau=1000")
        def _():
            for U in (0.0, 5.0):
                res = experiment.run_point(HubbardParams(L=2, U=U, tau=1000.0))
                assert res.record.d_adiab < 1e-2, res.record.d_adiab

    return checks


def cmd_check(level: str) -> int:
    print(f"# self-check ({level}); {UNITS}")
    for name, fn in _suite(level):
        start = time.perf_counter()
        try:
            fn()
        except Exception as exc:  # report the first failing invariant by name
            print(f"FAIL  {name}: {type(exc).__name__}: {exc}")
            return EXIT_INVARIANT
        print(f"ok    {name}  ({time.perf_counter() - start:.2f}s)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command == "check":
        return cmd_check(ns.level)
    try:
        cfg = resolve_config(ns)
        logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2))
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        if ns.command == "single":
            return cmd_single(cfg, ns.dump_config)
        if ns.command == "dist":
            return cmd_dist(cfg)
        if ns.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_heatmap(cfg, ns.quantity, ns.sweep_dir, ns.svg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
