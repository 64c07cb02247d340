"""Command line front end: ``ybmodel <command> [options]``.

Outputs go under ``--out`` (default ``runs``); every command also writes
``<command>.manifest.json`` with the resolved configuration, its hash, the
seed and library versions.  ``ybmodel replay MANIFEST`` re-runs it.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 missing
prerequisite.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from fractions import Fraction
from pathlib import Path

import numba
import numpy as np

from . import __version__, _kernels, ensemble, entropy, homoclinic, projection, spectral, storage
from .model import DomainError, ModelParams, as_state, trajectory

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISSING = 0, 1, 2, 3

SCALES = {
    "desk": {"ensemble_size": 50, "snapshot_count": 256},
    "full": {"ensemble_size": 400, "snapshot_count": 1024},
}


class UsageError(Exception):
    pass


class MissingPrerequisite(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    params: ModelParams = ModelParams()
    master_seed: int = 2018
    ensemble_size: int = 400
    burn_pairs: int = 10_000
    snapshot_count: int = 1024
    output_dir: str = "runs"

    def __post_init__(self):
        for name in ("ensemble_size", "burn_pairs", "snapshot_count"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(Fraction(value.strip()))
    return value.strip()


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(args) -> RunConfig:
    """Defaults, then the scale preset, then the config file, then explicit flags."""
    param_fields = {f.name: f.default for f in dataclasses.fields(ModelParams)}
    run_fields = {f.name: f.default for f in dataclasses.fields(RunConfig) if f.name != "params"}
    params: dict = {}
    run: dict = {}
    if args.scale:
        run.update(SCALES[args.scale])
    if args.config:
        try:
            entries = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        for key, value in entries.items():
            if key in param_fields:
                default = param_fields[key]
                params[key] = None if value.lower() == "none" else _coerce(
                    value, default if default is not None else 0)
            elif key in run_fields:
                run[key] = _coerce(value, run_fields[key])
            else:
                raise UsageError(f"unknown config key {key!r}")
    if args.seed is not None:
        run["master_seed"] = args.seed
    if args.out is not None:
        run["output_dir"] = args.out
    try:
        return RunConfig(params=ModelParams(**params), **run)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def write_manifest(cfg: RunConfig, command: str, argv: list[str], outputs: list[str]) -> Path:
    out = Path(cfg.output_dir)
    manifest = {
        "command": command,
        "argv": argv,
        "config": cfg.as_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.master_seed,
        "outputs": sorted(outputs),
        "versions": {
            "ybmodel": __version__,
            "numpy": np.__version__,
            "numba": numba.__version__,
            "python": platform.python_version(),
        },
    }
    path = out / f"{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _radius(text: str) -> float:
    try:
        d = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if d <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return d


def _ensemble_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "ensemble"


def _load_ensemble(cfg):
    d = _ensemble_dir(cfg)
    if not (d / "ensemble.json").exists():
        raise MissingPrerequisite(f"no ensemble in {d}; run 'ybmodel ensemble' first")
    return ensemble.load_ensemble(d, cfg.params)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---- commands ---------------------------------------------------------------

def cmd_simulate(cfg, args):
    rng = ensemble.make_rng(ensemble.file_seed(cfg.master_seed, 0))
    x0 = ensemble.random_initial(rng, cfg.params)
    series = trajectory(x0, cfg.params, args.years)
    path = Path(cfg.output_dir) / "trajectory.csv"
    with open(path, "w") as fh:
        fh.write("t,N\n")
        for t, v in enumerate(series):
            fh.write(f"{t},{_fmt(v)}\n")
    fresh = series[cfg.params.dim:]
    print(f"wrote {len(series)} values ({len(fresh)} fresh) to {path}")
    return [path]


def cmd_fixed_point(cfg, args):
    params = cfg.params
    raw = spectral.load_reference_point(args.point)
    res = spectral.newton_polish(raw, params, tol=args.tol)
    if not res.converged:
        raise ArithmeticError(f"Newton polish did not converge (sup residual {res.sup_residual:.3g})")
    eig = spectral.spectrum(spectral.jacobian_T2(res.point, params))
    out = Path(cfg.output_dir) / "fixed_point"
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "reference_point.txt", raw, fmt="%.17g")
    np.savetxt(out / "polished_point.txt", res.point, fmt="%.17g")
    report = {
        "sup_residual": res.sup_residual,
        "l1_residual": res.l1_residual,
        "newton_iterations": res.iterations_used,
        "first_coordinate": float(res.point[0]),
        "dominant_eigenvalue": eig.dominant,
        "subdominant_modulus": eig.subdominant_modulus,
        "power_iterations": eig.power_iterations,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    for k, v in report.items():
        print(f"{k}: {v}")
    return [out / "reference_point.txt", out / "polished_point.txt", out / "report.json"]


def cmd_ensemble(cfg, args):
    out = _ensemble_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    files = ensemble.generate_ensemble(
        cfg.master_seed, cfg.ensemble_size, cfg.params, cfg.burn_pairs, cfg.snapshot_count,
        out_dir=out, progress=lambda k, n: _log(f"file {k}/{n}"),
    )
    print(f"wrote {len(files)} files of {len(files[0].labels)} records to {out}")
    return [out / ensemble.SNAPSHOT_PATTERN.format(f.file_id) for f in files] + [out / "ensemble.json"]


def cmd_perturb(cfg, args):
    files = _load_ensemble(cfg)
    f = next((f for f in files if f.file_id == args.file_id), None)
    if f is None:
        raise UsageError(f"no file {args.file_id} in the ensemble")
    base = f.states[args.record]
    rng = ensemble.make_rng(ensemble.file_seed(cfg.master_seed, f.file_id))
    pert = ensemble.perturb(base, args.magnitude, rng, cfg.params, args.extended)
    path = Path(cfg.output_dir) / f"perturbed_{f.file_id:04d}_{args.record}.csv"
    with open(path, "w") as fh:
        fh.write("k,original,perturbed\n")
        for k, (a, b) in enumerate(zip(base, pert)):
            fh.write(f"{k},{_fmt(a)},{np.format_float_positional(b, unique=True)}\n")
    print(f"sup distance {ensemble.sup_distance(base.astype(pert.dtype), pert, cfg.params):.3g}")
    return [path]


def _magnitudes(cfg, args, n):
    if args.magnitude_range:
        lo, hi = args.magnitude_range
        if not 0 < lo <= hi:
            raise UsageError("--magnitude-range needs 0 < LO <= HI")
        rng = ensemble.make_rng(ensemble.file_seed(cfg.master_seed, 2**31))
        return np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    return np.full(n, args.magnitude)


def cmd_sensitivity(cfg, args):
    files = _load_ensemble(cfg)
    mags = _magnitudes(cfg, args, len(files))
    rep = ensemble.sensitivity(files, mags, args.d0, args.cap, cfg.master_seed,
                               cfg.params, args.extended)
    path = Path(cfg.output_dir) / "sensitivity.csv"
    with open(path, "w") as fh:
        fh.write("file_id,magnitude,realized,b\n")
        for f, u, r, b in zip(files, rep.perturbation_magnitude, rep.realized_norms, rep.per_file_b):
            fh.write(f"{f.file_id},{_fmt(u)},{_fmt(r)},{b}\n")
    print(f"mean b = {rep.mean_b:.3f}, max b = {rep.per_file_b.max()}, d0 = {rep.d0}")
    return [path]


def cmd_dispersion(cfg, args):
    rep = ensemble.dispersion(_load_ensemble(cfg))
    path = Path(cfg.output_dir) / "dispersion.json"
    path.write_text(json.dumps({"grand_mean": rep.grand_mean, "abs_deviation": rep.abs_deviation,
                                "per_file_means": rep.per_file_means.tolist()}, indent=2) + "\n")
    print(f"grand mean = {rep.grand_mean:.6f}, mean absolute deviation = {rep.abs_deviation:.6f}")
    return [path]


def _match_path(cfg, d):
    return Path(cfg.output_dir) / "entropy" / f"matches_{d:.17g}.ybm"


def cmd_entropy_collect(cfg, args):
    files = _load_ensemble(cfg)
    recs = entropy.collect_matches(files, args.d, cfg.params)
    path = _match_path(cfg, args.d)
    path.parent.mkdir(parents=True, exist_ok=True)
    storage.write_matches(path, cfg.params.steps_per_year, recs)
    print(f"{len(recs)} matches within d = {args.d:.17g} written to {path}")
    return [path]


def _read_matches(path):
    _, rec = storage.read_matches(path)
    return [entropy.MatchRecord(int(r["file_j"]), int(r["iter_j"]), np.array(r["state_j"]),
                                int(r["file_i"]), int(r["iter_i"]), np.array(r["state_i"]))
            for r in rec]


def cmd_entropy_estimate(cfg, args):
    path = Path(args.matches) if args.matches else _match_path(cfg, args.d)
    if not path.exists():
        raise MissingPrerequisite(f"no match stream {path}; run 'ybmodel entropy-collect --d ...' first")
    recs = _read_matches(path)
    samples = entropy.dedup(entropy.escape_times(recs, args.d, cfg.params, args.cap))
    est = entropy.estimate(samples, args.d, cap=args.cap, analytic_sigma=args.analytic_sigma)
    out = path.with_suffix(".estimate.json")
    out.write_text(json.dumps(dataclasses.asdict(est), indent=2) + "\n")
    print(f"d = {est.d:.17g}: M = {est.sample_count}, mean b = {est.mean_escape:.6f}, "
          f"K = {est.k_hat:.6f} +/- {est.sigma_k:.6f} per two years "
          f"({est.per_year:.6f} per year), capped = {est.capped}")
    return [out]


def cmd_entropy_sweep(cfg, args):
    files = _load_ensemble(cfg)
    rows = []
    for d in entropy.sweep_grid():
        rows += entropy.sweep(files, cfg.params, grid=[d], cap=args.cap)
        r = rows[-1]
        _log(f"d = {d:.17g}: " + (f"K = {r.estimate.k_hat:.6f}" if r.estimate else r.note))
    path = Path(cfg.output_dir) / "entropy_sweep.csv"
    entropy.write_sweep_csv(path, rows)
    print(f"wrote {len(rows)} rows to {path}")
    return [path]


def _fixed_point_dir(cfg) -> Path:
    d = Path(cfg.output_dir) / "fixed_point"
    if not (d / "reference_point.txt").exists():
        raise MissingPrerequisite(f"no fixed point in {d}; run 'ybmodel fixed-point' first")
    return d


def _period_point(cfg, which):
    return np.loadtxt(_fixed_point_dir(cfg) / f"{which}_point.txt")


def cmd_homoclinic_scan(cfg, args):
    p_hat = _period_point(cfg, args.which)
    seg = homoclinic.unstable_segment(p_hat, cfg.params, args.s)
    best, best_j = homoclinic.return_table(seg, p_hat, cfg.params, args.subdivisions,
                                           args.max_pairs, args.skip)
    cand = homoclinic.pick_candidate(best, best_j, args.subdivisions, args.skip)
    out = Path(cfg.output_dir) / "homoclinic"
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "scan.npz", best=best, best_j=best_j)
    info = {"which": args.which, "s": args.s, "segment_length": seg.length,
            **dataclasses.asdict(cand)}
    (out / "candidate.json").write_text(json.dumps(info, indent=2) + "\n")
    print(f"segment length {seg.length:.4g}; closest return m = {cand.subdivision_index}"
          f"/{cand.subdivisions}, j0 = {cand.j0}, distance {cand.min_distance:.6g}")
    return [out / "scan.npz", out / "candidate.json"]


def cmd_homoclinic_refine(cfg, args):
    out = Path(cfg.output_dir) / "homoclinic"
    cpath = out / "candidate.json"
    if not cpath.exists():
        raise MissingPrerequisite(f"no candidate in {out}; run 'ybmodel homoclinic-scan' first")
    info = json.loads(cpath.read_text())
    p_hat = _period_point(cfg, info["which"])
    seg = homoclinic.unstable_segment(p_hat, cfg.params, info["s"])
    cand = homoclinic.ReturnCandidate(info["subdivision_index"], info["min_distance"],
                                      info["j0"], info["subdivisions"])
    plan = tuple(int(v) for v in args.plan.split(","))
    ref = homoclinic.refine(seg, cand, p_hat, cfg.params, args.gap_exponent, plan=plan,
                            ratio_tol=args.ratio_tol)
    stem = out / f"refine_{args.gap_exponent:.2f}"
    homoclinic.write_transcript(stem.with_suffix(".txt"), ref)
    homoclinic.write_angles_csv(stem.with_suffix(".csv"), ref)
    angles = ", ".join(f"{a:.5g}" for a in ref.diagnostics.per_iterate_angles)
    print(f"verdict {ref.diagnostics.verdict}; angles {angles}")
    return [stem.with_suffix(".txt"), stem.with_suffix(".csv")]


def cmd_project(cfg, args):
    params = cfg.params
    out = Path(cfg.output_dir)
    written = []
    ens_rows = None
    if args.source in ("ensemble", "both"):
        files = _load_ensemble(cfg)
        ens_rows = projection.project(np.vstack([f.post_burn for f in files]), params)
        path = out / "projection_ensemble.csv"
        projection.write_csv(path, ens_rows, params)
        written.append(path)
    if args.source in ("unstable", "both"):
        p_hat = _period_point(cfg, "reference")
        seg = homoclinic.unstable_segment(p_hat, params, 19)
        orbit = _kernels.snapshots(as_state(seg.point(1, 2), params), 1, args.iterates,
                                   2 * params.steps_per_year, *params._tables.args())
        rows = projection.project(orbit, params)
        path = out / "projection_unstable.csv"
        projection.write_csv(path, rows, params)
        written.append(path)
        if ens_rows is not None:
            print(f"bounding-box overlap with the ensemble: {projection.box_overlap(rows, ens_rows):.3f}")
    print("wrote " + ", ".join(str(p) for p in written))
    return written


def cmd_replay(cfg, args):
    manifest = json.loads(Path(args.manifest).read_text())
    return main(manifest["argv"])


COMMANDS = {
    "simulate": cmd_simulate,
    "fixed-point": cmd_fixed_point,
    "ensemble": cmd_ensemble,
    "perturb": cmd_perturb,
    "sensitivity": cmd_sensitivity,
    "dispersion": cmd_dispersion,
    "entropy-collect": cmd_entropy_collect,
    "entropy-estimate": cmd_entropy_estimate,
    "entropy-sweep": cmd_entropy_sweep,
    "homoclinic-scan": cmd_homoclinic_scan,
    "homoclinic-refine": cmd_homoclinic_refine,
    "project": cmd_project,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p, suppress: bool):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", metavar="PATH", help="key = value config file", **kw)
    p.add_argument("--seed", type=int, metavar="U64", help="master seed", **kw)
    p.add_argument("--out", metavar="DIR", help="output directory", **kw)
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk", dest="scale", action="store_const", const="desk",
                       help="50 files x 256 snapshots", **kw)
    scale.add_argument("--paper-scale", dest="scale", action="store_const", const="full",
                       help="400 files x 1024 snapshots", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ybmodel", description=__doc__.splitlines()[0])
    _add_common(parser, suppress=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _add_common(p, suppress=True)
        return p

    p = add("simulate", "write one seeded trajectory as CSV")
    p.add_argument("--years", type=int, default=10)
    p = add("fixed-point", "polish the period-2 point and report its spectrum")
    p.add_argument("--point", metavar="PATH", help="starting point (default: packaged)")
    p.add_argument("--tol", type=float, default=1e-12)
    add("ensemble", "generate the snapshot files")
    p = add("perturb", "perturb one stored state")
    p.add_argument("--file-id", type=int, default=1)
    p.add_argument("--record", type=int, default=1)
    p.add_argument("--magnitude", type=float, default=2.0**-50)
    p.add_argument("--extended", action="store_true", help="keep the result in extended precision")
    p = add("sensitivity", "divergence times of perturbed ensemble states")
    p.add_argument("--magnitude", type=float, default=2.0**-50)
    p.add_argument("--magnitude-range", type=float, nargs=2, metavar=("LO", "HI"),
                   help="per-file magnitudes, log-uniform in [LO, HI]")
    p.add_argument("--d0", type=float, default=0.1)
    p.add_argument("--cap", type=int, default=10_000)
    p.add_argument("--extended", action="store_true",
                   help="iterate in extended precision (needed below ~1e-16)")
    add("dispersion", "ensemble mean and mean absolute deviation")
    p = add("entropy-collect", "close cross-file pairs at radius d")
    p.add_argument("--d", type=_radius, required=True, help="radius, e.g. 1/1024")
    p = add("entropy-estimate", "escape times and entropy from a match stream")
    p.add_argument("--d", type=_radius, required=True)
    p.add_argument("--matches", metavar="PATH")
    p.add_argument("--cap", type=int, default=entropy.DEFAULT_CAP)
    p.add_argument("--analytic-sigma", action="store_true")
    p = add("entropy-sweep", "entropy over the 32-radius grid")
    p.add_argument("--cap", type=int, default=entropy.DEFAULT_CAP)
    p = add("homoclinic-scan", "closest returns of the unstable arc")
    p.add_argument("--s", type=int, default=19)
    p.add_argument("--subdivisions", type=int, default=10_000)
    p.add_argument("--max-pairs", type=int, default=1024)
    p.add_argument("--skip", type=int, default=20)
    p.add_argument("--which", choices=("reference", "polished"), default="reference")
    p = add("homoclinic-refine", "march the best candidate and classify")
    p.add_argument("--gap-exponent", type=float, required=True)
    p.add_argument("--plan", default="10,8,2")
    p.add_argument("--ratio-tol", type=float, default=1.0001)
    p = add("project", "3-D projection CSV")
    p.add_argument("--source", choices=("ensemble", "unstable", "both"), default="ensemble")
    p.add_argument("--iterates", type=int, default=1000)
    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(None, args)
        cfg = build_config(args)
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, args)
        write_manifest(cfg, args.command, argv, [str(p) for p in outputs])
    except UsageError as exc:
        print(f"ybmodel: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingPrerequisite, FileNotFoundError) as exc:
        print(f"ybmodel: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ArithmeticError, DomainError, spectral.NewtonError, homoclinic.HomoclinicError,
            ValueError) as exc:
        print(f"ybmodel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
