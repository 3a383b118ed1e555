"""Command-line front end.

Every option can come from a flag, from a JSON config file (``--config``)
or from the built-in default, in that order of precedence.  Config files
hold one flat object whose keys are the long option names with dashes
replaced by underscores; unknown keys are an error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from typing import Optional

import numpy as np

from . import datafiles
from .core import DegenerateRow, Grid, LogLikelihoodMatrix, SUPPORT_EPS, kkt_gap, neg_log_likelihood
from .grid import BOX, HULL, GridSpec, default_counts, mle_cloud, regular_grid
from .kernels import KernelId, as_kernel, loglik_matrix
from .posterior import marginalize, posterior_matrix, posterior_mean, sample_mixture
from .solvers import SolverConfig, solve

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
AUTO = "auto"

COMMON = {"kernel": None, "grid": None, "bounds_mode": BOX, "solver": "em", "tol": 1e-6,
          "max_iter": None, "seed": None, "input": None, "output": None}

# defaults per subcommand; the key set is also the set of accepted config keys
DEFAULTS = {
    "fit": dict(COMMON, trace=False),
    "posterior": dict(COMMON, fit=None, coords=None),
    "simulate": dict(COMMON, grid="30x30", mixing="dist1", reps=1, p=1000, n=16, estimators=None),
    "baseball": dict(COMMON, grid="30x30", kernel="poisson-binomial", cohorts="all,pitchers,non_pitchers"),
    "classify": dict(COMMON, grid="30x30", kernel="two-class-gaussian", test=None, independent=False),
    "glucose": dict(COMMON, model="SS", modes="Combined,Individual,NPMLE"),
    "sample": dict(COMMON, fit=None, n_draws=100, replicates=2, variance=1.0),
    "marginal": dict(COMMON, fit=None, dim=0),
    "synth": dict(COMMON, design=None, size=None),
}
RANDOMIZED = {"simulate", "sample", "synth"}
SYNTH_DESIGNS = ("gls-dist1", "gls-dist2", "baseball", "classify-shifted", "classify-correlated", "glucose")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}:1: config must be a JSON object")
    return cfg


def resolve_config(command: str, flags: dict, config: Optional[dict] = None) -> dict:
    """flag > config file > default, for every option of ``command``."""
    defaults = DEFAULTS[command]
    config = config or {}
    unknown = sorted(set(config) - set(defaults))
    if unknown:
        raise CliError(f"unknown config key(s) for {command!r}: {', '.join(unknown)}")
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in flags.items() if k in defaults})
    return out


def resolve_seed(command: str, seed):
    """Randomized commands need an explicit integer seed or ``auto``."""
    if seed is None:
        if command in RANDOMIZED:
            raise CliError(f"{command} is randomized: pass --seed N or --seed auto")
        return None
    if seed == AUTO:
        return int(np.random.SeedSequence().entropy % (2 ** 63))
    try:
        return int(seed)
    except (TypeError, ValueError):
        raise CliError(f"seed must be an integer or 'auto', got {seed!r}") from None


def solver_config(opts) -> SolverConfig:
    return SolverConfig(tol=float(opts["tol"]),
                        max_iter=None if opts["max_iter"] is None else int(opts["max_iter"]),
                        trace=bool(opts.get("trace", False)))


def _grid_spec(opts, d: int, p: int) -> GridSpec:
    if opts["grid"] is None:
        return GridSpec(default_counts(d, p), opts["bounds_mode"])
    return GridSpec.parse(opts["grid"], opts["bounds_mode"])


def _counts(opts):
    return GridSpec.parse(opts["grid"]).per_dim_counts


# ---------------------------------------------------------------------------
# output helpers


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def _write_csv(path, header, rows):
    fh = _open_out(path)
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _text_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _report(opts, header, rows):
    """CSV to --output (if given), text table to stdout."""
    if opts["output"] not in (None, "-"):
        _write_csv(opts["output"], header, rows)
    print(_text_table(header, rows))


def _fmt(x, digits=4):
    return "" if x is None else f"{x:.{digits}f}"


# ---------------------------------------------------------------------------
# fit files


def sparse_weights(w) -> np.ndarray:
    """Weights below the support threshold set to 0, the rest renormalised."""
    w = np.where(np.asarray(w, dtype=float) < SUPPORT_EPS, 0.0, w)
    return w / w.sum()


def fit_document(kernel_name, grid: Grid, L: LogLikelihoodMatrix, fit, solver, seed, wall) -> dict:
    w = sparse_weights(fit.weights)
    return {
        "kernel": kernel_name,
        "grid": {"atoms": grid.atoms.tolist(), "per_dim_counts": list(grid.per_dim_counts or [grid.q]),
                 "bounds": None if grid.bounds is None else [list(b) for b in grid.bounds],
                 "names": None if grid.names is None else list(grid.names)},
        "weights": w.tolist(),
        # recomputed at the serialised weights so a reload reproduces it
        "neg_log_lik": neg_log_likelihood(L, w),
        "iterations": fit.iterations,
        "kkt_gap": kkt_gap(L, w),
        "converged": bool(fit.converged),
        "solver": fit.solver_id,
        "seed": seed,
        "wall_seconds": wall,
    }


def load_fit(path):
    """(kernel name, Grid, weights) from a fit JSON."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    for key in ("kernel", "grid", "weights"):
        if key not in doc:
            raise CliError(f"{path}: missing key {key!r}")
    g = doc["grid"]
    names = g.get("names")
    grid = Grid(np.array(g["atoms"], dtype=float), per_dim_counts=tuple(g["per_dim_counts"]),
                bounds=None if g.get("bounds") is None else tuple(tuple(b) for b in g["bounds"]),
                names=None if names is None else tuple(names))
    w = np.array(doc["weights"], dtype=float)
    if w.shape != (grid.q,):
        raise CliError(f"{path}: {len(w)} weights for {grid.q} atoms")
    return doc["kernel"], grid, w / w.sum()


def _kernel_names(kernel: KernelId, d: int):
    if kernel is KernelId.GAUSSIAN_LOCATION and d > 1:
        return tuple(f"mu_{i + 1}" for i in range(d))
    return kernel.coord_names


def build_problem(opts):
    """(kernel name, ids, observations, grid, L) for the fit-like commands."""
    name = opts["kernel"]
    if name is None:
        raise CliError("--kernel is required")
    if opts["input"] is None:
        raise CliError("--input is required")
    if name == datafiles.LOGLIK_MATRIX:
        raw = datafiles.read_loglik_matrix(opts["input"])
        q = raw.shape[1]
        grid = Grid(np.arange(q, dtype=float), per_dim_counts=(q,), bounds=((0.0, q - 1.0),), names=("index",))
        return name, [str(j) for j in range(raw.shape[0])], None, grid, LogLikelihoodMatrix.from_log_densities(raw)
    kernel = as_kernel(name)
    ids, obs = datafiles.read_observations(kernel, opts["input"])
    cloud = mle_cloud(kernel, obs)
    d = cloud.shape[1]
    spec = _grid_spec(opts, d, len(obs))
    if kernel is KernelId.POISSON_BINOMIAL:
        from .applications.baseball import pi_bounds
        A = np.array([o.at_bats for o in obs])
        H = np.array([o.hits for o in obs])
        spec = GridSpec(spec.per_dim_counts, spec.bounds_mode, explicit_bounds=[None, pi_bounds(A, H)])
    grid = regular_grid(cloud, spec, names=_kernel_names(kernel, d))
    return name, ids, obs, grid, loglik_matrix(kernel, obs, grid)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(opts) -> int:
    seed = resolve_seed("fit", opts["seed"])
    name, _, _, grid, L = build_problem(opts)
    cfg = solver_config(opts)
    t0 = time.perf_counter()
    fit = solve(L, opts["solver"], cfg)
    wall = time.perf_counter() - t0
    doc = fit_document(name, grid, L, fit, opts["solver"], seed, wall)
    fh = _open_out(opts["output"])
    try:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    if not fit.converged:
        print(f"warning: not converged after {fit.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _coords(opts, grid: Grid):
    if opts["coords"] is None:
        return list(grid.names or range(grid.dim))
    out = []
    for c in str(opts["coords"]).split(","):
        c = c.strip()
        out.append(int(c) if c.isdigit() else c)
    return out


def cmd_posterior(opts) -> int:
    if opts["fit"] is None:
        raise CliError("--fit is required")
    kname, grid, w = load_fit(opts["fit"])
    if opts["kernel"] is not None and opts["kernel"] != kname:
        raise CliError(f"fit was computed for kernel {kname!r}, not {opts['kernel']!r}")
    if kname == datafiles.LOGLIK_MATRIX:
        raw = datafiles.read_loglik_matrix(opts["input"])
        ids = [str(j) for j in range(raw.shape[0])]
    else:
        kernel = as_kernel(kname)
        ids, obs = datafiles.read_observations(kernel, opts["input"])
        from .kernels import log_density_matrix
        try:
            raw = log_density_matrix(kernel, obs, grid)
        except Exception as exc:
            raise CliError(f"{opts['input']}: data do not match the fitted {kname!r} grid ({exc})") from None
    if raw.shape[1] != grid.q:
        raise CliError(f"{opts['input']}: {raw.shape[1]} columns for a grid of {grid.q} atoms")
    post = posterior_matrix(raw, w)
    coords = _coords(opts, grid)
    cols = [posterior_mean(post, grid, c) for c in coords]
    rows = [[i] + [repr(float(col[j])) for col in cols] for j, i in enumerate(ids)]
    _write_csv(opts["output"], ["id"] + [str(c) for c in coords], rows)
    return EXIT_OK


def cmd_simulate(opts) -> int:
    from .applications.simulation import ALL_ESTIMATORS, SimConfig, run_sim_study
    seed = resolve_seed("simulate", opts["seed"])
    cfg = SimConfig(p=int(opts["p"]), n=int(opts["n"]), mixing_id=opts["mixing"], reps=int(opts["reps"]), seed=seed)
    est = ALL_ESTIMATORS if opts["estimators"] is None else tuple(str(opts["estimators"]).split(","))
    grids = tuple(GridSpec.parse(g).per_dim_counts for g in str(opts["grid"]).split(","))
    res = run_sim_study(cfg, est, grids, solver_config(opts))
    rows = res.table_rows()
    header = ["estimator", "grid", "tse", "delta_loglik_x1e4", "seconds", "reps"]
    print(f"# mixing={cfg.mixing_id} p={cfg.p} n={cfg.n} reps={cfg.reps} seed={seed}")
    _report(opts, header, [[r[h] for h in header] for r in rows])
    return EXIT_OK


def cmd_baseball(opts) -> int:
    from .applications.baseball import baseball_pipeline, read_baseball_csv
    if opts["input"] is None:
        raise CliError("--input is required")
    records = read_baseball_csv(opts["input"])
    cohorts = tuple(c.strip() for c in str(opts["cohorts"]).split(","))
    res = baseball_pipeline(records, _counts(opts), opts["solver"], solver_config(opts), cohorts)
    rows = []
    for c in cohorts:
        r = res[c]
        for est in ("mle", "grand_mean", "npmle"):
            rows.append([c, est, r.n_train, r.n_test, _fmt(r.tse[est]), _fmt(r.relative_tse[est], 3)])
    _report(opts, ["cohort", "estimator", "n_train", "n_test", "tse", "relative_tse"], rows)
    return EXIT_OK


def cmd_classify(opts) -> int:
    from .applications.classifier import confusion, fit_classifier, predict, read_matrix_csv
    if opts["input"] is None or opts["test"] is None:
        raise CliError("--input (training matrix) and --test are required")
    Xtr, ytr = read_matrix_csv(opts["input"])
    labelled = True
    try:
        Xte, yte = read_matrix_csv(opts["test"])
    except ValueError:
        Xte, yte = read_matrix_csv(opts["test"], labelled=False)
        labelled = False
    if Xte.shape[1] != Xtr.shape[1]:
        raise CliError(f"{opts['test']}: {Xte.shape[1]} features, training data has {Xtr.shape[1]}")
    model = fit_classifier(Xtr, ytr, _counts(opts), joint=not opts["independent"], solver_cfg=solver_config(opts))
    pred = predict(model, Xte)
    if opts["output"] not in (None, "-"):
        _write_csv(opts["output"], ["row", "predicted"] + (["label"] if labelled else []),
                   [[i, int(p)] + ([int(yte[i])] if labelled else []) for i, p in enumerate(pred)])
    if labelled:
        c = confusion(yte, pred)
        print(_text_table(["", "predicted 0", "predicted 1"],
                          [["true 0", c["tn"], c["fp"]], ["true 1", c["fn"], c["tp"]]]))
        print(f"errors: {c['errors']} of {c['n']}")
    else:
        print(" ".join(str(int(p)) for p in pred))
    return EXIT_OK


def cmd_glucose(opts) -> int:
    from .applications.glucose import glucose_pipeline, read_glucose_csv
    if opts["input"] is None:
        raise CliError("--input is required")
    subjects = read_glucose_csv(opts["input"])
    model = str(opts["model"]).upper()
    counts = None if opts["grid"] is None else _counts(opts)
    rows = []
    for mode in str(opts["modes"]).split(","):
        r = glucose_pipeline(subjects, model, mode.strip(), counts, solver_cfg=solver_config(opts))
        rows.append([model, r.mode, len(r.subject_ids), _fmt(r.mse), _fmt(r.relative_mse, 3)])
    _report(opts, ["model", "mode", "subjects", "mse", "relative_mse"], rows)
    return EXIT_OK


def cmd_sample(opts) -> int:
    seed = resolve_seed("sample", opts["seed"])
    if opts["fit"] is None:
        raise CliError("--fit is required")
    kname, grid, w = load_fit(opts["fit"])
    if kname == datafiles.LOGLIK_MATRIX:
        raise CliError("a loglik-matrix fit has no sampling model")
    kernel = as_kernel(kname)
    labels = None
    if kernel is KernelId.TWO_CLASS_GAUSSIAN:
        labels = [0] * int(opts["replicates"]) + [1] * int(opts["replicates"])
    idx, draws = sample_mixture(kernel, grid, w, int(opts["n_draws"]), seed, int(opts["replicates"]),
                                float(opts["variance"]), labels)
    names = list(grid.names or [f"t{i}" for i in range(grid.dim)])
    header = ["draw", "atom"] + names + [f"x{i}" for i in range(draws.shape[1])]
    rows = [[j, int(k)] + [repr(float(v)) for v in grid.atoms[k]] + [repr(float(v)) if np.issubdtype(draws.dtype, np.floating)
                                                                       else int(v) for v in draws[j]]
            for j, k in enumerate(idx)]
    _write_csv(opts["output"], header, rows)
    return EXIT_OK


def cmd_marginal(opts) -> int:
    if opts["fit"] is None:
        raise CliError("--fit is required")
    _, grid, w = load_fit(opts["fit"])
    dim = opts["dim"]
    if isinstance(dim, str) and not dim.isdigit():
        if grid.names is None or dim not in grid.names:
            raise CliError(f"fit has no coordinate {dim!r}")
        dim = grid.names.index(dim)
    rows = [[repr(v), repr(m)] for v, m in marginalize(grid, w, int(dim))]
    _write_csv(opts["output"], ["value", "mass"], rows)
    return EXIT_OK


def cmd_synth(opts) -> int:
    """Write a synthetic dataset in the format the other subcommands read."""
    seed = resolve_seed("synth", opts["seed"])
    design = opts["design"]
    out = opts["output"]
    if design not in SYNTH_DESIGNS:
        raise CliError(f"--design must be one of {', '.join(SYNTH_DESIGNS)}")
    if out in (None, "-"):
        raise CliError("--output is required")
    size = None if opts["size"] is None else int(opts["size"])
    if design.startswith("gls"):
        from .applications.simulation import SimConfig, simulate_gls
        data, _, _ = simulate_gls(SimConfig(p=size or 1000, mixing_id=design[-1], seed=seed))
        datafiles.write_observations(KernelId.GAUSSIAN_LOCATION_SCALE, out, [f"o{j}" for j in range(len(data))], data)
    elif design == "baseball":
        from .applications.baseball import synthetic_records, write_baseball_csv
        write_baseball_csv(out, synthetic_records(seed, size or 600))
    elif design.startswith("classify"):
        from .applications.classifier import synthetic_correlated, synthetic_shifted, write_matrix_csv
        gen = synthetic_shifted if design.endswith("shifted") else synthetic_correlated
        Xtr, ytr, Xte, yte = gen(seed, p=size or 500)
        write_matrix_csv(out, Xtr, ytr)
        test_path = out[:-4] + "_test.csv" if out.endswith(".csv") else out + "_test"
        write_matrix_csv(test_path, Xte, yte)
        print(f"wrote {out} and {test_path}")
    else:
        from .applications.glucose import synthetic_subjects, write_glucose_csv
        write_glucose_csv(out, synthetic_subjects(seed, size or 60))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "posterior": cmd_posterior, "simulate": cmd_simulate, "baseball": cmd_baseball,
            "classify": cmd_classify, "glucose": cmd_glucose, "sample": cmd_sample, "marginal": cmd_marginal,
            "synth": cmd_synth}


# ---------------------------------------------------------------------------
# argument parsing


def _common(p):
    S = argparse.SUPPRESS
    p.add_argument("--kernel", default=S, help="kernel id, or 'loglik-matrix' for a raw matrix CSV")
    p.add_argument("--grid", default=S, help="per-dimension counts, e.g. 30x30")
    p.add_argument("--bounds-mode", dest="bounds_mode", choices=(BOX, HULL), default=S)
    p.add_argument("--solver", choices=("em", "fw"), default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=S)
    p.add_argument("--seed", default=S, help="integer seed, or 'auto'")
    p.add_argument("--input", default=S)
    p.add_argument("--output", default=S)
    p.add_argument("--config", default=S, help="JSON file of option values")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="npmle", description="Approximate NPMLE of mixing distributions.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", help="fit mixing weights on a grid")
    _common(p)
    p.add_argument("--trace", action="store_true", default=S, help="per-iteration CSV on stderr")
    p = sub.add_parser("posterior", help="posterior means per observation")
    _common(p)
    p.add_argument("--fit", default=S)
    p.add_argument("--coords", default=S, help="comma-separated coordinate names or indices")
    p = sub.add_parser("simulate", help="location-scale simulation study")
    _common(p)
    p.add_argument("--mixing", choices=("dist1", "dist2", "1", "2"), default=S)
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--p", type=int, default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--estimators", default=S)
    p = sub.add_parser("baseball", help="batting average prediction")
    _common(p)
    p.add_argument("--cohorts", default=S)
    p = sub.add_parser("classify", help="two-class empirical Bayes classifier")
    _common(p)
    p.add_argument("--test", default=S)
    p.add_argument("--independent", action="store_true", default=S, help="product of two 1-D priors")
    p = sub.add_parser("glucose", help="fingerstick glucose prediction")
    _common(p)
    p.add_argument("--model", choices=("LM", "SS", "lm", "ss"), default=S)
    p.add_argument("--modes", default=S)
    p = sub.add_parser("sample", help="draw observations from a fitted mixture")
    _common(p)
    p.add_argument("--fit", default=S)
    p.add_argument("--n-draws", dest="n_draws", type=int, default=S)
    p.add_argument("--replicates", type=int, default=S)
    p.add_argument("--variance", type=float, default=S)
    p = sub.add_parser("marginal", help="marginal of a fitted mixture along one coordinate")
    _common(p)
    p.add_argument("--fit", default=S)
    p.add_argument("--dim", default=S)
    p = sub.add_parser("synth", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--design", choices=SYNTH_DESIGNS, default=S)
    p.add_argument("--size", type=int, default=S)
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    try:
        config = load_config(args.pop("config")) if "config" in args else None
        opts = resolve_config(command, args, config)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[command](opts)
    except (CliError, DegenerateRow, ValueError, KeyError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
