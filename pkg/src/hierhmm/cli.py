"""Command-line interface: ``hierhmm fit|decode|simulate|residuals|summarize``.

Exit codes: 0 success, 2 usage or configuration error, 3 data validation
error, 4 numerical failure.  On failure one line ``error[<category>]:
<message>`` goes to stderr.  States, segments and time indices in output
files are numbered from 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np
from scipy import stats

from . import errors
from .estimation import fit
from .hier_hmm import decode, hierarchical_pseudo_residuals, simulate_hierarchical
from .io import atomic_write, csv_text, ingest, load_config, load_model, save_model
from .report import (
    density_curves,
    format_model,
    long_run_weights,
    stationary_distributions,
)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

class UsageError(errors.HierHMMError):
    category = "usage"


_EXIT_CODES = [
    ((errors.ConfigError, UsageError), EXIT_USAGE),
    ((errors.SchemaError, errors.DataValidationError, errors.DomainError, errors.LayoutError), EXIT_DATA),
    (errors.HierHMMError, EXIT_NUMERIC),
]


def _parser():
    p = argparse.ArgumentParser(prog="hierhmm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model by maximum likelihood")
    f.add_argument("data")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--restarts", type=int, default=10)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--max-iter", type=int, default=5000)
    f.add_argument("--method", choices=["quasi-newton", "nelder-mead"], default="quasi-newton")
    f.add_argument("--init", help="model file to start restart 0 from")

    d = sub.add_parser("decode", help="two-stage Viterbi decoding")
    d.add_argument("data")
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--config", help="read the data with this configuration instead of the model's")
    d.add_argument("--figure", help="also write a PNG of the decoded series")

    s = sub.add_parser("simulate", help="simulate data from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--segments", type=int, required=True, help="segments per animal")
    s.add_argument("--lengths", required=True, help="N, LO-HI (uniform), or a comma list of M lengths")
    s.add_argument("--animals", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    r = sub.add_parser("residuals", help="pseudo-residuals given the decoded states")
    r.add_argument("data")
    r.add_argument("--model", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--seed", type=int, default=0, help="seed for randomized residuals at point masses")
    r.add_argument("--figure", help="also write a PNG normal Q-Q plot")

    m = sub.add_parser("summarize", help="print parameters and write density-curve files")
    m.add_argument("--model", required=True)
    m.add_argument("--outdir", help="directory for density tables and figures (default: <model>_summary)")
    m.add_argument("--no-figures", action="store_true", help="write the CSV tables only")
    m.add_argument("--grid", type=int, default=400)
    return p


def _load_data(args, config):
    if getattr(args, "config", None) and args.command != "fit":
        config = load_config(args.config)
    return ingest(args.data, config), config


def cmd_fit(args, out):
    config = load_config(args.config)
    data, _ = _load_data(args, config)
    init = load_model(args.init)[0] if args.init else None
    started = time.perf_counter()
    result = fit(
        data, config.model_spec(), restarts=args.restarts, seed=args.seed, tol=args.tol,
        max_iter=args.max_iter, method=args.method, init=init,
    )
    elapsed = time.perf_counter() - started
    info = {
        "loglik": result.loglik, "aic": result.aic, "bic": result.bic,
        "n_params": result.n_params, "n_obs": result.n_obs, "n_segments": data.m_segments,
        "converged": result.converged, "restarts": args.restarts, "seed": args.seed,
        "best_restart_seed": result.best_restart_seed, "method": args.method,
    }
    save_model(args.out, result.model, config, info)
    print(result.summary(), file=out)
    print(f"runtime: {elapsed:.2f} s", file=sys.stderr)
    return 0


def _decoded_rows(data, decoded, config):
    header = ([config.animal_column] if config.animal_column else []) + [
        "segment", "internal_state", "time_index", "production_state"
    ]
    rows = []
    for m, (k, path) in enumerate(zip(decoded.internal, decoded.production)):
        prefix = [data.groups[m]] if config.animal_column else []
        for t, s in enumerate(path):
            rows.append(prefix + [m + 1, int(k) + 1, t + 1, int(s) + 1])
    return header, rows


def cmd_decode(args, out):
    model, config, _ = load_model(args.model)
    data, config = _load_data(args, config)
    decoded = decode(model, data)
    header, rows = _decoded_rows(data, decoded, config)
    text = csv_text(header, rows)
    figure = None
    if args.figure:
        from .plotting import decoded_figure

        figure = decoded_figure(data, decoded)
    atomic_write(args.out, text)
    if figure is not None:
        atomic_write(args.figure, figure)
    counts = np.bincount(decoded.internal, minlength=model.k_internal)
    print(f"decoded {data.m_segments} segments; internal state counts: {counts.tolist()}", file=out)
    return 0


def parse_lengths(spec, m, rng):
    spec = spec.strip()
    try:
        if "," in spec:
            lengths = [int(x) for x in spec.split(",")]
            if len(lengths) != m:
                raise UsageError(f"--lengths lists {len(lengths)} values for {m} segments")
        elif "-" in spec:
            lo, hi = (int(x) for x in spec.split("-"))
            lengths = rng.integers(lo, hi + 1, size=m).tolist()
        else:
            lengths = [int(spec)] * m
    except ValueError:
        raise UsageError(f"cannot parse --lengths {spec!r}") from None
    if min(lengths) < 1:
        raise UsageError("segment lengths must be at least 1")
    return lengths


def cmd_simulate(args, out):
    model, config, _ = load_model(args.model)
    if args.segments < 1 or args.animals < 1:
        raise UsageError("--segments and --animals must be at least 1")
    rng = np.random.default_rng(args.seed)
    lengths = parse_lengths(args.lengths, args.segments, rng) * args.animals
    groups = [a + 1 for a in range(args.animals) for _ in range(args.segments)]
    truth, data = simulate_hierarchical(model, lengths, rng, groups)

    rule = config.segmentation
    animal_col = config.animal_column or ("animal" if args.animals > 1 else None)
    seg_col = rule.column if rule.mode == "column" else "segment"
    header = ([animal_col] if animal_col else []) + [seg_col]
    if rule.mode == "time_window":
        header.append(rule.column)
    header += ["time_index", *config.names, "internal_state", "production_state"]
    rows = []
    for m, seg in enumerate(data.segments):
        local = m % args.segments
        t_m = seg.shape[0]
        for t in range(t_m):
            row = ([data.groups[m]] if animal_col else []) + [local + 1]
            if rule.mode == "time_window":
                row.append(float(local * rule.duration + t * rule.duration / t_m))
            row.append(t + 1)
            row += [float(v.inverse(seg[t, r])) for r, v in enumerate(config.variables)]
            row += [int(truth.internal[m]) + 1, int(truth.production[m][t]) + 1]
            rows.append(row)
    atomic_write(args.out, csv_text(header, rows))
    print(f"simulated {data.m_segments} segments, {data.n_obs} observations", file=out)
    return 0


def cmd_residuals(args, out):
    model, config, _ = load_model(args.model)
    data, config = _load_data(args, config)
    decoded = decode(model, data)
    res = hierarchical_pseudo_residuals(model, data, decoded, np.random.default_rng(args.seed))
    header = ([config.animal_column] if config.animal_column else []) + [
        "segment", "time_index", *[f"residual_{n}" for n in config.names]
    ]
    rows = []
    for m, block in enumerate(res):
        prefix = [data.groups[m]] if config.animal_column else []
        for t, vals in enumerate(block):
            rows.append(prefix + [m + 1, t + 1] + [float(x) for x in vals])
    pooled = np.vstack(res)
    lines = ["variable       n      mean      sd        KS stat   KS p"]
    columns = [(n, pooled[:, r]) for r, n in enumerate(config.names)] + [("pooled", pooled.ravel())]
    for name, col in columns:
        col = col[~np.isnan(col)]
        ks = stats.kstest(col, "norm")
        lines.append(
            f"{name:<12} {col.size:>6}  {col.mean():>8.4f}  {col.std(ddof=1):>8.4f}  {ks.statistic:>8.4f}  {ks.pvalue:.4g}"
        )
    figure = None
    if args.figure:
        from .plotting import STYLE, figure_bytes, plt

        with plt.rc_context(STYLE):
            fig, ax = plt.subplots(figsize=(4, 4))
            col = np.sort(pooled[~np.isnan(pooled)])
            q = stats.norm.ppf((np.arange(col.size) + 0.5) / col.size)
            ax.plot(q, col, ".", ms=2, color="k")
            ax.plot(q, q, color="tab:red", lw=1)
            ax.set_xlabel("standard normal quantile")
            ax.set_ylabel("pseudo-residual")
            fig.tight_layout()
        figure = figure_bytes(fig)
    atomic_write(args.out, csv_text(header, rows))
    if figure is not None:
        atomic_write(args.figure, figure)
    print("\n".join(lines), file=out)
    return 0


def cmd_summarize(args, out):
    model, config, info = load_model(args.model)
    outdir = args.outdir or os.path.splitext(args.model)[0] + "_summary"
    text = format_model(model, config)
    if info:
        text = (
            f"log-likelihood: {info['loglik']:.4f}   AIC: {info['aic']:.4f}   BIC: {info['bic']:.4f}"
            f"   parameters: {info['n_params']}\n\n" + text
        )
    files = {}
    weights = long_run_weights(model)
    n = model.n_production
    emission_sets = [0] if model.share_emissions else range(model.k_internal)
    for e in emission_sets:
        tag = "" if model.share_emissions else f"_internal{e + 1}"
        for name, (grid, dens, zeros) in density_curves(model, args.grid, e).items():
            header = [name] + [f"state_{i + 1}" for i in range(n)]
            if weights is not None:
                header += [f"weighted_state_{i + 1}" for i in range(n)] + ["weighted_total"]
            rows = []
            for j, y in enumerate(grid):
                row = [float(y)] + [float(v) for v in dens[j]]
                if weights is not None:
                    row += [float(v) for v in weights * dens[j]] + [float(dens[j] @ weights)]
                rows.append(row)
            files[f"density_{name}{tag}.csv"] = csv_text(header, rows)
            if zeros is not None:
                files[f"zero_mass_{name}{tag}.csv"] = csv_text(
                    ["state", "zero_mass"], [[i + 1, float(z)] for i, z in enumerate(zeros)]
                )
            if not args.no_figures:
                from .plotting import density_figure

                transform = {v.name: v.transform for v in config.variables}[name]
                xlabel = f"{name} (sqrt scale)" if transform == "sqrt" else name
                files[f"density_{name}{tag}.png"] = density_figure(name, grid, dens, zeros, weights, xlabel)
    stat = stationary_distributions(model)
    files["stationary.csv"] = csv_text(
        ["chain", "state", "probability"],
        [[c, i + 1, float(p)] for c, s in zip(["internal"] + [f"production_{k + 1}" for k in range(model.k_internal)], stat)
         if s is not None for i, p in enumerate(s)],
    )
    os.makedirs(outdir, exist_ok=True)
    for fname, content in files.items():
        atomic_write(os.path.join(outdir, fname), content)
    print(text, file=out)
    print(f"\nwrote {len(files)} files to {outdir}", file=out)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "decode": cmd_decode,
    "simulate": cmd_simulate,
    "residuals": cmd_residuals,
    "summarize": cmd_summarize,
}


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except errors.HierHMMError as exc:
        code = next(c for klass, c in _EXIT_CODES if isinstance(exc, klass))
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
