"""Command-line experiment runner.

    twochoice <subcommand> [--n N --d D --lambda L --seed S ...] --out DIR

Every subcommand writes ``raw.jsonl``, ``summary.csv``, ``report.txt`` and
``result.json`` into ``--out``; ``report`` merges previous run directories.
Exit status: 0 success, 1 runtime failure (or a failed check where the
subcommand promises one), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import analytic, driftwalk, stats
from .core import LoadState, RandomSource, SimParams, default_burn_in
from .coupling import coupling_decay_experiment
from .engine import (equilibrium_sample, map_trials, sequential_throw_run,
                     simulate_until)
from .report import ExperimentResult, emit_report, load_result, write_raw

SUBCOMMANDS = ("simulate", "equilibrium", "couple", "meanfield", "fixedpoint",
               "predict", "driftwalk", "chaos", "mixing", "sequential", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(2)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("model and run flags")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--lambda", dest="lam", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=None,
                   help="master seed; falls back to $TWOCHOICE_SEED, then 0")
    g.add_argument("--horizon", type=float, default=10.0)
    g.add_argument("--burn-in", dest="burn_in", type=float, default=None)
    g.add_argument("--samples", type=int, default=200)
    g.add_argument("--spacing", type=float, default=1.0)
    g.add_argument("--trials", type=int, default=None)
    g.add_argument("--threads", type=int, default=None)
    g.add_argument("--out", default=None, help="output directory (default: out/<subcommand>)")
    g.add_argument("--format", choices=("json", "csv"), default=None,
                   help="print the summary to stdout in this format")
    g.add_argument("--full-vectors", dest="full_vectors", action="store_true")

    parser = _Parser(prog="twochoice", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = {name: sub.add_parser(name, parents=[common]) for name in SUBCOMMANDS}
    p["couple"].add_argument("--r0", type=int, default=None)
    p["couple"].add_argument("--t-grid", dest="t_grid", type=_floats, default=[0.5, 1, 2, 3, 5])
    p["meanfield"].add_argument("--t", type=float, default=1.0)
    p["meanfield"].add_argument("--variant", choices=("continuous", "sequential"),
                                default="continuous")
    p["meanfield"].add_argument("--check-closed-form", dest="check_closed_form",
                                action="store_true")
    p["meanfield"].add_argument("--k-max", dest="k_max", type=int, default=None)
    p["fixedpoint"].add_argument("--k-max", dest="k_max", type=int, default=None)
    p["fixedpoint"].add_argument("--tol", type=float, default=1e-13)
    p["driftwalk"].add_argument("--p", type=float, default=0.1)
    p["driftwalk"].add_argument("--q", type=float, default=None)
    p["driftwalk"].add_argument("--a", type=int, default=3)
    p["driftwalk"].add_argument("--m", type=int, default=560)
    p["driftwalk"].add_argument("--width", type=int, default=10)
    p["chaos"].add_argument("--r", type=int, default=2)
    p["chaos"].add_argument("--k-cut", dest="k_cut", type=int, default=10)
    p["mixing"].add_argument("--t-grid", dest="t_grid", type=_floats,
                             default=[0, 0.5, 1, 2, 5, 10, 15])
    p["sequential"].add_argument("--balls", type=int, default=None)
    p["report"].add_argument("--inputs", nargs="+", default=[])
    return parser


def _validate(args) -> list[str]:
    problems = []
    if args.n < 1:
        problems.append(f"--n must be a positive integer, got {args.n}")
    if args.d < 1:
        problems.append(f"--d must be a positive integer, got {args.d}")
    if not args.lam > 0:
        problems.append(f"--lambda must be positive, got {args.lam}")
    if not args.horizon >= 0:
        problems.append(f"--horizon must be nonnegative, got {args.horizon}")
    if args.burn_in is not None and not args.burn_in >= 0:
        problems.append(f"--burn-in must be nonnegative, got {args.burn_in}")
    if args.samples < 0:
        problems.append(f"--samples must be nonnegative, got {args.samples}")
    if not args.spacing > 0:
        problems.append(f"--spacing must be positive, got {args.spacing}")
    if args.trials is not None and args.trials < 1:
        problems.append(f"--trials must be positive, got {args.trials}")
    if args.threads is not None and args.threads < 1:
        problems.append(f"--threads must be positive, got {args.threads}")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        problems.append(f"--seed must be in [0, 2^64), got {args.seed}")
    cmd = args.command
    if cmd in ("predict",) and args.n < 16:
        problems.append(f"predict needs --n >= 16, got {args.n}")
    if cmd == "equilibrium" and args.samples < 1:
        problems.append("equilibrium needs --samples >= 1")
    if cmd == "meanfield" and args.check_closed_form and (args.d != 1 or args.variant != "continuous"):
        problems.append("--check-closed-form needs --d 1 and the continuous variant")
    if cmd == "meanfield" and not args.t >= 0:
        problems.append(f"--t must be nonnegative, got {args.t}")
    if cmd == "driftwalk":
        q = 2 * args.p if args.q is None else args.q
        if args.p < 0 or q <= args.p or args.p + q > 1:
            problems.append(f"driftwalk needs q > p >= 0 and p + q <= 1 (p={args.p}, q={q})")
        if args.a < 1 or args.m < 1 or args.width < 1:
            problems.append("driftwalk needs --a, --m, --width >= 1")
    if cmd == "chaos" and not 2 <= args.r <= args.n:
        problems.append(f"chaos needs 2 <= --r <= --n, got r={args.r}")
    if cmd in ("couple", "mixing") and any(t < 0 for t in args.t_grid):
        problems.append("--t-grid values must be nonnegative")
    if cmd == "couple" and args.r0 is not None and args.r0 < 0:
        problems.append("--r0 must be nonnegative")
    if cmd == "sequential" and args.balls is not None and args.balls < 0:
        problems.append("--balls must be nonnegative")
    if cmd == "report" and not args.inputs:
        problems.append("report needs at least one --inputs directory")
    return problems


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TWOCHOICE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TWOCHOICE_SEED must be an integer, got {env!r}")


def _params(args, seed) -> SimParams:
    return SimParams(n=args.n, d=args.d, lam=args.lam, seed=seed, horizon=args.horizon)


def _base(name, params: SimParams, **settings) -> ExperimentResult:
    return ExperimentResult(name, params.as_dict(), settings)


# -- experiments --------------------------------------------------------------------

def exp_simulate(args, params, src):
    trials = args.trials or 1
    times = np.arange(0.0, params.horizon + 0.5 * args.spacing, args.spacing)
    times = times[times <= params.horizon]
    res = _base("simulate", params, spacing=args.spacing, trials=trials,
                full_vectors=args.full_vectors)

    def run(k, s):
        state = LoadState(np.zeros(params.n, dtype=np.int64))
        return simulate_until(state, s, params, params.horizon, times,
                              full_vectors=args.full_vectors)

    records = map_trials(run, src, trials, args.threads)
    raw = []
    for k, rec in enumerate(records):
        raw.extend(rec.jsonl_rows("simulate", k))
        res.add_row(trial=k, events=rec.event_count, snapshots=len(rec),
                    final_total=int(rec.totals[-1]), final_max_load=int(rec.max_loads[-1]))
    return res, raw


def _prediction(params: SimParams):
    if params.n < 16:
        return None
    if params.d == 1:
        return analytic.d1_levels(params.n, params.lam)
    return analytic.jstar_predict(params.n, params.d, params.lam)


def exp_equilibrium(args, params, src):
    trials = args.trials or 1
    burn = default_burn_in(params.n) if args.burn_in is None else args.burn_in
    res = _base("equilibrium", params, burn_in=burn, spacing=args.spacing,
                samples=args.samples, trials=trials)
    records = map_trials(
        lambda k, s: equilibrium_sample(params, s, burn, args.samples, args.spacing,
                                        full_vectors=args.full_vectors),
        src, trials, args.threads)
    pred = _prediction(params)
    raw = []
    mu = params.arrival_rate
    for k, rec in enumerate(records):
        raw.extend(rec.jsonl_rows("equilibrium", k))
        dist = stats.maxload_distribution(rec)
        mean = float(rec.totals.mean())
        ratio = float(rec.totals.var(ddof=1) / mean) if len(rec) > 1 and mean > 0 else float("nan")
        row = dict(trial=k, mean_total=mean, var_over_mean=ratio,
                   median_max_load=float(np.median(rec.max_loads)),
                   best_pair=list(dist.best_pair), pair_mass=dist.pair_mass)
        if pred is not None:
            row.update(predicted_level=pred.level, level_kind=pred.kind,
                       predicted_support=list(pred.support),
                       support_mass=dist.mass(pred.support))
        res.add_row(**row)
        half = 4 * math.sqrt(mu / len(rec))
        res.add_check(f"trial {k}: mean total within lambda*n +- 4 sqrt(lambda*n/K)",
                      mean, f"[{mu - half:.6g}, {mu + half:.6g}]", abs(mean - mu) <= half)
        res.add_check(f"trial {k}: best two-point mass", dist.pair_mass, ">= 0.75",
                      dist.pair_mass >= 0.75)
    profile, se = stats.empirical_profile(records[0])
    res.series["profile"] = [(i, v) for i, v in enumerate(profile.values)]
    masses = stats.maxload_distribution(records[0]).masses
    res.series["maxload_pmf"] = sorted(masses.items())
    if pred is not None:
        res.lines.append(f"prediction: {pred.kind} = {pred.level}, support "
                         f"{{{pred.support[0]}, {pred.support[1]}}}, threshold {pred.threshold:.6g}")
    return res, raw


def exp_couple(args, params, src):
    trials = args.trials or 200
    r0 = 2 * params.n if args.r0 is None else args.r0
    res = _base("couple", params, r0=r0, trials=trials)
    dec = coupling_decay_experiment(params, r0, args.t_grid, trials, src, args.threads)
    for t, m, se, b in zip(dec.times, dec.mean, dec.se, dec.bound):
        res.add_row(t=float(t), mean_distance=float(m), se=float(se), bound=float(b))
        res.add_check(f"mean distance at t={t:g}", float(m), f"<= {b:.6g} + 3*{se:.3g}",
                      m <= b + 3 * se)
    res.add_check("per-event distance increases", dec.violations, "== 0", dec.violations == 0)
    res.series["mean_distance"] = list(zip(dec.times, dec.mean))
    res.series["bound"] = list(zip(dec.times, dec.bound))
    raw = [dict(experiment="couple", **params.as_dict(), t=float(t), mean_distance=float(m),
                se=float(se)) for t, m, se in zip(dec.times, dec.mean, dec.se)]
    return res, raw


def exp_meanfield(args, params, src):
    sol = analytic.ode_solve(params.d, params.lam, t_end=args.t, k_max=args.k_max,
                             variant=args.variant)
    v = sol.profiles[-1]
    res = _base("meanfield", params, t=args.t, variant=args.variant, k_max=sol.k_max,
                rtol=sol.rtol, atol=sol.atol)
    raw = [dict(experiment="meanfield", **params.as_dict(), t=args.t, i=i, v=float(x))
           for i, x in enumerate(v) if x > 1e-300]
    res.series["profile"] = [(i, x) for i, x in enumerate(v) if x > 0]
    res.add_row(t=args.t, k_max=sol.k_max, v1=float(v[1]), v2=float(v[2]),
                v3=float(v[3]) if v.size > 3 else 0.0)
    if args.check_closed_form:
        exact = analytic.poisson_tails(params.lam * (1 - math.exp(-args.t)), sol.k_max)
        err = float(np.max(np.abs(v - exact)))
        res.add_check("sup error vs Poisson closed form", err, "<= 1e-6", err <= 1e-6)
        res.lines.append(f"closed-form sup error: {err:.3e}")
    return res, raw


def exp_fixedpoint(args, params, src):
    fp = analytic.fixed_point(params.d, params.lam, k_max=args.k_max, tol=args.tol)
    v = fp.values
    resid = analytic.summed_residual(v, params.d, params.lam)
    res = _base("fixedpoint", params, k_max=fp.k_max, tol=args.tol, damping=0.5)
    raw = []
    ok = True
    for i in range(1, fp.k_max + 1):
        lo, hi, valid = analytic.recurrence_bracket(v[i - 1], i, params.d, params.lam)
        inside = v[i] <= hi + 1e-15 and (not valid or v[i] >= lo - 1e-15)
        ok = ok and inside
        if v[i] > 1e-300:
            raw.append(dict(experiment="fixedpoint", **params.as_dict(), i=i, v=float(v[i]),
                            lower=lo, upper=hi, lower_valid=valid, residual=float(resid[i - 1])))
    res.add_row(residual=float(np.max(np.abs(resid))), v1=float(v[1]), v2=float(v[2]))
    res.add_check("summed stationarity residual", float(np.max(np.abs(resid))),
                  f"<= {args.tol:g}", np.max(np.abs(resid)) <= args.tol)
    res.add_check("recurrence brackets hold", ok, "all i", ok)
    res.series["profile"] = [(i, x) for i, x in enumerate(v) if x > 0]
    return res, raw


def exp_predict(args, params, src):
    res = _base("predict", params)
    if params.d == 1:
        pred = analytic.d1_levels(params.n, params.lam)
    else:
        pred = analytic.jstar_predict(params.n, params.d, params.lam)
    res.add_row(level=pred.level, kind=pred.kind, threshold=pred.threshold,
                support=list(pred.support), source=pred.source)
    res.lines.append(f"{pred.kind} = {pred.level}; predicted two-point support "
                     f"{{{pred.support[0]}, {pred.support[1]}}}")
    return res, [dict(experiment="predict", **params.as_dict(), level=pred.level,
                      kind=pred.kind, support=list(pred.support))]


def exp_driftwalk(args, params, src):
    trials = args.trials or 100_000
    p = args.p
    q = 2 * p if args.q is None else args.q
    res = _base("driftwalk", params, p=p, q=q, a=args.a, m=args.m, width=args.width,
                trials=trials)
    exact = driftwalk.crossing_exact(p, q, args.a)
    closed = driftwalk.crossing_closed_form(p, q, args.a)
    wp = driftwalk.WalkParams(p=p, q=q, a=args.a, m=args.m, r0=0, r1=args.width)
    mc = driftwalk.walk_simulate(wp, src.substream(0), trials, "crossing")
    se_exact = math.sqrt(exact * (1 - exact) / trials)
    res.add_row(walk="crossing", exact=exact, closed_form=closed, bound=(p / q) ** args.a,
                frequency=mc.frequency, se=mc.se)
    res.add_check("crossing exact <= (p/q)^a", exact, f"<= {(p / q) ** args.a:.6g}",
                  exact <= (p / q) ** args.a)
    res.add_check("crossing frequency vs exact", mc.frequency,
                  f"within 3*{se_exact:.3g} of {exact:.6g}",
                  abs(mc.frequency - exact) <= 3 * se_exact)
    if not wp.hitting_problems():
        bound = driftwalk.hitting_bound(wp)
        hit = driftwalk.walk_simulate(wp, src.substream(1), trials, "hitting")
        res.add_row(walk="hitting", bound=bound, frequency=hit.frequency, se=hit.se)
        res.add_check("hitting miss frequency", hit.frequency,
                      f"<= {bound:.6g} + 3*{hit.se:.3g}", hit.frequency <= bound + 3 * hit.se)
    else:
        res.lines.append("hitting check skipped: " + "; ".join(wp.hitting_problems()))
    return res, [dict(experiment="driftwalk", **params.as_dict(), **row)
                 for row in [{k: v for k, v in r.items() if k not in params.as_dict()}
                             for r in res.table]]


def exp_chaos(args, params, src):
    trials = args.trials or 1
    burn = default_burn_in(params.n) if args.burn_in is None else args.burn_in
    res = _base("chaos", params, r=args.r, k_cut=args.k_cut, samples=args.samples,
                spacing=args.spacing, burn_in=burn, trials=trials, pooled=True)
    records = map_trials(
        lambda k, s: equilibrium_sample(params, s, burn, args.samples, args.spacing,
                                        full_vectors=True),
        src, trials, args.threads)
    raw = []
    for k, rec in enumerate(records):
        if args.full_vectors:
            raw.extend(rec.jsonl_rows("chaos", k))
        c = stats.chaoticity_experiment(rec, args.r, args.k_cut)
        floor, floor_sd = stats.chaos_noise_floor(rec, src.substream(10**6 + k), args.r,
                                                  args.k_cut)
        res.add_row(trial=k, tv=c.tv, noise_floor=floor, noise_sd=floor_sd,
                    tv_minus_floor=c.tv - floor, truncation_mass=c.truncation_mass,
                    tuples=c.tuples)
        if not args.full_vectors:
            raw.append(dict(experiment="chaos", **params.as_dict(), trial=k, tv=c.tv,
                            noise_floor=floor, truncation_mass=c.truncation_mass))
    return res, raw


def exp_mixing(args, params, src):
    trials = args.trials or 200
    curve = stats.mixing_curve(params, args.t_grid, trials, src, args.threads)
    res = _base("mixing", params, trials=trials, tv_cells=20, tv_outer_mass=1e-12)
    for g, t in enumerate(curve.times):
        res.add_row(t=float(t), mean_total=float(curve.mean_total[g]), se=float(curve.se[g]),
                    predicted=float(curve.predicted[g]), tv=float(curve.tv[g]),
                    noise_floor=float(curve.noise_floor[g]))
        ok = abs(curve.mean_total[g] - curve.predicted[g]) <= 3 * curve.se[g] + 1e-9
        res.add_check(f"mean total at t={t:g}", float(curve.mean_total[g]),
                      f"within 3*{curve.se[g]:.3g} of {curve.predicted[g]:.6g}", ok)
    res.series["mean_total"] = list(zip(curve.times, curve.mean_total))
    res.series["tv"] = list(zip(curve.times, curve.tv))
    raw = [dict(experiment="mixing", **params.as_dict(), trial=k,
                times=curve.times.tolist(), totals=curve.totals[k].tolist())
           for k in range(trials)]
    return res, raw


def exp_sequential(args, params, src):
    trials = args.trials or 20
    balls = params.n if args.balls is None else args.balls
    t = balls / params.n
    res = _base("sequential", params, balls=balls, trials=trials, ode_time=t)
    sol = analytic.ode_solve(params.d, 1.0, t_end=t, variant="sequential")
    v = sol.profiles[-1]
    states = map_trials(lambda k, s: sequential_throw_run(params.n, params.d, balls, s),
                        src, trials, args.threads)
    errs = []
    raw = []
    for k, st in enumerate(states):
        u = st.profile().padded(sol.k_max)
        err = float(np.max(np.abs(u - v)))
        errs.append(err)
        res.add_row(trial=k, max_load=st.max_load, sup_error=err)
        raw.append(dict(experiment="sequential", **params.as_dict(), trial=k,
                        tail_counts=st.tail_counts.tolist()))
    mean_err = float(np.mean(errs))
    res.add_check("mean sup error vs no-death ODE", mean_err, "<= 0.02", mean_err <= 0.02)
    if params.d >= 2 and params.n >= 16:
        pred = analytic.jstar_sequential(params.n, params.d, t)
        res.lines.append(f"sequential j* = {pred.level}, support {{{pred.support[0]}, "
                         f"{pred.support[1]}}}")
    return res, raw


EXPERIMENTS = {
    "simulate": exp_simulate,
    "equilibrium": exp_equilibrium,
    "couple": exp_couple,
    "meanfield": exp_meanfield,
    "fixedpoint": exp_fixedpoint,
    "predict": exp_predict,
    "driftwalk": exp_driftwalk,
    "chaos": exp_chaos,
    "mixing": exp_mixing,
    "sequential": exp_sequential,
}


def _print_summary(res: ExperimentResult, fmt: str | None, text: str) -> None:
    if fmt == "json":
        print(json.dumps({"experiment": res.experiment, "rows": res.table,
                          "checks": res.checks}, sort_keys=True))
    elif fmt == "csv":
        from .report import _csv_text
        sys.stdout.write(_csv_text(res.table))
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    problems = _validate(args)
    try:
        seed = _seed(args)
    except UsageError as exc:
        problems.append(str(exc))
    if problems:
        for msg in problems:
            sys.stderr.write(f"error: {msg}\n")
        return 2
    out = args.out or os.path.join("out", args.command)
    try:
        if args.command == "report":
            results = [load_result(d) for d in args.inputs]
            text = emit_report(results, out)
            sys.stdout.write(text)
            return 0 if all(r.passed for r in results) else 1
        params = _params(args, seed)
        src = RandomSource(seed)
        res, raw = EXPERIMENTS[args.command](args, params, src)
        os.makedirs(out, exist_ok=True)
        write_raw(os.path.join(out, "raw.jsonl"), raw)
        with open(os.path.join(out, "result.json"), "w") as fh:
            fh.write(res.to_json())
        text = emit_report([res], out)
        _print_summary(res, args.format, text)
    except Exception as exc:  # runtime failure, reported in one line
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1
    if args.command == "meanfield" and args.check_closed_form and not res.passed:
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
