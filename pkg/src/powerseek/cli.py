"""Command-line harness: analyze, orbit, sweep, sample-goals, verify, export.

Scenario sources are either a JSON file or a generator spec:

    lasso:M:L            lasso with an M-step path onto an L-cycle
    coinrun[:LEN:COIN]   CoinRun-style chain (default 5 cells, test coin at 2)
    random:SEED:D        seeded random scenario with D states

Exit codes: 0 success, 1 parse or config error, 2 assumption violation,
3 counterexample to a checked result.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from powerseek import verification
from powerseek.goalset import MODES, GoalSetError, sample_goal_set
from powerseek.mdp import MdpError
from powerseek.orbit import ORBIT_CAP
from powerseek.recurrence import recurrent_states
from powerseek.scenario_io import ScenarioParseError, dump_scenario, load_scenario, parse_rational
from powerseek.scenarios import (
    CoinrunChainSpec,
    LassoSpec,
    classify_coinrun_goal,
    make_coinrun_chain,
    make_lasso,
    make_random,
)
from powerseek.seeding import derive_seed
from powerseek.shutdown import (
    ScenarioError,
    avoid_shutdown_stats,
    gamma_table,
    qualifying_recurrent_states,
    theorem_check,
    validate_scenario,
)

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_COUNTEREXAMPLE = 0, 1, 2, 3
OUT_ENV = "POWERSEEK_OUT"


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    source: str
    gammas: tuple = ()
    samples: int = 1
    seed: int = 0
    mode: str = "exact"
    goal_mode: str = "q-optimal"
    out: Path = Path(".")

    def __post_init__(self):
        for g in self.gammas:
            if not 0 <= g < 1:
                raise ConfigError(f"gamma {g} outside [0, 1)")
        if self.samples < 1:
            raise ConfigError("sample count must be at least 1")


def _number(text: str, mode: str):
    value = parse_rational(text, "gamma")
    return value if mode == "exact" else float(value)


def parse_gammas(values, spec_range, mode) -> tuple:
    """Comma-separated lists and ``start:stop:step`` ranges (stop inclusive)."""
    out = []
    for chunk in values or ():
        out.extend(_number(t, "exact") for t in chunk.split(",") if t.strip())
    if spec_range:
        parts = spec_range.split(":")
        if len(parts) != 3:
            raise ConfigError("--gamma-range takes start:stop:step")
        start, stop, step = (parse_rational(p, "gamma-range") for p in parts)
        if step <= 0:
            raise ConfigError("--gamma-range step must be positive")
        g = start
        while g <= stop:
            out.append(g)
            g += step
    out = sorted(set(out))
    return tuple(out if mode == "exact" else (float(g) for g in out))


def load_source(source: str):
    kind, _, rest = source.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "lasso" and len(args) == 2:
            return make_lasso(LassoSpec(int(args[0]), int(args[1])))
        if kind == "coinrun" and len(args) in (0, 2):
            length, coin = (int(args[0]), int(args[1])) if args else (5, 2)
            _, _, scenario = make_coinrun_chain(CoinrunChainSpec(length, length - 1),
                                                CoinrunChainSpec(length, coin))
            return scenario
        if kind == "random" and len(args) == 2:
            return make_random(int(args[0]), int(args[1]))
    except ValueError as exc:
        raise ConfigError(f"generator {source!r}: {exc}") from exc
    if kind in ("lasso", "coinrun", "random"):
        raise ConfigError(f"malformed generator spec {source!r}")
    if not Path(source).is_file():
        raise ConfigError(f"scenario file {source!r} not found")
    return load_scenario(source)


def with_mode(scenario, mode: str):
    if mode == "exact":
        if not scenario.mdp.exact:
            raise ConfigError("exact mode needs rational transition probabilities")
        return scenario
    reward = None if scenario.reward is None else tuple(float(v) for v in scenario.reward)
    return dataclasses.replace(scenario, mdp=scenario.mdp.as_float(), reward=reward)


def _fmt(x) -> str:
    return str(x) if isinstance(x, Fraction) else repr(x)


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, need_gamma=True) -> ExperimentConfig:
    gammas = parse_gammas(getattr(args, "gamma", None), getattr(args, "gamma_range", None),
                          args.mode)
    if need_gamma and not gammas:
        raise ConfigError("no discount given; pass --gamma or --gamma-range")
    return ExperimentConfig(args.scenario, gammas, getattr(args, "samples", 1), args.seed,
                            args.mode, getattr(args, "goal_mode", "q-optimal"), _out_dir(args))


def cmd_analyze(args) -> int:
    cfg = _config(args, need_gamma=False)
    scenario = with_mode(load_source(cfg.source), cfg.mode)
    names = scenario.mdp.state_names
    report = validate_scenario(scenario)
    doc = {"scenario": scenario.name, "validation": report.as_dict()}
    print(f"scenario {scenario.name or cfg.source}: {scenario.mdp.n_states} states")
    for name, passed, detail in report.checks:
        print(f"  {'ok  ' if passed else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    if not report.ok:
        _write_json(cfg.out / "analyze.json", doc)
        failed = ", ".join(name for name, _ in report.failures)
        print(f"assumption violated: {failed}", file=sys.stderr)
        return EXIT_ASSUMPTION
    recurrent = recurrent_states(scenario.mdp).recurrent
    table = gamma_table(scenario)
    doc["recurrent_states"] = [names[s] for s in sorted(recurrent)]
    doc["gamma_star"] = {names[s]: f"{t.threshold:.9f}" for s, t in table.items()}
    print("recurrent states: " + (", ".join(doc["recurrent_states"]) or "none"))
    print("gamma* per reachable recurrent state:")
    for s, t in table.items():
        print(f"  {names[s]:<12} {t.threshold:.6f}")
    doc["qualifying"] = {}
    for g in cfg.gammas:
        qual = [names[s] for s in sorted(qualifying_recurrent_states(scenario, g))]
        doc["qualifying"][_fmt(g)] = qual
        print(f"gamma={_fmt(g)}: n={len(qual)} qualifying {{{', '.join(qual)}}}")
    _write_json(cfg.out / "analyze.json", doc)
    return EXIT_OK


def _read_theta(text: str, d: int, mode: str) -> tuple:
    path = Path(text)
    if path.is_file():
        raw = path.read_text().strip()
        values = json.loads(raw) if raw.startswith("[") else raw.replace("\n", ",").split(",")
    else:
        values = text.split(",")
    values = [v.strip() if isinstance(v, str) else v for v in values if str(v).strip()]
    if len(values) != d:
        raise ConfigError(f"theta has {len(values)} entries, scenario has {d} states")
    theta = tuple(parse_rational(v, f"theta[{i}]") for i, v in enumerate(values))
    if any(v < 0 for v in theta):
        raise ConfigError("theta entries must be nonnegative")
    return theta if mode == "exact" else tuple(float(v) for v in theta)


def cmd_orbit(args) -> int:
    cfg = _config(args)
    if len(cfg.gammas) != 1:
        raise ConfigError("orbit takes exactly one gamma")
    gamma = cfg.gammas[0]
    scenario = with_mode(load_source(cfg.source), cfg.mode)
    report = validate_scenario(scenario, gamma)
    theta = _read_theta(args.theta, scenario.mdp.n_states, cfg.mode)
    if len(theta) > args.cap and not args.sampled:
        raise ConfigError(f"d={len(theta)} exceeds the exhaustive orbit cap {args.cap}; "
                          "rerun with --sampled for a Monte Carlo orbit estimate")
    cap = args.cap if not args.sampled else 0
    check = theorem_check(scenario, theta, gamma, cfg.goal_mode, cap=cap, samples=args.samples,
                          seed=derive_seed(cfg.seed, "orbit"))
    names = scenario.mdp.state_names
    check.orbit.to_csv(cfg.out / "orbit.csv", names)
    summary = check.orbit.summary(check.n)
    summary["gamma"] = _fmt(gamma)
    summary["retargeting_partners"] = [names[s] for s in check.swaps.partners]
    summary["validation"] = report.as_dict()
    if check.certificate is not None:
        summary["certificate"] = check.certificate.transcript()
    if check.n == 0:
        status = "vacuous bound"
    elif check.counterexample:
        status = "COUNTEREXAMPLE"
    elif check.majority:
        status = "verified"
    else:
        status = "not verified"
    summary["status"] = status
    _write_json(cfg.out / "orbit.json", summary)
    n1, n0, nt = check.orbit.counts
    print(f"orbit size {check.orbit.size}{' (sampled)' if check.orbit.approximate else ''}: "
          f"A1>A0 {n1}, A0>A1 {n0}, tie {nt}; n={check.n}")
    print(f"status: {status}")
    if status == "COUNTEREXAMPLE":
        print("COUNTEREXAMPLE: certified retargetability but the majority inequality fails",
              file=sys.stderr)
        return EXIT_COUNTEREXAMPLE
    if status == "not verified":
        return EXIT_ASSUMPTION
    return EXIT_OK


SVG_W, SVG_H, PAD = 480, 320, 48


def sweep_svg(rows) -> str:
    """Line chart of guaranteed and empirical fractions against gamma."""
    def x(g):
        return PAD + float(g) * (SVG_W - 2 * PAD)

    def y(v):
        return SVG_H - PAD - float(v) * (SVG_H - 2 * PAD)

    def line(key, color):
        pts = " ".join(f"{x(Fraction(r['gamma'])):.2f},{y(Fraction(r[key])):.2f}" for r in rows)
        dots = "".join(f'<circle cx="{x(Fraction(r["gamma"])):.2f}" cy="{y(Fraction(r[key])):.2f}" '
                       f'r="3" fill="{color}"/>' for r in rows)
        return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>{dots}'

    ticks = "".join(
        f'<text x="{x(t / 10):.2f}" y="{SVG_H - PAD + 16}" font-size="10" text-anchor="middle">{t / 10}</text>'
        f'<text x="{PAD - 6}" y="{y(t / 10) + 3:.2f}" font-size="10" text-anchor="end">{t / 10}</text>'
        for t in range(0, 11, 2))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}">'
        f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>'
        f'<line x1="{PAD}" y1="{SVG_H - PAD}" x2="{SVG_W - PAD}" y2="{SVG_H - PAD}" stroke="black"/>'
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{SVG_H - PAD}" stroke="black"/>{ticks}'
        f'{line("guaranteed_fraction", "#1f77b4")}{line("empirical_A1_fraction", "#d62728")}'
        f'<text x="{SVG_W / 2:.0f}" y="{SVG_H - 10}" font-size="12" text-anchor="middle">gamma</text>'
        f'<text x="{SVG_W - PAD}" y="{PAD - 20}" font-size="11" text-anchor="end" fill="#1f77b4">'
        f'guaranteed n/(n+1)</text>'
        f'<text x="{SVG_W - PAD}" y="{PAD - 6}" font-size="11" text-anchor="end" fill="#d62728">'
        f'empirical shutdown-avoiding fraction</text></svg>\n'
    )


SWEEP_COLUMNS = ("gamma", "n", "guaranteed_fraction", "empirical_A1_fraction", "orbit_pass_rate")


def cmd_sweep(args) -> int:
    cfg = _config(args)
    scenario = with_mode(load_source(cfg.source), cfg.mode)
    rows = []
    bad = 0
    for i, gamma in enumerate(cfg.gammas):
        goals = sample_goal_set(scenario.mdp, scenario.training, cfg.samples,
                                derive_seed(cfg.seed, "sweep", i), cfg.goal_mode, gamma,
                                exact=cfg.mode == "exact", max_attempts=args.attempts)
        stats = avoid_shutdown_stats(scenario, goals, gamma, cap=args.cap)
        bad += stats.counterexamples
        row = stats.row()
        row["gamma"] = _fmt(gamma)
        rows.append(row)
        print(",".join(str(row[c]) for c in SWEEP_COLUMNS))
    with open(cfg.out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    if args.svg:
        (cfg.out / "sweep.svg").write_text(sweep_svg(rows))
    if bad:
        print(f"COUNTEREXAMPLE: {bad} certified orbits violate the majority inequality",
              file=sys.stderr)
        return EXIT_COUNTEREXAMPLE
    return EXIT_OK


def cmd_sample_goals(args) -> int:
    cfg = _config(args)
    if len(cfg.gammas) != 1:
        raise ConfigError("sample-goals takes exactly one gamma")
    gamma = cfg.gammas[0]
    scenario = with_mode(load_source(cfg.source), cfg.mode)
    sample = sample_goal_set(scenario.mdp, scenario.training, cfg.samples,
                             derive_seed(cfg.seed, "goals"), cfg.goal_mode, gamma,
                             exact=cfg.mode == "exact", max_attempts=args.attempts)
    sample.to_csv(cfg.out / "goals.csv", scenario.mdp.state_names)
    summary = {
        "accepted": len(sample.vectors),
        "attempts": sample.attempts,
        "gamma": _fmt(gamma),
        "mode": sample.mode,
        "seed": cfg.seed,
    }
    if "coin" in scenario.meta:
        kinds = [classify_coinrun_goal(scenario, t, gamma) for t in sample.vectors]
        summary["goal_kinds"] = {k: kinds.count(k) for k in sorted(set(kinds))}
    _write_json(cfg.out / "goals.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _out_dir(args)
    results = verification.run_all(args.seed, quick=args.quick)
    doc = {}
    for r in results:
        print(r.line())
        doc[r.name] = {"cases": r.cases, "passed": r.passed, "details": r.details,
                       "exceptions": r.exceptions}
    _write_json(out / "verify.json", doc)
    if any(r.exceptions for r in results):
        print("COUNTEREXAMPLE found; see verify.json", file=sys.stderr)
        return EXIT_COUNTEREXAMPLE
    return EXIT_OK


def cmd_export(args) -> int:
    scenario = load_source(args.scenario)
    dump_scenario(scenario, args.path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powerseek", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--mode", choices=("exact", "float"), default="exact")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    gam = argparse.ArgumentParser(add_help=False)
    gam.add_argument("--gamma", action="append", help="discount(s), comma separated")
    gam.add_argument("--gamma-range", help="start:stop:step, stop inclusive")
    gam.add_argument("--goal-mode", choices=MODES, default="q-optimal")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common, gam], help="validate and tabulate thresholds")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("orbit", parents=[common, gam], help="orbit counts for one reward vector")
    p.add_argument("scenario")
    p.add_argument("theta", help="file (JSON list or CSV row) or comma-separated values")
    p.add_argument("--cap", type=int, default=ORBIT_CAP, help="exhaustive orbit dimension cap")
    p.add_argument("--sampled", action="store_true", help="Monte Carlo orbit above the cap")
    p.add_argument("--samples", type=int, default=5000, help="permutations for --sampled")
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("sweep", parents=[common, gam], help="shutdown statistics across gamma")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=20, help="goals per gamma")
    p.add_argument("--attempts", type=int, default=10**5, help="rejection-sampling budget")
    p.add_argument("--cap", type=int, default=ORBIT_CAP)
    p.add_argument("--svg", action="store_true", help="also write sweep.svg")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sample-goals", parents=[common, gam], help="rejection-sample the goal set")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=100, help="goals to accept")
    p.add_argument("--attempts", type=int, default=10**4, help="rejection-sampling budget")
    p.set_defaults(func=cmd_sample_goals)

    p = sub.add_parser("verify", parents=[common], help="run the seeded verification suites")
    p.add_argument("--quick", action="store_true", help="a fifth of the random cases")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="write a generated scenario as JSON")
    p.add_argument("scenario")
    p.add_argument("path")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioParseError, GoalSetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, MdpError) as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    raise SystemExit(main())
