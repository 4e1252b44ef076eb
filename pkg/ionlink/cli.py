"""Command line experiments: purification sweeps, repeater chains, thresholds and table dumps.

Every output starts with comment lines carrying the version, command, seed
and the full parameter set, so rerunning with those values reproduces the
file byte for byte.
"""
import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .purify import LEVELS, RANKS, NoiseModel, markov_cost, run_level
from .repeater import (LinkBudget, PipelineConfig, chain_reach_km, memory_budget, pipeline,
                       rate_budget)
from .stabtool import BASES, METHODS, build_table, resource_summary
from .toric import BACKENDS, threshold_scan
from .trials import TrialRunner
from .utils import Config, NumericalInvariantError, QubitBudgetError, default_seed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def parse_range(text) -> List[float]:
    """``start:stop:step`` (stop included up to half a step), a comma list, or a list"""
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    text = str(text).strip()
    if ":" not in text:
        return [float(x) for x in text.split(",") if x.strip()]
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"range must be start:stop:step, got {text!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"range {text!r} needs step > 0 and stop >= start")
    values = []
    k = 0
    while start + k * step < stop + step / 2:
        values.append(round(start + k * step, 12))
        k += 1
    return values


def parse_int_list(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


@dataclass
class ExperimentConfig:
    """Self-describing record of one run"""

    command: str
    seed: int
    params: Dict[str, Any] = field(default_factory=dict)

    def header_lines(self) -> List[str]:
        return [f"# ionlink {__version__}",
                f"# command {self.command}",
                f"# seed {self.seed}",
                f"# params {json.dumps(self.params, sort_keys=True)}"]


def load_config_file(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


def apply_config_file(args: argparse.Namespace, overrides: Dict[str, Any]) -> argparse.Namespace:
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest in ("command", "handler", "config") or not hasattr(args, dest):
            raise ValueError(f"config key {key!r} is not an option of {args.command}")
        setattr(args, dest, value)
    return args


def _progress(message: str):
    print(message, file=sys.stderr)


def cmd_purify_sweep(args) -> tuple:
    eps_grid = parse_range(args.eps)
    levels = parse_int_list(args.levels)
    if not eps_grid:
        raise ValueError("epsilon grid is empty")
    for level in levels:
        if level not in LEVELS:
            raise ValueError(f"levels must be in {LEVELS}, got {level}")
    trials = int(args.trials)
    runner = TrialRunner(args.seed, args.workers)
    params = dict(eps=eps_grid, levels=levels, p1=float(args.p1), p2=float(args.p2), pm=float(args.pm),
                  trials=trials)
    rows = [["epsilon", "level", "infidelity", "mean_raw_pairs", "mean_time_T0", "stderr"]]
    for i, epsilon in enumerate(eps_grid):
        noise = NoiseModel(epsilon, float(args.p1), float(args.p2), float(args.pm))
        for level in levels:
            infidelity = run_level(level, noise).infidelity
            cost = markov_cost(level, noise, trials, runner=runner, stream=(i,))
            rows.append([epsilon, level, infidelity, cost.mean_raw_pairs, cost.mean_time_t0, cost.stderr])
        _progress(f"✅ eps={epsilon:.4f} done ({i + 1}/{len(eps_grid)})")
    return params, rows, []


def _pipeline_config(args) -> PipelineConfig:
    sizes = parse_int_list(args.fuse)
    chain = int(args.chain) if args.chain is not None else len(sizes) + 1
    if chain < 1 or chain > len(sizes) + 1:
        raise ValueError(f"--chain must be between 1 and {len(sizes) + 1}, got {chain}")
    steering = args.steering
    if steering not in ("best",) + tuple(RANKS):
        steering = tuple(parse_int_list(steering))
    return PipelineConfig(initial_level=int(args.level), fuse_sizes=tuple(sizes[:chain - 1]),
                          repurify_level=int(args.repurify_level), steering=steering)


def _format_words(words) -> str:
    """Round words as kept/sacrificed, rounds joined by spaces; 1 is the identity"""
    return " ".join("/".join("".join(w) or "1" for w in pair) for pair in words)


def cmd_repeater(args) -> tuple:
    config = _pipeline_config(args)
    noise = NoiseModel(float(args.eps), float(args.p1), float(args.p2), float(args.pm))
    link = LinkBudget(spacing_km=float(args.spacing_km), two_photon=not args.single_photon)
    params = dict(eps=noise.epsilon, p1=noise.p1, p2=noise.p2, pm=noise.pm, level=config.initial_level,
                  repurify_level=config.repurify_level, fuse=list(config.fuse_sizes),
                  steering=config.steering if isinstance(config.steering, str) else list(config.steering),
                  spacing_km=link.spacing_km, two_photon=link.two_photon, t2_seconds=float(args.t2))
    _progress(f"🔗 Running {1 + 2 * len(config.fuse_sizes)} stage pipeline")
    report = pipeline(config, noise)
    rows = [["section", "label", "quantity", "value"]]
    for stage in report:
        rows.append(["stage", stage.stage, "fidelity", stage.fidelity])
        for k, weight in enumerate(stage.error_channels, start=1):
            rows.append(["stage", stage.stage, f"channel_{k}", weight])
        if stage.mean_cost is not None:
            rows.append(["cost", stage.stage, "raw_pairs", stage.mean_cost])
        if stage.words:
            rows.append(["steering", stage.stage, "words", _format_words(stage.words)])
    rows.append(["cost", "total", "raw_pairs", report.total_cost])
    budget = rate_budget(link)
    for name in ("loss_db", "success_scaling", "max_cycle_rate_hz", "advised_spacing_km", "attempt_shortfall"):
        rows.append(["budget", "link", name, float(getattr(budget, name))])
    rows.append(["budget", "chain", "reach_km", chain_reach_km(config.fuse_sizes, link.spacing_km)])
    # one link's purification must finish inside the window
    memory = memory_budget(float(args.t2), report.stage_costs[0])
    for name in ("window_s", "max_t0_s", "min_rate_hz"):
        rows.append(["budget", "memory", name, float(getattr(memory, name))])
    _progress(f"✅ Final fidelity {report[-1].fidelity:.6f}, total cost {report.total_cost:.2f} raw pairs")
    return params, rows, []


def cmd_threshold(args) -> tuple:
    sizes = parse_int_list(args.L) if args.L is not None else list(Config.full_sizes if args.full else Config.desk_sizes)
    trials = int(args.trials) if args.trials is not None else (Config.full_trials if args.full else Config.desk_trials)
    eps_grid = parse_range(args.eps)
    noise = NoiseModel(0.0, float(args.p1), float(args.p2), float(args.pm))
    params = dict(method=args.method, level=int(args.level), L=sizes, trials=trials, eps=eps_grid,
                  p1=noise.p1, p2=noise.p2, pm=noise.pm, backend=args.backend)
    _progress("=" * 50)
    _progress(f"🧪 Threshold scan: method {args.method}, level {args.level}, L={sizes}, {trials} trials")
    _progress("=" * 50)
    runner = TrialRunner(args.seed, args.workers)

    def report(point):
        _progress(f"  eps={point.epsilon:.4f} L={point.L}: {point.failures}/{point.trials}")

    result = threshold_scan(args.method, int(args.level), noise, eps_grid, sizes, trials,
                            backend=args.backend, runner=runner, progress=report)
    rows = [["epsilon", "L", "trials", "failures", "rate", "stderr"]]
    rows += [[p.epsilon, p.L, p.trials, p.failures, p.rate, p.stderr] for p in result.points]
    footer = []
    for c in result.crossings:
        if c.bracketed:
            footer.append(f"# crossing L={c.size_small}/{c.size_large} epsilon={_fmt(c.epsilon)} "
                          f"ci95=[{_fmt(c.ci_low)},{_fmt(c.ci_high)}]")
        else:
            footer.append(f"# warning: no crossing bracketed between L={c.size_small} and L={c.size_large}")
            _progress(f"⚠️ No crossing between L={c.size_small} and L={c.size_large}")
    if result.estimate is not None:
        footer.append(f"# threshold estimate {_fmt(result.estimate)}")
    return params, rows, footer


def cmd_table_dump(args) -> tuple:
    noise = NoiseModel(float(args.eps), float(args.p1), float(args.p2), float(args.pm))
    params = dict(method=args.method, level=int(args.level), basis=args.basis, eps=noise.epsilon,
                  p1=noise.p1, p2=noise.p2, pm=noise.pm)
    table = build_table(args.method, int(args.level), noise, args.basis)
    summary = resource_summary(args.method, int(args.level), noise)
    lines = [f"# {name} {value:.9f}" for name, value in summary.items()]
    dominant = table.dominant_error()
    if dominant is not None:
        lines.append(f"# dominant {dominant.pauli} {int(dominant.lie)} {dominant.probability:.6e}")
    _progress(f"✅ {len(table.entries)} entries, error mass {table.error_mass:.3e}")
    return params, None, lines + table.to_text().splitlines()


def _add_noise_flags(parser, eps_default=None):
    if eps_default is not None:
        parser.add_argument("--eps", default=eps_default, help="raw pair infidelity")
    parser.add_argument("--p1", type=float, default=Config.p1, help="single-qubit gate error")
    parser.add_argument("--p2", type=float, default=Config.p2, help="two-qubit gate error")
    parser.add_argument("--pm", type=float, default=Config.pm, help="measurement error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionlink", description="Modular ion-trap entanglement experiments")
    parser.add_argument("--version", action="version", version=f"ionlink {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default ${Config.seed_env})")
    common.add_argument("--workers", type=int, default=Config.workers, help="worker processes")
    common.add_argument("--output", "-o", default=None, help="write to this file instead of stdout")
    common.add_argument("--config", default=None, help="JSON file whose keys override flags")
    common.add_argument("--verbose", "-v", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("purify-sweep", parents=[common], help="purified infidelity and raw-pair cost vs epsilon")
    p.add_argument("--levels", default="1,2,3")
    _add_noise_flags(p, eps_default="0.01:0.15:0.01")
    p.add_argument("--trials", type=int, default=Config.purify_trials)
    p.set_defaults(handler=cmd_purify_sweep)

    p = sub.add_parser("repeater", parents=[common], help="purify, fuse and re-purify along a chain")
    _add_noise_flags(p, eps_default=Config.epsilon)
    p.add_argument("--level", type=int, default=3, help="initial purification level")
    p.add_argument("--repurify-level", type=int, default=2)
    p.add_argument("--fuse", default=",".join(str(m) for m in Config.fuse_sizes), help="links fused per tier")
    p.add_argument("--chain", type=int, default=None, help="stages to run in tiers (1 = purified pair only)")
    p.add_argument("--steering", default="best", help=f"best, {', '.join(sorted(RANKS))} or a rank like 3,2,1")
    p.add_argument("--spacing-km", type=float, default=Config.spacing_km)
    p.add_argument("--single-photon", action="store_true")
    p.add_argument("--t2", type=float, default=Config.t2_seconds, help="memory T2 in seconds")
    p.set_defaults(handler=cmd_repeater)

    p = sub.add_parser("threshold", parents=[common], help="toric-code logical error rates and crossing")
    p.add_argument("--method", choices=METHODS, default="a")
    p.add_argument("--level", type=int, choices=LEVELS, default=3)
    p.add_argument("--L", default=None, help="lattice sizes, e.g. 4,6,8")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--full", action="store_true", help="L=8,12,16 with 16000 trials (long run)")
    p.add_argument("--backend", choices=BACKENDS, default=Config.decoder_backend)
    _add_noise_flags(p, eps_default="0.13:0.20:0.01")
    p.set_defaults(handler=cmd_threshold)

    p = sub.add_parser("table-dump", parents=[common], help="print a parity error table")
    p.add_argument("--method", choices=METHODS, default="a")
    p.add_argument("--level", type=int, choices=LEVELS, default=3)
    p.add_argument("--basis", choices=BASES, default="Z")
    _add_noise_flags(p, eps_default=Config.epsilon)
    p.set_defaults(handler=cmd_table_dump)
    return parser


def render(config: ExperimentConfig, rows: Optional[Sequence[Sequence]], footer: Sequence[str]) -> str:
    buffer = io.StringIO()
    buffer.write("\n".join(config.header_lines()) + "\n")
    if rows:
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerows([[_fmt(v) for v in row] for row in rows])
    for line in footer:
        buffer.write(line + "\n")
    return buffer.getvalue()


def _configure_logging(verbosity: int):
    level = logging.DEBUG if verbosity > 1 else logging.INFO if verbosity == 1 else logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.verbose)
    try:
        if args.config:
            apply_config_file(args, load_config_file(args.config))
        args.seed = int(args.seed) if args.seed is not None else default_seed()
        params, rows, footer = args.handler(args)
        text = render(ExperimentConfig(args.command, args.seed, params), rows, footer)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
            _progress(f"📄 Saved {args.output}")
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except (NumericalInvariantError, QubitBudgetError) as exc:
        _progress(f"❌ Numerical check failed: {exc}")
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        _progress(f"❌ {exc}")
        return EXIT_USAGE


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
