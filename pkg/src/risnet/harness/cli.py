"""Command line: ``risnet generate-data | train | evaluate``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from ..channel import ConfigError, generate_dataset
from .config import arch_from, load_config, scenario_from, train_from
from .evaluation import evaluate
from .io import FormatError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .plots import figure_path, plot_report, plot_training
from .training import train

log = logging.getLogger("risnet")

REGIMES = {"det": "deterministic", "det-iid": "deterministic_plus_iid", "iid": "iid"}


def write_metrics_csv(metrics, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "train_sum_rate", "test_sum_rate", "wall_ms"])
        for it, tr, te, ms in metrics.rows():
            w.writerow([it, repr(tr), repr(te), repr(ms)])


def write_report_csv(report, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "sum_rate", "forward_ms"])
        for k, (rate, ms) in enumerate(zip(report.rates, report.forward_ms)):
            w.writerow([k, repr(float(rate)), repr(float(ms))])


def _load(path):
    samples, scenario = load_dataset(path, with_scenario=True)
    if scenario is None:
        M, N, U = samples[0].dims
        side = int(round(N ** 0.5))
        if side * side != N:
            raise ConfigError(f"{path} has no scenario file and N={N} is not square")
        scenario = scenario_from({}, M=M, N=N, U=U, ris_rows=side, ris_cols=side)
    return samples, scenario


def cmd_generate(args) -> int:
    raw = load_config(args.config) if args.config else {}
    scenario = scenario_from(raw, regime=REGIMES[args.regime], rng_seed=args.scenario_seed)
    samples = generate_dataset(scenario, args.samples, args.seed)
    save_dataset(samples, args.out, scenario)
    log.info("wrote %d samples (M=%d N=%d U=%d, %s) to %s", len(samples), scenario.M, scenario.N,
             scenario.U, scenario.regime, args.out)
    return 0


def cmd_train(args) -> int:
    samples, scenario = _load(args.data)
    raw = load_config(args.config) if args.config else {}
    arch = arch_from(raw, scenario, csi_mode=args.csi)
    cfg = train_from(raw, iterations=args.iters, batch_size=args.batch, learning_rate=args.lr,
                     seed=args.seed, eval_every=args.eval_every)
    test = _load(args.test_data)[0] if args.test_data else None

    def progress(it, tr, te):
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            log.info("iter %d  train %.4f  held-out %.4f", it, tr, te)

    params, metrics = train(samples, arch, cfg, scenario, test_samples=test, progress=progress)
    save_checkpoint(params, args.out)
    write_metrics_csv(metrics, args.metrics)
    if not args.no_plot:
        plot_training(metrics, figure_path(args.metrics))
    log.info("checkpoint %s (%d parameters), metrics %s", args.out, params.count(), args.metrics)
    return 0


def _source(spec: str):
    if spec in ("random", "bcd"):
        return spec
    if spec.startswith("ckpt:"):
        return load_checkpoint(spec[len("ckpt:"):])
    raise ConfigError(f"--source must be ckpt:<path>, random or bcd, got {spec!r}")


def cmd_evaluate(args) -> int:
    samples, scenario = _load(args.data)
    report = evaluate(samples, _source(args.source), scenario, quantize_levels=args.quantize,
                      seed=args.seed)
    write_report_csv(report, args.report)
    if not args.no_plot:
        plot_report(report, figure_path(args.report))
    print(f"{report.source}: mean {report.mean:.4f} std {report.std:.4f} bit/s/Hz "
          f"over {len(report.rates)} samples ({report.phase_kind} phases)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="risnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="draw a synthetic channel dataset")
    g.add_argument("--config", help="key=value scenario file")
    g.add_argument("--regime", choices=sorted(REGIMES), default="det")
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--seed", type=int, default=0, help="seed of the per-sample draws")
    g.add_argument("--scenario-seed", type=int, default=None,
                   help="seed of the fixed BS-RIS channel (default: from the config)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train RISnet on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--test-data", help="held-out dataset for the test_sum_rate column")
    t.add_argument("--config", help="key=value architecture/training file")
    t.add_argument("--csi", choices=["full", "partial"], default="full")
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--eval-every", type=int, default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--metrics", required=True)
    t.add_argument("--no-plot", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="per-sample sum-rates of a phase source")
    e.add_argument("--data", required=True)
    e.add_argument("--source", required=True, help="ckpt:<path>, random or bcd")
    e.add_argument("--quantize", type=int, choices=[0, 4, 8], default=0)
    e.add_argument("--seed", type=int, default=0, help="seed for random phases")
    e.add_argument("--report", required=True)
    e.add_argument("--no-plot", action="store_true")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, OSError) as exc:
        print(f"risnet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
