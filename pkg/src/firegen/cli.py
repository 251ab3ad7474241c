"""Command-line entry point: ingest, surrogate, train, sample, oversample,
evaluate, simulate, report.

Every run writes a manifest (config, seeds, input/output hashes) next to
its artifacts so it can be reproduced bit-identically.  A flat key=value
config file can preset any flag; explicit flags win.  The default output
root comes from $FIREGEN_OUTPUT_ROOT (falling back to ./out).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, diffusion, dispatch, metrics, quota
from . import data_model as dm

OUTPUT_ROOT_ENV = "FIREGEN_OUTPUT_ROOT"


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "out"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_config(path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    cfg = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _apply_config(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    cfg = read_config(args.config)
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            continue
        if attr in args._explicit:
            continue  # CLI flag overrides its config key
        current = getattr(args, attr)
        if isinstance(current, bool):
            value = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        setattr(args, attr, value)


class _TrackingParser(argparse.ArgumentParser):
    """Records which destinations were set explicitly on the command line
    so config-file values only fill in unset flags."""

    def parse_args(self, argv=None, namespace=None):
        args = super().parse_args(argv, namespace)
        explicit = set()
        tokens = list(argv if argv is not None else sys.argv[1:])
        for action in getattr(args, "_actions_ref", []):
            if any(opt in tokens for opt in action.option_strings):
                explicit.add(action.dest)
        args._explicit = explicit
        return args


def _write_manifest(outdir: Path, command: str, args_dict: dict,
                    inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "args": {k: v for k, v in args_dict.items()
                 if not k.startswith("_") and k != "func"},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs
                   if Path(p).is_file()},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs
                    if Path(p).is_file()},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                     default=str))


def _outdir(args) -> Path:
    out = Path(args.out) if args.out else _output_root() / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_zones(args, records) -> dm.ZonePartition:
    if getattr(args, "zones", None):
        return dm.load_zones(args.zones)
    return dm.fit_zones(records, k=args.n_zones, seed=args.seed)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_surrogate(args) -> int:
    out = _outdir(args)
    records = dm.surrogate_dataset(args.seed, args.n)
    target = out / "surrogate.csv"
    dm.write_csv(records, target)
    _write_manifest(out, "surrogate", vars(args), [], [target])
    print(f"wrote {len(records)} records to {target}")
    return 0


def cmd_ingest(args) -> int:
    out = _outdir(args)
    records, schema = dm.load_csv(args.dataset)
    (out / "schema.json").write_text(json.dumps(schema.to_json()))
    stats = metrics.marginal_stats(records)
    lines = [f"rows: {len(records)}",
             f"incident cardinality: "
             f"{schema.column('incident').cardinality}"]
    for name, (mean, std, vmin, vmax) in stats.items():
        lines.append(f"{name}: mean={mean:.3f} std={std:.3f} "
                     f"min={vmin:g} max={vmax:g}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "ingest", vars(args), [Path(args.dataset)],
                    [out / "schema.json", out / "summary.txt"])
    print("\n".join(lines))
    return 0


def cmd_train(args) -> int:
    out = _outdir(args)
    records, schema = dm.load_csv(args.dataset)
    matrix = dm.encode(records, schema)
    mode = "conditioned" if args.generator == "tabdiff" else "unconditional"
    config = diffusion.TrainConfig(
        T=args.steps, epochs=args.epochs, batch=args.batch, lr=args.lr,
        mode=mode, target=args.target, seed=args.seed)
    model = diffusion.train(matrix, schema, config)
    target = out / "model.npz"
    diffusion.save_model(model, target)
    _write_manifest(out, "train", vars(args), [Path(args.dataset)], [target])
    print(f"final epoch loss: {model.loss_history[-1]:.6f}")
    print(f"checkpoint: {target}")
    return 0


def cmd_sample(args) -> int:
    out = _outdir(args)
    model = diffusion.load_model(args.model)
    records = diffusion.sample(model, args.n, args.seed,
                               condition=args.condition)
    target = out / "samples.csv"
    dm.write_csv(records, target)
    _write_manifest(out, "sample", vars(args), [Path(args.model)], [target])
    print(f"wrote {len(records)} records to {target}")
    return 0


def _make_generator(args, real_records):
    kind = args.generator
    if kind == "shuffle":
        return lambda n, seed: baselines.shuffle_sample(real_records, n, seed)
    if kind == "independent":
        return lambda n, seed: baselines.independent_sample(
            real_records, n, seed)
    if kind in ("tabdiff", "tinydiff"):
        if not args.model:
            raise ValueError(f"generator {kind!r} needs --model")
        model = diffusion.load_model(args.model)
        return lambda n, seed: diffusion.sample(model, n, seed)
    if kind == "external-csv":
        if not args.external:
            raise ValueError("generator 'external-csv' needs --external")
        pool, _ = dm.load_csv(args.external)
        # external outputs are a fixed pool; draw from it with replacement
        return lambda n, seed: baselines.shuffle_sample(pool, n, seed)
    raise ValueError(f"unknown generator {kind!r}")


def cmd_oversample(args) -> int:
    out = _outdir(args)
    records, _ = dm.load_csv(args.dataset)
    zones = _load_zones(args, records)
    if args.quota_file:
        spec = quota.load_quota_file(args.quota_file, args.tolerance,
                                     args.budget)
    else:
        spec = quota.build_quota(records, zones, args.tolerance, args.budget,
                                 uniform=args.uniform_quota)
    generator = _make_generator(args, records)
    result = quota.oversample(generator, spec, zones,
                              batch_size=args.batch, seed=args.seed)
    accepted_path = out / "accepted.csv"
    dm.write_csv(result.accepted, accepted_path, include_area=True)
    (out / "quota_summary.txt").write_text(result.summary() + "\n")
    inputs = [Path(args.dataset)]
    if args.model:
        inputs.append(Path(args.model))
    _write_manifest(out, "oversample", vars(args), inputs,
                    [accepted_path, out / "quota_summary.txt"])
    print(result.summary())
    return 0 if result.status == "success" else 1


def cmd_evaluate(args) -> int:
    out = _outdir(args)
    real, schema = dm.load_csv(args.real)
    fake, _ = dm.load_csv(args.fake, schema=None)
    zones = _load_zones(args, real)
    real = dm.with_areas(real, zones)
    fake = dm.with_areas(fake, zones)
    report = metrics.compute_report(real, fake, schema, k=args.k,
                                    mmd_cap=args.mmd_cap,
                                    prdc_cap=args.prdc_cap,
                                    n_zones=zones.count, seed=args.seed)
    report.save(out / "fidelity_report.json")
    emit_report([report], [args.label], out, plots=args.plots)
    _write_manifest(out, "evaluate", vars(args),
                    [Path(args.real), Path(args.fake)],
                    sorted(out.glob("*.csv")) + [out / "fidelity_report.json"])
    print(f"wasserstein mean: {report.wasserstein_mean:.4f}")
    print(f"mmd: {report.mmd:.6f}")
    print(f"precision {report.precision:.3f} recall {report.recall:.3f} "
          f"density {report.density:.3f} coverage {report.coverage:.3f}")
    return 0


def cmd_simulate(args) -> int:
    out = _outdir(args)
    records, _ = dm.load_csv(args.dataset)
    stations, rules = dispatch.load_resources(args.stations, args.rules)
    report = dispatch.simulate(records, stations, rules,
                               travel_speed=args.speed, seed=args.seed)
    (out / "sim_summary.txt").write_text(report.summary() + "\n")
    with (out / "concurrency.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["intervention", "busy"])
        for i, b in enumerate(report.concurrency):
            writer.writerow([i, b])
    with (out / "totals.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_type", "count"])
        for t in sorted(report.totals):
            writer.writerow([t, report.totals[t]])
    _write_manifest(out, "simulate", vars(args),
                    [Path(args.dataset), Path(args.stations),
                     Path(args.rules)],
                    [out / "sim_summary.txt", out / "concurrency.csv",
                     out / "totals.csv"])
    print(report.summary())
    return 0


def cmd_report(args) -> int:
    out = _outdir(args)
    reports = [metrics.FidelityReport.load(p) for p in args.reports]
    labels = args.labels.split(",") if args.labels else \
        [f"gen{i}" for i in range(len(reports))]
    if len(labels) != len(reports):
        raise ValueError("label count does not match report count")
    emit_report(reports, labels, out, plots=args.plots)
    _write_manifest(out, "report", vars(args),
                    [Path(p) for p in args.reports],
                    sorted(out.glob("*.csv")))
    print(f"report bundle written to {out}")
    return 0


# ---------------------------------------------------------------------------
# Report bundle emission


def emit_report(reports: list[metrics.FidelityReport], labels: list[str],
                outdir: Path, plots: bool = False) -> None:
    """One comparison table per metric family plus per-figure CSVs."""
    if len(reports) != len(labels):
        raise ValueError("label count does not match report count")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    def table(name, header, rows):
        with (outdir / name).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    global_rows = []
    for metric in ("precision", "recall", "density", "coverage",
                   "wasserstein_mean", "mmd"):
        global_rows.append([metric] + [getattr(r, metric) for r in reports])
    table("table_global.csv", ["metric"] + labels, global_rows)

    stat_rows = []
    first = reports[0]
    for si, stat in enumerate(("mean", "std", "min", "max")):
        for feat in dm.CANONICAL_COLUMNS:
            row = [stat, feat, first.marginal_stats_real[feat][si]]
            row += [r.marginal_stats_fake[feat][si] for r in reports]
            stat_rows.append(row)
    table("table_marginal_stats.csv", ["stat", "feature", "RAW"] + labels,
          stat_rows)

    feats = list(first.jsd)
    table("table_jsd.csv", ["feature"] + labels,
          [[f] + [r.jsd.get(f) for r in reports] for f in feats])

    var_rows = []
    for f in first.variation:
        var_rows.append([f"min_{f}"] + [r.variation.get(f, (None, None))[0]
                                        for r in reports])
        var_rows.append([f"max_{f}"] + [r.variation.get(f, (None, None))[1]
                                        for r in reports])
    table("table_variation.csv", ["bound"] + labels, var_rows)

    # figure data
    if first.histograms.get("month"):
        bins = first.histograms["month"]["bins"]
        rows = [[b, first.histograms["month"]["real"][i]]
                + [r.histograms["month"]["fake"][i] for r in reports]
                for i, b in enumerate(bins)]
        table("fig_month_counts.csv", ["month", "RAW"] + labels, rows)
    if first.histograms.get("day"):
        real_counts = np.asarray(first.histograms["day"]["real"])
        order = np.argsort(-real_counts)  # descending by real count
        rows = []
        for rank, i in enumerate(order):
            row = [rank, first.histograms["day"]["bins"][i],
                   int(real_counts[i])]
            row += [r.histograms["day"]["fake"][i] for r in reports]
            rows.append(row)
        table("fig_day_counts_desc.csv", ["rank", "day", "RAW"] + labels,
              rows)
    if first.area_counts_real:
        rows = [[a, first.area_counts_real[a]]
                + [r.area_counts_fake[a] if a < len(r.area_counts_fake)
                   else 0 for r in reports]
                for a in range(len(first.area_counts_real))]
        table("fig_area_counts.csv", ["area", "RAW"] + labels, rows)
    for label, r in zip(labels, reports):
        header = ["incident"] + [str(m) for m in r.cooccurrence_cols]
        rows = [[code] + list(map(int, r.cooccurrence_fake[i]))
                for i, code in enumerate(r.cooccurrence_rows)]
        table(f"fig_cooccurrence_{label}.csv", header, rows)
    header = ["incident"] + [str(m) for m in first.cooccurrence_cols]
    rows = [[code] + list(map(int, first.cooccurrence_real[i]))
            for i, code in enumerate(first.cooccurrence_rows)]
    table("fig_cooccurrence_RAW.csv", header, rows)

    if plots:
        _render_plots(reports, labels, outdir)


def _render_plots(reports, labels, outdir: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    first = reports[0]
    for feat in ("month", "area"):
        hist = first.histograms.get(feat)
        counts = first.area_counts_real if feat == "area" else None
        if not hist and not counts:
            continue
        fig, ax = plt.subplots(figsize=(8, 4))
        if feat == "month":
            x = np.asarray(hist["bins"], dtype=float)
            ax.bar(x - 0.2, hist["real"], width=0.4, label="RAW")
            for r, label in zip(reports, labels):
                ax.bar(x + 0.2, r.histograms[feat]["fake"], width=0.4,
                       label=label)
                break
        else:
            x = np.arange(len(first.area_counts_real), dtype=float)
            ax.bar(x - 0.2, first.area_counts_real, width=0.4, label="RAW")
            for r, label in zip(reports, labels):
                ax.bar(x + 0.2, r.area_counts_fake, width=0.4, label=label)
                break
        ax.set_xlabel(feat)
        ax.set_ylabel("interventions")
        ax.legend()
        fig.tight_layout()
        fig.savefig(outdir / f"fig_{feat}_counts.svg")
        plt.close(fig)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _TrackingParser:
    parser = _TrackingParser(prog="firegen")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("surrogate", help="emit the synthetic test dataset")
    common(p)
    p.add_argument("-n", type=int, default=5000)
    p.set_defaults(func=cmd_surrogate)

    p = sub.add_parser("ingest", help="validate a dataset and fit its schema")
    common(p)
    p.add_argument("dataset")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a diffusion generator")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--generator", choices=("tabdiff", "tinydiff"),
                   default="tabdiff")
    p.add_argument("--target", default="incident")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample records from a checkpoint")
    common(p)
    p.add_argument("model")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--condition", type=int, default=None,
                   help="pin the target category")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oversample",
                       help="quota-constrained rejection sampling")
    common(p)
    p.add_argument("dataset", help="real dataset defining the quotas")
    p.add_argument("--generator", default="shuffle",
                   choices=("tabdiff", "tinydiff", "shuffle", "independent",
                            "external-csv"))
    p.add_argument("--model", help="checkpoint for diffusion generators")
    p.add_argument("--external", help="CSV pool for external-csv")
    p.add_argument("--zones", help="zone centroid file")
    p.add_argument("--n-zones", type=int, default=45)
    p.add_argument("--quota-file", help="explicit zone,target CSV")
    p.add_argument("--uniform-quota", action="store_true")
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--budget", type=int, default=3,
                   help="budget multiplier B")
    p.add_argument("--batch", type=int, default=quota.DEFAULT_BATCH_SIZE)
    p.set_defaults(func=cmd_oversample)

    p = sub.add_parser("evaluate", help="fidelity metrics real vs fake")
    common(p)
    p.add_argument("real")
    p.add_argument("fake")
    p.add_argument("--label", default="generated")
    p.add_argument("--zones", help="zone centroid file")
    p.add_argument("--n-zones", type=int, default=45)
    p.add_argument("--k", type=int, default=metrics.DEFAULT_PRDC_K)
    p.add_argument("--mmd-cap", type=int, default=metrics.DEFAULT_MMD_CAP)
    p.add_argument("--prdc-cap", type=int, default=metrics.DEFAULT_PRDC_CAP)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="dispatch discrete-event replay")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--stations", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--speed", type=float, default=None,
                   help="travel speed in meters/minute")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="comparison bundle from saved reports")
    common(p)
    p.add_argument("reports", nargs="+")
    p.add_argument("--labels", help="comma-separated generator labels")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_report)

    for action in parser._subparsers._group_actions:
        for choice in action.choices.values():
            choice.set_defaults(_actions_ref=choice._actions)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
