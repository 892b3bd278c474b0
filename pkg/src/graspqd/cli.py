"""Command-line entry point: ``graspqd <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 input/output or file-format error,
3 configuration or precondition error, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

from . import __version__
from .config import ConfigError, load_config
from .dataset import (DatasetError, DatasetRecord, atomic_write_text, bootstrap_from_record, compute_stats,
                      read_dataset, record_from_archive, rescale_to_reference, write_dataset)
from .mesh import AugmentationSpec, MeshError, augment, load_mesh, sample_augmentation
from .qd import BudgetError, RunConfig, run
from .transfer import (augment_and_generate, bootstrap_run, compare_bootstrap_vs_scratch, curves_csv,
                       format_ratios, spec_seeds, summarize)

EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_INTERNAL = 1, 2, 3, 4
log = logging.getLogger("graspqd")


class UsageError(Exception):
    pass


class PreconditionError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _object_id(path):
    name = os.path.basename(path)
    for suffix in (".qdg.jsonl", ".obj", ".stl", ".qdgm"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return os.path.splitext(name)[0]


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.seed) if args.config else RunConfig(rng_seed=args.seed)
    if getattr(args, "budget", None) is not None:
        try:
            cfg = cfg.replace(eval_budget=args.budget)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _metrics_csv(metrics):
    h = metrics.history
    rows = zip(h["generation"], h["evaluations"], h["robust_count"], h["success_count"],
               [repr(float(c)) for c in h["coverage"]])
    return _csv_text(["generation", "evaluations", "robust_count", "success_count", "coverage"], rows)


def _bootstrap(args, mesh, config):
    records = read_dataset(args.dataset, strict=args.strict_digests,
                           mesh_digests={_object_id(args.mesh): mesh.digest} if args.strict_digests else None)
    core = [r for r in records if r.source == "core"] or records
    if not core:
        raise PreconditionError(f"{args.dataset} holds no records to bootstrap from")
    record = next((r for r in core if r.object_id == _object_id(args.mesh)), core[0])
    if not any(g.success for g in record.grasps):
        raise PreconditionError(
            f"bootstrap dataset {args.dataset} has no successful grasps for {record.object_id!r}; "
            "the bootstrap archive would be empty")
    if record.gripper_digest != config.gripper.digest:
        raise PreconditionError("bootstrap dataset was generated with a different gripper configuration")
    return bootstrap_from_record(record)


def _mode(args):
    return args.transfer.replace("-", "_")


def cmd_generate(args):
    mesh = load_mesh(args.mesh)
    config = _config(args)
    res = run(mesh, config, jobs=args.jobs)
    oid = _object_id(args.mesh)
    out = _out_dir(args.out)
    write_dataset([record_from_archive(res.archive, oid, mesh, config.gripper, config.digest)],
                  os.path.join(out, f"{oid}.qdg.jsonl"))
    atomic_write_text(os.path.join(out, f"{oid}.metrics.csv"), _metrics_csv(res.metrics))
    m = res.metrics
    print(f"{oid}: {m.evaluations_used} evaluations, {m.success_count} successful, "
          f"{m.robust_grasp_count} robust, coverage {m.coverage:.4f}")


def _transfer_rows(oid, results):
    rows = []
    for k, r in enumerate(results):
        rep = r.report
        rows.append([f"{oid}_aug{k:03d}", r.spec.rng_seed, *[repr(a) for a in r.spec.alpha], rep.n_seeds,
                     rep.n_transferred, repr(rep.transfer_rate), rep.robust_count, rep.evaluations_used])
    return _csv_text(["object_id", "spec_seed", "alpha_x", "alpha_y", "alpha_z", "n_seeds", "n_transferred",
                      "transfer_rate", "robust_count", "evaluations_used"], rows)


def cmd_augment(args):
    mesh = load_mesh(args.mesh)
    config = _config(args)
    seeds = _bootstrap(args, mesh, config)
    oid = _object_id(args.mesh)
    if args.mode == "continue":
        if config.eval_budget < len(seeds):
            raise BudgetError(f"evaluation budget {config.eval_budget} is smaller than the {len(seeds)} seed genomes")
        results = []
        for s in spec_seeds(args.seed, args.n_aug):
            spec = sample_augmentation(s, args.alpha_min, args.alpha_max, oid)
            results.append(bootstrap_run(augment(mesh, spec), seeds, spec, config, False, _mode(args), args.jobs))
    else:
        results = augment_and_generate(mesh, seeds, args.n_aug, args.alpha_min, args.alpha_max, config,
                                       args.seed, _mode(args), args.jobs)
    out = _out_dir(args.out)
    for k, r in enumerate(results):
        rec = record_from_archive(r.archive, f"{oid}_aug{k:03d}", r.mesh, config.gripper, config.digest,
                                  source="augmented", augmentation=r.spec)
        write_dataset([rec], os.path.join(out, f"{oid}_aug{k:03d}.qdg.jsonl"))
    atomic_write_text(os.path.join(out, "transfer_summary.csv"), _transfer_rows(oid, results))
    rates = [r.report.transfer_rate for r in results]
    print(f"{oid}: {len(results)} augmentations, mean transfer rate {sum(rates) / len(rates):.3f}")


def cmd_transfer(args):
    mesh = load_mesh(args.mesh)
    config = _config(args)
    seeds = _bootstrap(args, mesh, config)
    spec = AugmentationSpec((1.0, 1.0, 1.0), seeds.source_object_id, args.seed)
    stop = args.mode != "continue"
    res = bootstrap_run(mesh, seeds, spec, config, stop, _mode(args), args.jobs)
    oid = _object_id(args.mesh)
    out = _out_dir(args.out)
    write_dataset([record_from_archive(res.archive, oid, mesh, config.gripper, config.digest, source="augmented")],
                  os.path.join(out, f"{oid}.qdg.jsonl"))
    atomic_write_text(os.path.join(out, f"{oid}.metrics.csv"), _metrics_csv(res.metrics))
    print(f"{oid}: transfer rate {res.report.transfer_rate:.3f} ({res.report.n_transferred}/{res.report.n_seeds})")


def cmd_compare(args):
    mesh = load_mesh(args.mesh)
    config = _config(args)
    seeds = _bootstrap(args, mesh, config)
    oid = _object_id(args.mesh)
    specs = [sample_augmentation(s, args.alpha_min, args.alpha_max, oid) for s in spec_seeds(args.seed, args.n_aug)]
    records = compare_bootstrap_vs_scratch(mesh, seeds, specs, config, _mode(args), args.jobs)
    out = _out_dir(args.out)
    rows = [[r.object_id, r.spec.rng_seed, r.n_seeds, repr(r.transfer_rate), r.robust_bootstrap_end,
             r.robust_scratch_same, r.robust_bootstrap_full, r.robust_scratch_full, r.evaluations_full,
             repr(r.ratio)] for r in records]
    atomic_write_text(os.path.join(out, "comparison.csv"), _csv_text(
        ["object_id", "spec_seed", "n_seeds", "transfer_rate", "robust_bootstrap_end", "robust_scratch_same",
         "robust_bootstrap_full", "robust_scratch_full", "evaluations_full", "ratio"], rows))
    atomic_write_text(os.path.join(out, "curves.csv"), curves_csv(records))
    summary = summarize(records)
    atomic_write_text(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    evals = sum(r.n_seeds for r in records)
    print(f"fraction_better {summary['fraction_better']:.3f}; evaluations per robust grasp at "
          f"{evals} evaluations (bootstrap vs scratch): "
          f"{format_ratios(evals, sum(r.robust_bootstrap_end for r in records), sum(r.robust_scratch_same for r in records))}")


def cmd_stats(args):
    stats = None
    for path in args.dataset:
        s = compute_stats(read_dataset(path))
        stats = s if stats is None else stats.merge(s)
    text = stats.to_csv()
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    log.info("summary %s", stats.summary())


def _read_sizes(path):
    sizes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                sizes.append(float(line.split(",")[-1]))
            except ValueError:
                raise DatasetError(f"not a number: {line!r}", lineno, path) from None
    return sizes


def cmd_rescale(args):
    sizes = _read_sizes(args.sizes)
    ref = _read_sizes(args.reference)
    try:
        mu = rescale_to_reference(sizes, ref, args.seed, "identity" if args.identity_pairing else "random")
    except ValueError as exc:
        raise PreconditionError(str(exc)) from None
    text = _csv_text(["index", "size", "factor", "rescaled_size"],
                     [[i, repr(s), repr(float(m)), repr(float(s * m))] for i, (s, m) in enumerate(zip(sizes, mu))])
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def build_parser():
    p = _Parser(prog="graspqd", description="Quality-diversity grasp generation and transfer.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, seed_required=True, budget=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, required=seed_required, help="run seed (required, no implicit entropy)")
        sp.add_argument("--jobs", type=int, default=1, help="evaluation threads; results do not depend on it")
        if budget:
            sp.add_argument("--budget", type=int, help="evaluation budget (overrides the config file)")

    def transfer_opts(sp):
        sp.add_argument("--dataset", required=True, help="bootstrap dataset (.qdg.jsonl)")
        sp.add_argument("--transfer", choices=["raw", "scaled-position"], default="scaled-position")
        sp.add_argument("--strict-digests", action="store_true", help="require dataset mesh digests to match --mesh")

    g = sub.add_parser("generate", help="run the QD search on a mesh")
    g.add_argument("--mesh", required=True)
    g.add_argument("--out", required=True, help="output directory")
    common(g)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("augment", help="scale a mesh and transfer bootstrap grasps onto each copy")
    a.add_argument("--mesh", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--n-aug", type=int, default=10)
    a.add_argument("--alpha-min", type=float, default=0.5)
    a.add_argument("--alpha-max", type=float, default=1.5)
    a.add_argument("--mode", choices=["stop-after-bootstrap", "continue"], default="stop-after-bootstrap")
    transfer_opts(a)
    common(a)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("transfer", help="evaluate bootstrap grasps on another mesh")
    t.add_argument("--mesh", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=["stop-after-bootstrap", "continue"], default="stop-after-bootstrap")
    transfer_opts(t)
    common(t)
    t.set_defaults(func=cmd_transfer)

    c = sub.add_parser("compare", help="bootstrapped versus from-scratch runs on augmented copies")
    c.add_argument("--mesh", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--n-aug", type=int, default=10)
    c.add_argument("--alpha-min", type=float, default=0.8)
    c.add_argument("--alpha-max", type=float, default=1.2)
    transfer_opts(c)
    common(c)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("stats", help="dataset statistics as CSV")
    s.add_argument("--dataset", nargs="+", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    r = sub.add_parser("rescale", help="scale factors matching a reference size distribution")
    r.add_argument("--sizes", required=True, help="text file, one size (m) per line")
    r.add_argument("--reference", required=True, help="text file of reference sizes (m)")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--identity-pairing", action="store_true", help="pair size i with reference i")
    r.add_argument("--out")
    r.set_defaults(func=cmd_rescale)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    for name in ("jobs", "n_aug"):
        if getattr(args, name, 1) < 1:
            print(f"graspqd: --{name.replace('_', '-')} must be at least 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        args.func(args)
    except OSError as exc:
        msg = f"cannot read {exc.filename}: {exc.strerror}" if exc.filename else str(exc)
        print(f"graspqd: {msg}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, MeshError) as exc:
        print(f"graspqd: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, BudgetError, PreconditionError) as exc:
        print(f"graspqd: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"graspqd: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
