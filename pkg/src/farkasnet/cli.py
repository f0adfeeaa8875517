"""Command-line entry point.

Subcommands: ``toy2d``, ``born-dead``, ``norm-check``, ``compare``,
``verify <weights-file>`` and ``train <config>``. Every run writes its fully
resolved parameters to ``<out>/<command>.config``; passing that file back via
``--config`` reproduces the run's report files byte for byte.

Exit codes: 0 success, 1 an invariant violation was detected, 2 usage or
format error. The output directory is ``--out``, else ``$FARKASNET_OUT``,
else ``./runs``.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import fileformats as ff
from .exceptions import FarkasError, FormatError
from .netbuild import InitScheme, NetworkSpec, build, mlp_spec
from .train import (CompareConfig, SgdConfig, Toy2dConfig, compare_datasets, fit,
                    run_born_dead, run_norm_stability, run_small_compare, run_toy2d)
from .verify import all_certified, audit_network

log = logging.getLogger("farkasnet")

OUT_ENV = "FARKASNET_OUT"
_META_KEYS = {"command", "config", "out", "jobs", "verbose", "weights", "config_file"}


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _str_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="farkasnet", description=__doc__.split("\n")[0])
    parser.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy2d", help="adversarially initialised two-cluster problem")
    p.add_argument("--config", help="flat key-value file with parameter defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--agg", choices=("sum", "mean"), default="sum")
    p.add_argument("--std", type=float, default=0.5)
    p.add_argument("--swap-labels", action="store_true")

    p = sub.add_parser("born-dead", help="born-dead fraction versus depth")
    p.add_argument("--config")
    p.add_argument("--depths", default="1,2,5,10,20,30")
    p.add_argument("--width", type=int, default=2)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--init", default="symmetric_normal")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--agg", choices=("sum", "mean"), default="sum")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("norm-check", help="l-inf norm of mean-aggregated weights")
    p.add_argument("--config")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--rows", default="2,8", help="inclusive range of trainable rows")
    p.add_argument("--cols", default="2,8", help="inclusive range of columns")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="plain vs Farkas MLPs over several seeds")
    p.add_argument("--config")
    p.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    p.add_argument("--dataset", default="rings",
                   help="rings | clusters | csv:<path> | idx:<images>,<labels>")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--init", default="default_uniform")
    p.add_argument("--agg", choices=("sum", "mean"), default="sum")
    p.add_argument("--variants", default="plain,farkas")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (one seed each)")

    p = sub.add_parser("verify", help="audit every layer of a weights file")
    p.add_argument("weights")

    p = sub.add_parser("train", help="train a network described by a config file")
    p.add_argument("config_file")
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        defaults = ff.load_config(cfg_path)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            raise FormatError(f"{cfg_path}: unknown keys {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _out_dir(args):
    out = args.out or os.environ.get(OUT_ENV) or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _echo(args, out):
    resolved = {k: v for k, v in vars(args).items() if k not in _META_KEYS}
    ff.save_config(resolved, os.path.join(out, f"{args.command}.config"))


def _margins_ok(report):
    # weak duality: the LP optimum can never fall below the constructed margin
    return all(p >= g - 1e-6 for _, g, p in report.margins)


def cmd_toy2d(args, out):
    cfg = Toy2dConfig(seed=args.seed, epochs=args.epochs, learning_rate=args.lr,
                      momentum=args.momentum, weight_decay=args.weight_decay,
                      batch_size=args.batch_size, agg=args.agg, std=args.std,
                      swap_labels=args.swap_labels)
    plain, farkas = run_toy2d(cfg)
    ff.write_report_csv(plain, os.path.join(out, "toy2d_plain.csv"))
    ff.write_report_csv(farkas, os.path.join(out, "toy2d_farkas.csv"))
    ff.write_json({"seed": args.seed, "plain": plain.summary(), "farkas": farkas.summary()},
                  os.path.join(out, "toy2d_summary.json"))
    print(f"plain accuracy {plain.final_accuracy:.3f}  farkas accuracy {farkas.final_accuracy:.3f}")
    return 0 if _margins_ok(farkas) and not farkas.diverged else 1


def cmd_born_dead(args, out):
    init = InitScheme(args.init, sigma=args.sigma)
    table = run_born_dead(_int_list(args.depths), args.width, args.trials, init, args.seed,
                          n_probe=args.probes, agg=args.agg)
    cols = ["depth", "width", "trials", "plain_fraction", "farkas_fraction", "premise_p"]
    with open(os.path.join(out, "born_dead.csv"), "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(repr(row[c]) for c in cols) + "\n")
    ff.write_json({"seed": args.seed, "rows": table}, os.path.join(out, "born_dead.json"))
    for row in table:
        print(f"depth {row['depth']:>3}: plain {row['plain_fraction']:.3f}  "
              f"farkas {row['farkas_fraction']:.3f}")
    return 0 if all(r["farkas_fraction"] == 0 for r in table) else 1


def cmd_norm_check(args, out):
    rows, cols = _int_list(args.rows), _int_list(args.cols)
    res = run_norm_stability(args.trials, (tuple(rows), tuple(cols)), args.seed)
    ff.write_json(res, os.path.join(out, "norm_check.json"))
    print(json.dumps(res))
    return 0 if res["mean_satisfied"] == res["trials"] else 1


def _compare_one(cfg):
    return run_small_compare(cfg)


def cmd_compare(args, out):
    cfg = CompareConfig(seeds=tuple(_int_list(args.seeds)), dataset=args.dataset,
                        n_per_class=args.n_per_class, depth=args.depth, width=args.width,
                        epochs=args.epochs, learning_rate=args.lr, momentum=args.momentum,
                        weight_decay=args.weight_decay, batch_size=args.batch_size,
                        init=args.init, agg=args.agg, variants=tuple(_str_list(args.variants)),
                        standardize=args.standardize)
    if args.jobs > 1:
        parts = [dataclasses.replace(cfg, seeds=(s,)) for s in cfg.seeds]
        with ProcessPoolExecutor(args.jobs) as pool:
            pieces = list(pool.map(_compare_one, parts))
        results = {v: [r for piece in pieces for r in piece[v]] for v in cfg.variants}
    else:
        results = run_small_compare(cfg)
    summary = {"seeds": list(cfg.seeds), "variants": {}}
    for v, reports in results.items():
        for rep in reports:
            ff.write_report_csv(rep, os.path.join(out, f"compare_{v}_seed{rep.seed}.csv"))
        summary["variants"][v] = [rep.summary() for rep in reports]
    if "plain" in results and "farkas" in results:
        wins = sum(f.final_test_err < p.final_test_err
                   for p, f in zip(results["plain"], results["farkas"]))
        summary["farkas_wins_over_plain"] = wins
        print(f"farkas lower test error than plain on {wins}/{len(cfg.seeds)} seeds")
    ff.write_json(summary, os.path.join(out, "compare_summary.json"))
    ok = all(_margins_ok(r) for v, reps in results.items() if v.startswith("farkas")
             for r in reps if not r.diverged)
    return 0 if ok else 1


def cmd_verify(args, out):
    net = ff.load_weights(args.weights)
    records = audit_network(net)
    ff.write_json({"weights": args.weights, "layers": records},
                  os.path.join(out, "verify_report.json"))
    for rec in records:
        print(json.dumps(ff._jsonable(rec), sort_keys=True))
    return 0 if all_certified(records) else 1


def cmd_train(args, out):
    cfg = ff.load_config(args.config_file)
    seed = int(cfg.get("seed", 0))
    sgd = SgdConfig(learning_rate=float(cfg.get("learning_rate", 0.01)),
                    momentum=float(cfg.get("momentum", 0.9)),
                    weight_decay=float(cfg.get("weight_decay", 5e-4)),
                    epochs=int(cfg.get("epochs", 100)),
                    lr_schedule=cfg.get("lr_schedule"),
                    batch_size=int(cfg.get("batch_size", 32)))
    data_cfg = CompareConfig(dataset=cfg.get("dataset", "rings"),
                             n_per_class=int(cfg.get("n_per_class", 100)))
    train_ds, test_ds = compare_datasets(data_cfg, seed)
    if cfg.get("standardize", False):
        train_ds = train_ds.standardized()
        test_ds = test_ds.standardized(train_ds.mean, train_ds.std)
    if "network" in cfg and "layers" in cfg["network"]:
        spec = NetworkSpec.from_dict({**cfg["network"], "seed": seed})
    else:
        net_cfg = cfg.get("network", {})
        spec = mlp_spec(train_ds.n_features, net_cfg.get("hidden", [8, 8]),
                        max(train_ds.n_classes, test_ds.n_classes),
                        farkas=bool(net_cfg.get("farkas", True)), agg=net_cfg.get("agg", "sum"),
                        use_batchnorm=bool(net_cfg.get("batchnorm", False)),
                        init=InitScheme(net_cfg.get("init", "default_uniform")), seed=seed)
    net = build(spec)
    report = fit(net, train_ds, sgd, seed, test=test_ds, name="train")
    ff.write_report_csv(report, os.path.join(out, "train.csv"))
    ff.write_json(report.summary(), os.path.join(out, "train_summary.json"))
    ff.save_weights(net, os.path.join(out, "model.w"))
    resolved = dict(cfg)
    resolved.update(seed=seed, epochs=sgd.epochs, learning_rate=sgd.learning_rate,
                    momentum=sgd.momentum, weight_decay=sgd.weight_decay,
                    batch_size=sgd.batch_size, lr_schedule=[list(x) for x in sgd.lr_schedule],
                    network=spec.to_dict())
    resolved["network"].pop("seed", None)
    ff.save_config(resolved, os.path.join(out, "train.config"))
    print(f"final train error {report.final_train_err:.4f}  test error {report.final_test_err:.4f}")
    return 0 if _margins_ok(report) else 1


COMMANDS = {"toy2d": cmd_toy2d, "born-dead": cmd_born_dead, "norm-check": cmd_norm_check,
            "compare": cmd_compare, "verify": cmd_verify, "train": cmd_train}


def main(argv=None):
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    except (FarkasError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        out = _out_dir(args)
        if args.command not in ("verify", "train"):
            _echo(args, out)
        return COMMANDS[args.command](args, out)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FarkasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
