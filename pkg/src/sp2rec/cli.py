"""Command-line front end: run, ablate-clusters, privacy-sweep, prepare-data, print-config."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import zipfile
from pathlib import Path

from . import experiment as E
from .config import ExperimentConfig
from .core import ContractError
from .ingest import MOVIELENS, RatingsFormatError, load_ratings, save_csv, synthetic_ratings

log = logging.getLogger("sp2rec")

ML100K_MD5 = "6e47046882bad158b0efbb84cd5cb987"


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "threads": args.threads,
        "clamp_predictions": True if args.clamp_predictions else None,
    }
    cfg = cfg.with_overrides(**overrides)
    if getattr(args, "methods", None):
        cfg = cfg.with_overrides(methods={"run": args.methods.split(",")})
    return cfg


def _preflight(cfg: ExperimentConfig, extra: list | None = None):
    """Validate everything static, load the dataset, then validate against its shape."""
    problems = cfg.validate() + list(extra or [])
    if any(p.startswith("dataset not found") for p in problems):
        return None, problems
    try:
        dataset = E.load_dataset(cfg)
    except (OSError, RatingsFormatError, ContractError) as exc:
        return None, problems + [f"dataset: {exc}"]
    problems = cfg.validate(dataset.n_users, dataset.n_items, len(dataset)) + list(extra or [])
    return dataset, problems


def _fail(problems) -> int:
    print("configuration invalid:", file=sys.stderr)
    for p in problems:
        print(f"  - {p}", file=sys.stderr)
    return 2


def _print_summary(reports) -> None:
    width = max((len(r.method) for r in reports), default=6)
    for r in reports:
        line = f"{r.method:<{width}}  {r.hypothesis:<2}  {r.setting:<14}  RMSE {r.rmse_mean:.4f} ± {r.rmse_std:.4f}  NDCG@10 {r.ndcg_mean:.4f} ± {r.ndcg_std:.4f}"
        if r.errors:
            line += f"  [{len(r.errors)} failed folds]"
        print(line)


def cmd_run(args) -> int:
    cfg = _config(args)
    dataset, problems = _preflight(cfg)
    if problems:
        return _fail(problems)
    result = E.run_experiment(cfg, dataset)
    E.write_run(cfg.out_dir, cfg, dataset, result)
    _print_summary(result.reports)
    print(f"wrote {cfg.out_dir}")
    return 1 if any(not r.ok for r in result.rows) else 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.ratios:
        cfg = cfg.with_overrides(sweep={"ratios": [float(x) for x in args.ratios.split(",")]})
    dataset, problems = _preflight(cfg)
    if problems:
        return _fail(problems)
    result = E.privacy_sweep(cfg, dataset)
    E.write_sweep(cfg.out_dir, cfg, dataset, result)
    _print_summary(result.reports)
    print(f"wrote {cfg.out_dir}")
    return 1 if any(not r.ok for r in result.rows) else 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if args.K:
        cfg = cfg.with_overrides(ablation={"K": [int(x) for x in args.K.split(",")]})
    dataset, problems = _preflight(cfg)
    if dataset is not None:
        problems += [f"ablation K={K} exceeds n_items={dataset.n_items}" for K in cfg.raw["ablation"]["K"] if int(K) > dataset.n_items]
    if problems:
        return _fail(problems)
    rows = E.ablate_clusters(cfg, dataset)
    E.write_ablation(cfg.out_dir, cfg, dataset, rows)
    for r in E.ablation_table(rows):
        print(f"K={r['K']:<5} {r['method']:<12} RMSE {r['rmse_mean']:.4f}  aux {r['aux_bytes_formula']} bytes")
    print(f"wrote {cfg.out_dir}")
    return 0


def _read_source(source: Path) -> tuple[bytes, str]:
    if source.suffix == ".zip":
        with zipfile.ZipFile(source) as zf:
            names = [n for n in zf.namelist() if n.endswith("u.data") or n.endswith(".inter")]
            if not names:
                raise RatingsFormatError(f"{source}: no u.data or .inter member")
            member = sorted(names, key=len)[0]
            return zf.read(member), member
    return source.read_bytes(), source.name


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        ds = synthetic_ratings(args.users, args.items, args.ratings, seed=args.seed or 0)
        save_csv(ds, out)
        print(f"wrote {len(ds)} synthetic ratings ({ds.n_users} users, {ds.n_items} items) to {out}")
        return 0
    if not args.source:
        print("prepare-data needs --source or --synthetic", file=sys.stderr)
        return 2
    try:
        data, member = _read_source(Path(args.source))
    except (OSError, zipfile.BadZipFile, RatingsFormatError) as exc:
        print(f"cannot read source: {exc}", file=sys.stderr)
        return 2
    if member.endswith(".inter"):
        # same rows as u.data under a typed header line
        data = data.split(b"\n", 1)[1]
    tmp = out.with_suffix(".tmp")
    tmp.write_bytes(data)
    try:
        ds = load_ratings(tmp, MOVIELENS)
    except (RatingsFormatError, ContractError) as exc:
        print(f"{member}: {exc}", file=sys.stderr)
        return 2
    finally:
        tmp.unlink()
    out.write_bytes(data)
    digest = hashlib.md5(out.read_bytes()).hexdigest()
    known = " (MovieLens-100K reference checksum)" if digest == ML100K_MD5 else ""
    print(f"wrote {len(ds)} ratings ({ds.n_users} users, {ds.n_items} items) to {out}; md5 {digest}{known}")
    return 0


def cmd_print_config(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    sys.stdout.write(cfg.dumps())
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment file; unset keys take the defaults")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes across folds")
    p.add_argument("--clamp-predictions", action="store_true", help="clip predictions to the rating scale")
    p.add_argument("--methods", help="comma-separated method list overriding the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sp2rec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="cross-validated run of the configured methods and privacy settings")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate-clusters", help="RMSE and aux size over a list of cluster counts")
    _common(p)
    p.add_argument("--K", help="comma-separated cluster counts")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("privacy-sweep", help="methods across target mean privacy ratios")
    _common(p)
    p.add_argument("--ratios", help="comma-separated mean ratios in [0, 1]")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("prepare-data", help="extract MovieLens-100K or write a synthetic CSV dataset")
    p.add_argument("--source", help="ml-100k.zip, u.data or a .inter file")
    p.add_argument("--out", default="data/ml-100k/u.data")
    p.add_argument("--synthetic", action="store_true", help="generate a retail-style CSV instead")
    p.add_argument("--users", type=int, default=1500)
    p.add_argument("--items", type=int, default=800)
    p.add_argument("--ratings", type=int, default=30000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("print-config", help="print the effective configuration as TOML")
    p.add_argument("--config")
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except E.PrivacyViolation as exc:
        print(f"privacy violation: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
