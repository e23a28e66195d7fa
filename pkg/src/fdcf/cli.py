"""Command-line entry point.

Subcommands: nmse-sweep, se-sweep, service-map, single-run. A YAML config can
be given with --config; every SystemConfig field also has its own override
flag (--num-aps, --pilot-len, ...), applied on top of the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .config import SystemConfig
from .harness import (
    PILOT_STRATEGIES,
    Scheme,
    nmse_sweep,
    record_row,
    run_trial,
    se_sweep,
    service_map,
    SE_HEADER,
)

_NONEABLE = {"training_symbols", "assoc_threshold"}


def _field_flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(SystemConfig):
        kind = {int: int, float: float}.get(f.type if isinstance(f.type, type) else None)
        if kind is None:
            kind = float if "float" in str(f.type) else int
        parser.add_argument(_field_flag(f.name), dest=f"cfg_{f.name}", default=None,
                            type=str, metavar=kind.__name__.upper(),
                            help=f"override config field {f.name}")
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="alias for --rng-seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def _parse_override(name: str, raw: str):
    if name in _NONEABLE and raw.lower() in ("none", "null", ""):
        return None
    f = {f.name: f for f in dataclasses.fields(SystemConfig)}[name]
    text = str(f.type)
    if "int" in text and "float" not in text:
        return int(raw)
    return float(raw)


def _build_config(args) -> SystemConfig:
    cfg = SystemConfig.from_yaml(args.config) if args.config else SystemConfig()
    overrides = {}
    for f in dataclasses.fields(SystemConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = _parse_override(f.name, raw)
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg.validate()


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fdcf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_nmse = sub.add_parser("nmse-sweep", help="channel-estimation quality vs UE count")
    p_nmse.add_argument("--ue-counts", type=_int_list, default=[4, 8, 12, 16, 20])
    p_nmse.add_argument("--taus", type=_int_list, default=[2, 8])
    p_nmse.add_argument("--schemes", default=",".join(PILOT_STRATEGIES),
                        help="comma-separated pilot strategies")
    p_nmse.add_argument("--trials", type=int, default=200)
    p_nmse.add_argument("--out", required=True)
    _add_config_flags(p_nmse)

    p_se = sub.add_parser("se-sweep", help="optimized spectral efficiency vs UE count")
    p_se.add_argument("--ue-counts", type=_int_list, default=[4, 10, 16, 20])
    p_se.add_argument("--schemes",
                      default="heap_fd+zf_rd,heap_fd+zf_nrd,rand_fd+zf_rd,heap_hd+zf_rd")
    p_se.add_argument("--trials", type=int, default=50)
    p_se.add_argument("--out", required=True)
    _add_config_flags(p_se)

    p_map = sub.add_parser("service-map", help="AP/DL-UE service map from one run")
    p_map.add_argument("--trial", type=int, default=0)
    p_map.add_argument("--scheme", default="heap_fd+zf_rd")
    p_map.add_argument("--out", required=True)
    _add_config_flags(p_map)

    p_one = sub.add_parser("single-run", help="one trial of one scheme, verbose record")
    p_one.add_argument("--scheme", default="heap_fd+zf_rd")
    p_one.add_argument("--trial", type=int, default=0)
    p_one.add_argument("--out", default=None, help="optional one-row CSV")
    _add_config_flags(p_one)

    args = parser.parse_args(argv)
    cfg = _build_config(args)

    if args.command == "nmse-sweep":
        strategies = [s.strip() for s in args.schemes.split(",") if s.strip()]
        rows = nmse_sweep(cfg, args.ue_counts, args.taus, strategies, args.trials,
                          out_path=args.out, jobs=args.jobs)
        print(f"wrote {len(rows)} rows to {args.out}")
    elif args.command == "se-sweep":
        schemes = [Scheme.parse(s) for s in args.schemes.split(",") if s.strip()]
        records = se_sweep(cfg, args.ue_counts, schemes, args.trials,
                           out_path=args.out, jobs=args.jobs)
        bad = sum(1 for r in records if not r.feasible)
        print(f"wrote {len(records)} rows to {args.out} ({bad} infeasible)")
    elif args.command == "service-map":
        rows = service_map(cfg, trial=args.trial, out_path=args.out,
                           scheme=Scheme.parse(args.scheme))
        print(f"wrote {len(rows)} rows to {args.out}")
    elif args.command == "single-run":
        record = run_trial(cfg, Scheme.parse(args.scheme), args.trial)
        for name, value in zip(SE_HEADER, record_row(record)):
            print(f"{name}: {value}")
        if record.nmse_per_ue is not None:
            print("nmse_per_ue_db:", " ".join(
                format(10 * np.log10(v), ".3f") for v in record.nmse_per_ue))
        if args.out:
            from .harness import _write_csv

            _write_csv(args.out, f"# config_hash={cfg.config_hash()} kind=single_run",
                       SE_HEADER, [record_row(record)])
            print(f"wrote record to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
