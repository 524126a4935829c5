"""Command-line entry point: one subcommand per experiment family.

A plain-text config file of ``key = value`` lines may pre-fill any field;
command-line flags override file values. Exit status is 0 on success and 2
on validation or runtime errors, which are reported as one structured line
on stderr.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import ALL_METHODS, RunConfig, run


def _parse_scalar(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config_file(path) -> dict:
    """key = value lines; '#' starts a comment; commas make a list."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            val = val.strip()
            if "," in val:
                values[key] = [_parse_scalar(v) for v in val.split(",") if v.strip()]
            else:
                values[key] = _parse_scalar(val)
    return values


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--alpha", type=float, help="target miscoverage level")
    p.add_argument("--replications", type=int, help="number of replications")
    p.add_argument("--out-dir", dest="out_dir", help="output root directory")
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--workers", type=int, help="replication worker processes")


def _add_synth(p: argparse.ArgumentParser):
    p.add_argument("--n-tr", dest="n_tr", type=int, help="training draws")
    p.add_argument("--n-cal", dest="n_cal", type=int, help="calibration draws")
    p.add_argument("--n-test", dest="n_test", type=int, help="test draws")
    p.add_argument("--methods", help=f"comma list from {','.join(ALL_METHODS)}")
    p.add_argument("--z-strategy", dest="z_strategy",
                   choices=("fixed", "grid", "amortized"))
    p.add_argument("--fixed-z", dest="fixed_z", type=float,
                   help="starting point when --z-strategy=fixed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pitcal",
        description="PIT-space calibrated prediction intervals: benchmarks "
                    "and experiment runners.")
    sub = parser.add_subparsers(dest="experiment", required=True)

    p = sub.add_parser("pit-bench", help="PIT-space benchmark on Beta draws")
    _add_common(p)
    p.add_argument("--n-cal", dest="n_cal", type=int)
    p.add_argument("--z-values", dest="z_values",
                   help="comma list of starting points")
    p.add_argument("--beta-a", dest="beta_a", type=float)
    p.add_argument("--beta-b", dest="beta_b", type=float)

    p = sub.add_parser("simulate", help="synthetic generator benchmark")
    _add_common(p)
    _add_synth(p)

    p = sub.add_parser("shift", help="location-shift robustness study")
    _add_common(p)
    _add_synth(p)
    p.add_argument("--deltas", help="comma list of shift sizes")

    p = sub.add_parser("real", help="CSV pipeline with PC1-group metrics")
    _add_common(p)
    p.add_argument("--csv-path", dest="csv_path", help="input CSV file")
    p.add_argument("--response-column", dest="response_column",
                   help="name of the response column")
    p.add_argument("--partitions", type=int, help="number of random splits")
    p.add_argument("--methods", help=f"comma list from {','.join(ALL_METHODS)}")
    p.add_argument("--z-strategy", dest="z_strategy",
                   choices=("fixed", "grid", "amortized"))
    p.add_argument("--fixed-z", dest="fixed_z", type=float)

    return parser


_LIST_FIELDS = {"methods", "z_values", "deltas"}
_DEFAULTS = {
    "pit-bench": {"n_cal": 200, "replications": 5000},
    "simulate": {"replications": 50},
    "shift": {"replications": 50, "methods": ("cpi", "dcp")},
    "real": {},
}


def build_config(args: argparse.Namespace) -> RunConfig:
    values = dict(_DEFAULTS[args.experiment])
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("config", "experiment") or val is None:
            continue
        values[key] = val
    for key in _LIST_FIELDS & set(values):
        v = values[key]
        if isinstance(v, str):
            v = [_parse_scalar(t) for t in v.split(",") if t.strip()]
        elif not isinstance(v, (list, tuple)):
            v = [v]
        values[key] = tuple(v)
    allowed = set(RunConfig.__dataclass_fields__) - {"experiment"}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return RunConfig(experiment=args.experiment, **values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        out = run(cfg)
    except (ValueError, OSError) as exc:
        print(f"pitcal: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
