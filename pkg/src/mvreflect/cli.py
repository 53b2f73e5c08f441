"""Command line entry point.

    mvreflect <experiment> [action] [--config FILE] [--seed S] [--out DIR]

Experiments: ``simulate``, ``picard``, ``chaos``, ``geometry validate`` and
``ldp rate | rare-event | check-ldp1 | check-ldp2 | check-limit-law``.
The exit status is 0 when every invariant of the run holds, 1 when one fails,
and the code of :class:`~mvreflect.harness.HarnessError` on errors.
"""
from __future__ import annotations

import argparse
import sys

from .harness import EXPERIMENTS, ExperimentConfig, HarnessError, emit_plot_data, run_experiment

_GROUPS = {
    "geometry": ("validate",),
    "ldp": ("rate", "rare-event", "check-ldp1", "check-ldp2", "check-limit-law"),
}
_PLOTS = {"chaos": "chaos", "simulate": "paths"}


def _resolve(experiment, action):
    if experiment in _GROUPS:
        if action not in _GROUPS[experiment]:
            choices = " | ".join(_GROUPS[experiment])
            raise HarnessError("E_UNKNOWN_EXPERIMENT", f"'{experiment}' needs an action: {choices}")
        return f"{experiment}-{action}"
    if action is not None:
        raise HarnessError("E_UNKNOWN_EXPERIMENT", f"'{experiment}' takes no action, got {action!r}")
    if experiment not in EXPERIMENTS:
        raise HarnessError("E_UNKNOWN_EXPERIMENT", f"unknown experiment {experiment!r}")
    return experiment


def build_parser():
    p = argparse.ArgumentParser(prog="mvreflect", description=__doc__.split("\n\n")[0])
    p.add_argument("experiment", help="simulate | picard | chaos | geometry | ldp")
    p.add_argument("action", nargs="?", help="sub-command for geometry and ldp")
    p.add_argument("--config", help="TOML experiment config (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        experiment = _resolve(args.experiment, args.action)
        base = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig.from_dict({}, validate=False)
        cfg = base.with_overrides(experiment=experiment, seed=args.seed, output_dir=args.out)
        run = run_experiment(cfg)
        kind = _PLOTS.get(experiment, "ldp" if experiment.startswith("ldp-") and experiment != "ldp-rate" else None)
        if kind:
            emit_plot_data(run, kind)
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if not args.quiet:
        for line in run.summary:
            print(line)
        for name, ok in run.invariants.items():
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        print(f"wrote {len(run.files) + 1} files to {run.out_dir}")
    return run.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
