#!/usr/bin/env python3
"""Produce the golden artifact set consumed by the figure frontend.

One reduced-preset run per figure recipe, written under
frontend/goldens/<recipe>/.  figS4 compares two lattice spacings, so it
gets one run per spacing in named subdirectories.
"""
import argparse
import dataclasses
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from dualarrays import experiments as ex  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parents[1]


def _cfg(kind, preset="ci", **overrides):
    cfg = ex.preset(kind, preset)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


RECIPE_RUNS = {
    "fig1a": [("", _cfg("spectrum-infinite"))],
    "fig1c": [("", _cfg("spectrum-finite"))],
    "fig2bc": [("", _cfg("g2"))],
    "fig3": [("", _cfg("delay-scan"))],
    "fig4": [("", _cfg("momentum-density"))],
    "figS1": [("", _cfg("shift-vs-L"))],
    "figS3": [("", _cfg("paraxial-check"))],
    "figS4": [
        ("spacing-0.6", _cfg("spectrum-infinite", waist=1.5, spacing=0.6,
                             delta_min=-1.0, delta_max=1.0, n_delta=81,
                             n_k=21)),
        ("spacing-0.8", _cfg("spectrum-infinite", waist=1.5, spacing=0.8,
                             delta_min=-1.0, delta_max=1.0, n_delta=81,
                             n_k=21)),
    ],
    "figS5": [("", _cfg("modes-fit"))],
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=pathlib.Path,
                    default=ROOT / "frontend" / "goldens")
    ap.add_argument("--only", choices=sorted(RECIPE_RUNS), action="append",
                    help="limit to one or more recipes")
    args = ap.parse_args(argv)

    recipes = args.only or sorted(RECIPE_RUNS)
    for recipe in recipes:
        for sub, cfg in RECIPE_RUNS[recipe]:
            out_dir = args.out / recipe / sub if sub else args.out / recipe
            result = ex.run_experiment(cfg)
            for path in ex.write_run(result, out_dir):
                print(path.relative_to(ROOT) if path.is_relative_to(ROOT)
                      else path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
