#!/usr/bin/env python3
"""Run every experiment kind at one preset scale.

`--preset ci` (default) finishes in well under a minute; `--preset
full` reproduces the full-resolution datasets and can take hours for
the two-excitation 9x9 kinds (g2, momentum-density).
"""
import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from dualarrays import experiments as ex  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", choices=("ci", "full"), default="ci")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("runs"))
    args = ap.parse_args(argv)

    for kind in ex.KINDS:
        cfg = ex.preset(kind, args.preset)
        t0 = time.perf_counter()
        result = ex.run_experiment(cfg)
        paths = ex.write_run(result, args.out / f"{kind}-{args.preset}")
        print(f"{kind}: {len(paths)} files, "
              f"{time.perf_counter() - t0:.1f} s -> {paths[0].parent}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
