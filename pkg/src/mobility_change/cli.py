"""Command-line front end.

Exit codes: 0 success, 1 usage or parameter error, 2 data error,
3 numerical failure.
"""

import argparse
import logging
import sys

import numpy as np

from . import pipeline
from .exceptions import DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("mobility_change")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="TOML configuration file")
    g.add_argument("--fixture", action="store_true", help="start from the bundled synthetic configuration")
    g.add_argument("--out-dir", dest="out_dir", help="artifact directory (default: out)")
    g.add_argument("--seed", type=int)
    g.add_argument("--k", type=int, dest="k", help="number of clusters")
    g.add_argument("--K", type=int, dest="K", help="number of SVD components")
    g.add_argument("--window-radius", type=int, dest="window_radius")
    g.add_argument("--outlier-std", type=float, dest="outlier_std")
    g.add_argument("--permutations", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--standardization", choices=("row", "binary"))
    g.add_argument("--inference", choices=("normality", "randomization"))
    g.add_argument("--max-gap", type=int, dest="max_gap", help="longest missing run repaired by interpolation")
    g.add_argument("--n-init", type=int, dest="n_init", help="k-means restarts")
    g.add_argument("--max-iter", type=int, dest="max_iter", help="k-means iteration cap")
    g.add_argument("--linkage", choices=("single", "complete", "average", "ward"), help="also run hierarchical clustering")
    g.add_argument("--metric", choices=("euclidean", "manhattan", "cosine"))
    g.add_argument("--id-property", dest="id_property", help="GeoJSON property holding the region id")
    g.add_argument("--snap", type=float, help="vertex snapping tolerance for contiguity")
    g.add_argument("--target-year", type=int, dest="target_year")
    g.add_argument("--reference-year", type=int, dest="reference_year")
    g.add_argument("--panel-target", dest="panel_target", help="daily panel CSV for the target year")
    g.add_argument("--panel-reference", dest="panel_reference", help="daily panel CSV for the reference year")
    g.add_argument("--geometry", help="GeoJSON FeatureCollection of region polygons")
    g.add_argument("--covariates", help="covariate CSV keyed by region_id")
    g.add_argument("-v", "--verbose", action="count", default=0)
    return p


HELP = {
    "synth": "write a synthetic study (panels, geometry, covariates, truth) to OUT/inputs",
    "ingest": "parse daily panels, repair short gaps, aggregate to regions",
    "tspp": "7-day centered rolling mean per region and year",
    "delta": "target minus reference rolling series",
    "decompose": "outlier pass and truncated SVD of the change matrix",
    "cluster": "k-means (and optional hierarchical) clustering of normalized loadings",
    "weights": "queen contiguity weights from region polygons",
    "moran": "global Moran's I per component",
    "lisa": "local Moran's I with conditional permutation p-values",
    "correlate": "Pearson correlation of loadings against covariates",
    "export": "join loadings, colors and clusters onto the region GeoJSON",
    "pipeline": "run every step in order",
}


def build_parser():
    parser = _Parser(prog="mobility-change", description="Year-over-year mobility change analysis.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    common = _common()
    for name in ("synth", *pipeline.STEPS, "pipeline"):
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def _overrides(args):
    keys = (
        "out_dir", "seed", "k", "K", "window_radius", "outlier_std", "permutations", "alpha",
        "standardization", "inference", "target_year", "reference_year",
        "panel_target", "panel_reference", "geometry", "covariates", "linkage", "metric",
        "max_gap", "n_init", "max_iter", "id_property", "snap",
    )  # fmt: skip
    out = {k: getattr(args, k, None) for k in keys}
    if args.command == "decompose" and out["K"] is None and out["k"] is not None:
        # decompose has no cluster count, so a lone --k names the component count
        out["K"] = out["k"]
    return out


def run(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = pipeline.load_config(args.config, _overrides(args), fixture=args.fixture)
        if args.command == "pipeline":
            given = "panel_target" in cfg.inputs and "panel_reference" in cfg.inputs
            doc = pipeline.run_pipeline(cfg, with_synth=not given and (args.fixture or bool(cfg.synth)))
            print(f"pipeline: {len(doc['steps'])} steps, {len(doc['outputs'])} artifacts in {cfg.out_dir}")
        else:
            m = pipeline.run_step(args.command, cfg)
            for name in sorted(m["outputs"]):
                print(name)
    except pipeline.UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
