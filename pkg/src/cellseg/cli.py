"""Command-line interface: segment, eval, contours, synth."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import contours as contours_mod
from . import evaluate, pipeline, synth
from .data import load_molecules
from .errors import AlignmentError, CellsegError

log = logging.getLogger("cellseg")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellseg",
        description="Cell segmentation of transcriptomics point clouds "
                    "by signed-graph partitioning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_seg = sub.add_parser("segment", help="segment a molecule table into cells")
    p_seg.add_argument("--input", required=True, help="delimited molecule table")
    p_seg.add_argument("--r-cell", type=float, required=True,
                       help="rough cell radius in micrometers")
    p_seg.add_argument("--k", type=int, default=None,
                       help="feature neighbor count (default: expected-per-cell / 3)")
    p_seg.add_argument("--expected-per-cell", type=float, default=None,
                       help="expected molecules per cell, used when --k is unset")
    p_seg.add_argument("--n-min", type=int, default=30,
                       help="minimum molecules per kept cell (default 30)")
    p_seg.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p_seg.add_argument("--config", default=None, help="key = value config file")
    p_seg.add_argument("--out-dir", default=".", help="output directory")
    p_seg.add_argument("--no-prefilter", action="store_true",
                       help="skip the extracellular prefilter")
    p_seg.add_argument("--gaussian-features", type=float, default=None, metavar="SIGMA",
                       help="Gaussian-weighted feature counting with this bandwidth")
    p_seg.add_argument("--delimiter", default=None, help="input delimiter override")
    p_seg.add_argument("--x-column", default="x")
    p_seg.add_argument("--y-column", default="y")
    p_seg.add_argument("--z-column", default=None)
    p_seg.add_argument("--gene-column", default="gene")

    p_eval = sub.add_parser("eval", help="compare two assignment files")
    p_eval.add_argument("--a", required=True, help="first assignment file")
    p_eval.add_argument("--b", required=True, help="second assignment file")
    p_eval.add_argument("--out", required=True, help="output directory")

    p_con = sub.add_parser("contours", help="export cell outline polygons")
    p_con.add_argument("--assignments", required=True, help="assignment file")
    p_con.add_argument("--bin-size", type=float, required=True,
                       help="grid bin size in micrometers")
    p_con.add_argument("--sigma", type=float, required=True,
                       help="Gaussian smoothing bandwidth in micrometers")
    p_con.add_argument("--out", required=True, help="output GeoJSON path")

    p_syn = sub.add_parser("synth", help="generate a synthetic benchmark")
    p_syn.add_argument("--cells", type=int, required=True)
    p_syn.add_argument("--per-cell", type=int, required=True,
                       help="molecules per cell")
    p_syn.add_argument("--types", type=int, required=True, help="number of cell types")
    p_syn.add_argument("--r-cell", type=float, required=True)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--noise", type=float, default=0.0,
                       help="fraction of molecules scattered as noise")
    p_syn.add_argument("--genes", type=int, default=32, help="gene panel size")
    p_syn.add_argument("--out-dir", default=".", help="output directory")
    return parser


def _run_segment(args) -> int:
    overrides = {}
    if args.config:
        overrides.update(pipeline.read_config_file(args.config))
    overrides["r_cell"] = args.r_cell
    overrides["seed"] = args.seed
    overrides["n_min"] = args.n_min
    if args.k is not None:
        overrides["k"] = args.k
    if args.expected_per_cell is not None:
        overrides["expected_per_cell"] = args.expected_per_cell
    if args.no_prefilter:
        overrides["prefilter_enabled"] = False
    if args.gaussian_features is not None:
        overrides["gaussian_bandwidth"] = args.gaussian_features
    config = pipeline.PipelineConfig(**overrides)

    column_map = {"x": args.x_column, "y": args.y_column, "gene": args.gene_column}
    if args.z_column:
        column_map["z"] = args.z_column
    table = load_molecules(args.input, column_map=column_map, delimiter=args.delimiter)
    log.info("loaded %d molecules, %d genes", len(table), table.panel.size)

    seg, report = pipeline.segment(table, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_assignments(out / "assignments.csv", table, seg)
    pipeline.write_report(out / "report.json", report)
    log.info("found %d cells; assigned fraction %.3f",
             report["cells"], report["assigned_fraction"])
    return 0


def _run_eval(args) -> int:
    seg_a, _ = pipeline.segmentation_from_file(args.a)
    seg_b, _ = pipeline.segmentation_from_file(args.b)
    if seg_a.n != seg_b.n:
        raise AlignmentError(
            f"files cover different molecule id spaces ({seg_a.n} vs {seg_b.n})"
        )
    match = evaluate.match_cells(seg_a, seg_b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluate.write_match_json(out / "match.json", match)
    evaluate.write_match_pairs(out / "matched_pairs.csv", match)
    evaluate.write_dice_histogram(out / "dice_histogram.csv", match)
    median = match.median_dice
    print(f"median_dice {median if median is not None else 'null'}")
    return 0


def _run_contours(args) -> int:
    seg, positions = pipeline.segmentation_from_file(args.assignments)
    polys = contours_mod.contour_cells(seg, positions, args.bin_size, args.sigma)
    contours_mod.export_geojson(polys, args.out)
    log.info("wrote %d contours to %s", len(polys), args.out)
    return 0


def _run_synth(args) -> int:
    table, truth = synth.generate(
        n_cells=args.cells,
        per_cell=args.per_cell,
        n_types=args.types,
        r_cell=args.r_cell,
        seed=args.seed,
        noise_fraction=args.noise,
        n_genes=args.genes,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    synth.write_molecules(out / "molecules.csv", table)
    pipeline.write_assignments(out / "truth.csv", table, truth)
    log.info("wrote %d molecules, %d ground-truth cells", len(table), truth.n_cells)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "segment": _run_segment,
        "eval": _run_eval,
        "contours": _run_contours,
        "synth": _run_synth,
    }
    try:
        return handlers[args.command](args)
    except CellsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
