"""Command-line entry point: ``mskmeans <command> <mode> [flags]``."""
import argparse
import json
import math
import os
import sys

import numpy as np

from . import bench, hrf, metrics, synth
from .clustering import (
    KMeansConfig,
    MultistageConfig,
    build_parcellation,
    hierarchical_cluster,
    multistage_cluster,
    simple_kmeans,
)
from .core import TimeSeriesMatrix, make_rng
from .errors import InvalidInput, MskError
from .preprocess import PreprocessConfig, devectorize, preprocess, vectorize
from .volio import (
    LabelVolume,
    MaskVolume,
    VolumeGeometry,
    read_f4d,
    read_json,
    read_labels,
    read_mask,
    read_tree_json,
    write_centroids_csv,
    write_csv,
    write_f4d,
    write_labels,
    write_mask,
    write_report_json,
    write_tree_json,
)


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _grid(text):
    """``start:stop:step`` (inclusive) or a comma list."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return _float_list(text)


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _threads(text):
    if text == "auto":
        return text
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1 or 'auto'")
    return value


def _resolve_threads(value):
    return os.cpu_count() or 1 if value == "auto" else value


def _load_matrix(path, mask_path=None):
    volume = read_f4d(path)
    mask = read_mask(mask_path) if mask_path else MaskVolume.full(volume.geometry)
    return vectorize(volume, mask), volume, mask


def _labelled_matrix(data_path, labels_path):
    """Rows for every voxel with a non-zero label, and those labels."""
    volume = read_f4d(data_path)
    labels = read_labels(labels_path)
    mask = MaskVolume(labels.geometry, labels.labels > 0)
    x = vectorize(volume, mask)
    lab = labels.labels[x.index_map[:, 0], x.index_map[:, 1], x.index_map[:, 2]]
    labels.check_contiguous()
    return x, build_parcellation(x, lab)


def cmd_synth(args):
    if args.mode == "grid":
        if args.spec:
            spec = synth.GridSpec.from_dict(read_json(args.spec))
        else:
            spec = synth.GridSpec(phases=None if args.random_phases else synth.SEPARABLE_PHASES)
        if args.snr is not None:
            spec.snr = args.snr
        volume, truth, _ = synth.generate_grid(spec, args.seed)
        write_f4d(volume, args.out)
        if args.truth_out:
            write_labels(truth, args.truth_out)
        sidecar = {"kind": "grid", "seed": args.seed, "spec": spec.to_dict()}
    else:
        spec = synth.TaskSpec.from_dict(read_json(args.spec)) if args.spec else synth.TaskSpec()
        if args.noise is not None:
            spec.noise_sigma = args.noise
        nx, ny, nz = args.shape
        geom = VolumeGeometry(nx, ny, nz, spec.voxel_mm, spec.voxel_mm, spec.voxel_mm, spec.tr_s)
        if args.responding:
            responding = read_mask(args.responding)
        else:
            flags = np.zeros(geom.shape, dtype=bool)
            flags[nx // 4: nx - nx // 4, ny // 4: ny - ny // 4, :] = True
            responding = MaskVolume(geom, flags)
        volume, paradigm = synth.generate_task(spec, responding, args.seed)
        write_f4d(volume, args.out)
        if args.truth_out:
            write_mask(responding, args.truth_out)
        sidecar = {"kind": "task", "seed": args.seed, "spec": spec.to_dict(),
                   "onsets": spec.onsets, "paradigm": paradigm.tolist()}
    write_report_json(sidecar, args.spec_out or args.out + ".json")
    return sidecar


def cmd_preprocess(args):
    volume = read_f4d(args.input)
    cfg = PreprocessConfig(args.mask_threshold, args.smooth_fwhm, args.detrend_order,
                           args.global_regress, args.pcs)
    mask = read_mask(args.mask) if args.mask else None
    matrix, mask = preprocess(volume, cfg, mask)
    write_f4d(devectorize(matrix, dtype=np.float32), args.out)
    if args.mask_out:
        write_mask(mask, args.mask_out)
    return {"n_voxels": matrix.n, "t": matrix.t}


def cmd_cluster(args):
    x, _, _ = _load_matrix(args.input, args.mask)
    seed = args.seed
    report = {"algorithm": args.mode, "seed": seed, "n_voxels": x.n, "t": x.t}
    tree = None
    if args.mode == "multistage":
        cfg = MultistageConfig(args.ct, args.ns, args.max_iters, args.replicates, seed,
                               _resolve_threads(args.threads))
        parc = multistage_cluster(x, cfg)
        tree = parc.tree
        report.update(ct=args.ct, ns=args.ns, replicates=args.replicates, max_iters=args.max_iters)
    elif args.mode == "simple":
        if args.k is None:
            raise InvalidInput("--k is required for simple k-means")
        parc = simple_kmeans(x, args.k, KMeansConfig(args.k, args.max_iters, args.replicates, seed))
        report.update(replicates=args.replicates, max_iters=args.max_iters)
    else:
        if args.k is None:
            raise InvalidInput("--k is required for hierarchical clustering")
        parc = hierarchical_cluster(x, args.k).parcellation
    report.update(k=parc.k, distance_ops=parc.distance_ops)
    if args.truth:
        sim = metrics.compare_parcellations(parc.labels, read_labels(args.truth))
        back = metrics.compare_parcellations(read_labels(args.truth), parc.labels)
        report["vs_truth"] = {"msi": sim.msi, "mean_si": sim.mean_si,
                              "truth_mean_si": back.mean_si}
    if args.labels_out:
        write_labels(parc.labels, args.labels_out)
    if args.centroids_out:
        write_centroids_csv(parc.representatives, args.centroids_out)
    if args.tree_out:
        if tree is None:
            raise InvalidInput("--tree-out is only available for multistage clustering")
        write_tree_json(tree, args.tree_out)
    if args.report_out:
        write_report_json(report, args.report_out)
    return report


def cmd_metrics(args):
    if args.mode == "msi":
        rep = metrics.compare_parcellations(read_labels(args.a), read_labels(args.b))
        out = rep.to_dict()
        if args.out:
            write_report_json(out, args.out)
        return {"msi": rep.msi, "mean_si": rep.mean_si}
    if args.mode == "intra":
        x, parc = _labelled_matrix(args.data, args.labels)
        per, grand = metrics.intra_cluster_correlation(parc, x)
        if args.out:
            write_csv([[c + 1, v] for c, v in enumerate(per)], args.out, ["cluster", "mean_corr"])
        return {"grand_mean": grand, "k": parc.k}
    if args.mode == "overlap":
        rows = metrics.tissue_overlap(read_labels(args.labels), read_mask(args.gm), read_mask(args.wm))
        if args.out:
            write_csv([[r.label, r.gm_frac, r.wm_frac, r.size] for r in rows], args.out,
                      ["cluster", "gm_frac", "wm_frac", "size"])
        return {"clusters": len(rows)}
    geom = VolumeGeometry(*args.shape)
    values = metrics.random_baseline(geom, args.k, args.trials, make_rng(args.seed, 6))
    out = {"seed": args.seed, "k": args.k, "trials": args.trials, "shape": list(args.shape),
           "mean_msi": float(values.mean()), "std_msi": float(values.std(ddof=1)) if args.trials > 1 else 0.0,
           "msi": values.tolist()}
    if args.out:
        write_report_json(out, args.out)
    return {"mean_msi": out["mean_msi"]}


def _paradigm(args, t_points):
    """Onsets and boxcar from a comma list or a JSON file with ``onsets``/``paradigm``."""
    if os.path.exists(args.onsets):
        doc = read_json(args.onsets)
        onsets = doc.get("onsets")
        paradigm = np.asarray(doc["paradigm"], dtype=float) if "paradigm" in doc else None
        if onsets is None and paradigm is not None:
            rising = np.flatnonzero(np.diff(np.concatenate([[0.0], paradigm])) > 0)
            onsets = rising.tolist()
    else:
        onsets = _int_list(args.onsets)
        paradigm = None
    if paradigm is None:
        paradigm = np.zeros(t_points)
        for o in onsets:
            paradigm[o:o + args.on_trs] = 1.0
    return onsets, paradigm


def cmd_hrf(args):
    x, parc = _labelled_matrix(args.data, args.labels)
    onsets, paradigm = _paradigm(args, x.t)
    if args.mode == "fit":
        design = hrf.fir_design(x.t, onsets, args.lags, args.intercept)
        fits = hrf.fit_clusters(parc.representatives, design, args.percent_change)
        rows = [[c + 1, lag, b] for c, f in enumerate(fits) for lag, b in enumerate(f.betas)]
        if args.out:
            write_csv(rows, args.out, ["cluster", "lag", "beta"])
        return {"clusters": len(fits), "lags": args.lags}
    tree = read_tree_json(args.tree) if args.tree else None
    report = hrf.rank_activation(parc, paradigm, args.secondary_threshold, tree)
    out = report.to_dict()
    if args.out:
        write_report_json(out, args.out)
    return {"primary": report.primary, "secondary": report.secondary,
            "anticorrelated": report.anticorrelated}


def cmd_bench(args):
    if args.mode == "predict":
        value = bench.predicted_ops(args.algo, args.n, args.k, args.replicates, args.max_iters, args.ns)
        print(value)
        return None
    if args.mode == "scaling":
        cfg = MultistageConfig(seed=args.seed, threads=_resolve_threads(args.threads))
        results, slopes, notes = bench.run_scaling_sweep(
            args.sizes, k=args.k, repeats=args.repeats, data=args.data, seed=args.seed,
            ms_cfg=cfg, t=args.t, n_latent=args.latent_groups, noise=args.noise)
        write_csv([r.row() for r in results], args.out,
                  ["algorithm", "n", "mean_seconds", "distance_ops"])
        summary = {"slopes": slopes, "notes": notes, "seed": args.seed, "data": args.data,
                   "latent_groups": args.latent_groups, "noise": args.noise,
                   "results": bench.result_dicts(results)}
        write_report_json(summary, args.summary_out or args.out + ".json")
        return {"slopes": slopes}
    if args.input:
        x, volume, mask = _load_matrix(args.input, args.mask)
    else:
        volume, truth, _ = synth.generate_grid(synth.GridSpec(snr=args.snr), args.seed)
        mask = MaskVolume.full(volume.geometry)
        x = vectorize(volume, mask)
    if args.mode == "table1":
        table = bench.run_hyperparameter_sweep(x, args.ct_grid, [int(v) for v in args.ns_grid], args.seed)
        header, rows = bench.sweep_table_rows(table, args.ct_grid, [int(v) for v in args.ns_grid])
        write_csv(rows, args.out, header)
        return {"cells": int(table.size)}
    reference = read_labels(args.truth) if args.truth else None
    rows, fits = bench.run_smoothing_sweep(volume, args.fwhm_grid,
                                           MultistageConfig(args.ct, args.ns, seed=args.seed),
                                           mask, reference)
    write_csv([[r.fwhm, r.mean_intra_corr, r.k, r.msi, r.mean_si] if reference else
               [r.fwhm, r.mean_intra_corr, r.k] for r in rows], args.out,
              ["fwhm", "mean_intra_corr", "k", "msi", "mean_si"] if reference else
              ["fwhm", "mean_intra_corr", "k"])
    write_report_json({"fits": {k: {"slope": v[0], "intercept": v[1], "r2": v[2]}
                                for k, v in fits.items()}}, args.out + ".json")
    return {"fits": fits}


_QUIET_REQUESTED = False


class _Help(argparse.HelpFormatter):
    """Append ``(default: X)`` unless the help text already names the default."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "(default" in text or action.default is argparse.SUPPRESS or not action.option_strings:
            return text
        if action.required:
            return (text + " (required)").strip()
        if action.default is None:
            return (text + " (default: none)").strip()
        if action.default is False:
            return text + " (default: off)"
        return text + " (default: %(default)s)"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1, as JSON on stderr under --quiet."""

    def error(self, message):
        if _QUIET_REQUESTED:
            sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
            sys.exit(1)
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS,
                        help="RNG seed, unsigned 64-bit (default: 0)")
    common.add_argument("--threads", type=_threads, default=argparse.SUPPRESS,
                        help="worker threads for clustering, n or 'auto' (default: auto)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="no progress output; errors as JSON on stderr (default: off)")

    parser = _Parser(
        prog="mskmeans", description="Multistage binary k-means parcellation of 4-D volumes.",
        formatter_class=_Help)
    parser.add_argument("--seed", type=_seed, default=0, help="RNG seed, unsigned 64-bit")
    parser.add_argument("--threads", type=_threads, default="auto", help="worker threads, n or 'auto'")
    parser.add_argument("--quiet", action="store_true", help="errors as JSON on stderr")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _Help

    def leaf(group, name, help_text):
        return group.add_parser(name, parents=[common], help=help_text, formatter_class=fmt)

    p = commands.add_parser("synth", help="generate synthetic data")
    modes = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    g = leaf(modes, "grid", "sinusoid region grid")
    g.add_argument("--snr", type=float, default=None, help="signal/noise std ratio; 'inf' for none (default: from --spec, else inf)")
    g.add_argument("--spec", default=None, help="GridSpec JSON")
    g.add_argument("--random-phases", action="store_true",
                   help="draw region phases from the seed instead of the fixed separable set; ignored when a spec file is given")
    g.add_argument("--out", required=True, help="output F4D volume")
    g.add_argument("--truth-out", default=None, help="ground-truth label F4D")
    g.add_argument("--spec-out", default=None, help="JSON sidecar (default: <out>.json)")
    t = leaf(modes, "task", "block-design task volume")
    t.add_argument("--spec", default=None, help="TaskSpec JSON")
    t.add_argument("--noise", type=float, default=None, help="noise sigma (default: from --spec, else 0)")
    t.add_argument("--shape", type=_int_list, default="8,8,1", help="nx,ny,nz")
    t.add_argument("--responding", default=None, help="mask F4D of responding voxels (default: central block)")
    t.add_argument("--out", required=True, help="output F4D volume")
    t.add_argument("--truth-out", default=None, help="responding mask F4D")
    t.add_argument("--spec-out", default=None, help="JSON sidecar with onsets and paradigm (default: <out>.json)")

    p = leaf(commands, "preprocess", "mask, smooth and regress a volume")
    p.add_argument("--in", dest="input", required=True, help="input F4D")
    p.add_argument("--mask", default=None, help="mask F4D (default: threshold the temporal mean)")
    p.add_argument("--mask-threshold", type=float, default=0.0, help="temporal-mean threshold")
    p.add_argument("--mask-out", default=None, help="write the mask used")
    p.add_argument("--smooth-fwhm", type=float, default=0.0, help="Gaussian FWHM in mm")
    p.add_argument("--detrend-order", type=int, default=1, help="Legendre drift order")
    p.add_argument("--global-regress", action=argparse.BooleanOptionalAction, default=True,
                   help="regress the global mean series")
    p.add_argument("--pcs", type=int, default=0, help="top temporal PCs to regress")
    p.add_argument("--out", required=True, help="output F4D (out-of-mask voxels zero)")

    p = commands.add_parser("cluster", help="parcellate a volume")
    modes = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode, help_text in (("multistage", "multistage binary k-means"),
                            ("simple", "k-means with a fixed --k"),
                            ("hier", "average-linkage hierarchical clustering cut at --k")):
        c = leaf(modes, mode, help_text)
        c.add_argument("--in", dest="input", required=True, help="input F4D")
        c.add_argument("--mask", default=None, help="mask F4D (default: every voxel)")
        c.add_argument("--ct", type=float, default=0.7, help="correlation threshold")
        c.add_argument("--ns", type=int, default=7, help="number of stages")
        c.add_argument("--k", type=int, default=None, help="cluster count (simple/hier)")
        c.add_argument("--replicates", type=int, default=5, help="k-means replicates")
        c.add_argument("--max-iters", type=int, default=100, help="k-means iteration cap")
        c.add_argument("--truth", default=None, help="reference labels to score against")
        c.add_argument("--labels-out", default=None, help="label F4D")
        c.add_argument("--centroids-out", default=None, help="representative series CSV")
        c.add_argument("--tree-out", default=None, help="hierarchy tree JSON (multistage)")
        c.add_argument("--report-out", default=None, help="run report JSON")

    p = commands.add_parser("metrics", help="evaluate parcellations")
    modes = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    m = leaf(modes, "msi", "similarity index between two label volumes")
    m.add_argument("--a", required=True, help="label F4D (clusters averaged over)")
    m.add_argument("--b", required=True, help="label F4D")
    m.add_argument("--out", default=None, help="report JSON")
    m = leaf(modes, "intra", "mean intra-cluster correlation")
    m.add_argument("--labels", required=True, help="label F4D")
    m.add_argument("--data", required=True, help="series F4D the labels were computed on")
    m.add_argument("--out", default=None, help="CSV cluster,mean_corr")
    m = leaf(modes, "overlap", "grey/white matter overlap per cluster")
    m.add_argument("--labels", required=True, help="label F4D")
    m.add_argument("--gm", required=True, help="grey-matter mask F4D")
    m.add_argument("--wm", required=True, help="white-matter mask F4D")
    m.add_argument("--out", default=None, help="CSV cluster,gm_frac,wm_frac,size")
    m = leaf(modes, "random-baseline", "mSI between random parcellations")
    m.add_argument("--k", type=int, default=8, help="clusters per random parcellation")
    m.add_argument("--trials", type=int, default=100, help="random pairs to compare")
    m.add_argument("--shape", type=_int_list, default="16,16,16", help="nx,ny,nz")
    m.add_argument("--out", default=None, help="report JSON")

    p = commands.add_parser("hrf", help="FIR responses and activation ranking")
    modes = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode in ("fit", "rank"):
        h = leaf(modes, mode, "fit FIR responses" if mode == "fit" else "rank clusters by paradigm correlation")
        h.add_argument("--labels", required=True, help="label F4D")
        h.add_argument("--data", required=True, help="series F4D")
        h.add_argument("--tree", default=None, help="hierarchy tree JSON")
        h.add_argument("--onsets", required=True, help="comma list of onset TRs, or a JSON file with onsets/paradigm")
        h.add_argument("--on-trs", type=int, default=10, help="ON length used to build a boxcar from onsets")
        h.add_argument("--lags", type=int, default=30, help="FIR lags")
        h.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=True, help="constant column")
        h.add_argument("--percent-change", action="store_true", help="betas as percent of cluster mean")
        h.add_argument("--secondary-threshold", type=float, default=0.4,
                       help="paradigm correlation for secondary and anticorrelated clusters")
        h.add_argument("--out", default=None, help="CSV cluster,lag,beta (fit) or report JSON (rank)")

    p = commands.add_parser("bench", help="operation counts and sweeps")
    modes = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    b = leaf(modes, "predict", "closed-form worst-case distance evaluations")
    b.add_argument("--algo", choices=bench.ALGORITHMS, required=True, help="algorithm tag")
    b.add_argument("--n", type=int, required=True, help="number of series")
    b.add_argument("--k", type=int, default=2, help="clusters (simple)")
    b.add_argument("--replicates", type=int, default=5, help="k-means replicates")
    b.add_argument("--max-iters", type=int, default=100, help="k-means iteration cap")
    b.add_argument("--ns", type=int, default=7, help="number of stages (multistage)")
    b = leaf(modes, "scaling", "wall-clock scaling sweep")
    b.add_argument("--sizes", type=_int_list, default="500,1000,2000,4000,8000", help="ascending N values")
    b.add_argument("--t", type=int, default=100, help="time points per series")
    b.add_argument("--k", type=int, default=8, help="clusters for simple and hier")
    b.add_argument("--latent-groups", type=int, default=16, help="distinct source series in the latent model")
    b.add_argument("--noise", type=float, default=0.5, help="noise std added to each latent row")
    b.add_argument("--data", choices=("latent", "white"), default="latent",
                   help="series model: latent sources plus noise, or white noise")
    b.add_argument("--repeats", type=int, default=20, help="timed runs per point after one warm-up")
    b.add_argument("--out", required=True, help="CSV algorithm,n,mean_seconds,distance_ops")
    b.add_argument("--summary-out", default=None, help="JSON with slopes (default: <out>.json)")
    for mode, help_text in (("table1", "cluster counts over a CT x NS grid"),
                            ("smoothing", "smoothing-kernel sweep")):
        b = leaf(modes, mode, help_text)
        b.add_argument("--in", dest="input", default=None, help="input F4D (default: synthetic grid)")
        b.add_argument("--mask", default=None, help="mask F4D (default: every voxel)")
        b.add_argument("--snr", type=float, default=1.0, help="SNR of the default synthetic grid")
        b.add_argument("--ct-grid", type=_grid, default="0.3:0.95:0.05",
                       help="CT values, start:stop:step or comma list (table1)")
        b.add_argument("--ns-grid", type=_grid, default="2:10:1", help="NS values (table1)")
        b.add_argument("--fwhm-grid", type=_grid, default="0:3:0.5", help="FWHM values in mm (smoothing)")
        b.add_argument("--ct", type=float, default=0.7, help="correlation threshold (smoothing)")
        b.add_argument("--ns", type=int, default=3, help="number of stages (smoothing)")
        b.add_argument("--truth", default=None, help="reference labels (smoothing)")
        b.add_argument("--repeats", type=int, default=20, help="accepted for a uniform bench interface; sweeps are deterministic and run once")
        b.add_argument("--out", required=True, help="output CSV")
    return parser


HANDLERS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "cluster": cmd_cluster,
    "metrics": cmd_metrics,
    "hrf": cmd_hrf,
    "bench": cmd_bench,
}


def main(argv=None):
    global _QUIET_REQUESTED
    argv = sys.argv[1:] if argv is None else list(argv)
    _QUIET_REQUESTED = "--quiet" in argv
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = HANDLERS[args.command](args)
    except (MskError, OSError, ValueError, KeyError) as exc:
        if args.quiet:
            sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        else:
            sys.stderr.write(f"error: {exc}\n")
        return 1
    if result is not None and not args.quiet:
        print(json.dumps(result, default=float, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
