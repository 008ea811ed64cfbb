"""Command-line front end.

One executable, one subcommand per kernel family. Formats are fixed:
RDT1 for tensors, JSON for structured inputs/outputs, CSV for metric
tables. Every run echoes its resolved configuration to stderr before
computing, writes files atomically, and is deterministic: the same
inputs and flags produce byte-identical outputs.

Exit codes: 0 success, 1 domain error (bad file, shape mismatch...),
2 usage error.

Flag defaults reproduce the published training configuration
(histogram d_min=3.5, d_max=80, 100 bins, bandwidth=bin width/20;
consistency beta=1, eps=1; stage weights syn=(1,1,1) and
real=(1, 0.01, 1, 1); depth candidates on [3.5, 80] m).
"""

from __future__ import annotations

from . import _threads  # noqa: F401  (must run before numpy loads)

import argparse
import csv
import io
import json
import sys

import numpy as np

from .cost_volume import DepthCandidates, CostVolume, best_depth, build_cost_volume
from .dist_prior import Histogram, HistogramSpec, aggregate_reference, kl_loss, \
    soft_histogram
from .errors import KernelError
from .geometry import Intrinsics, Pose, warp
from .losses import DEFAULT_REAL_WEIGHTS, DEFAULT_SYN_WEIGHTS, REAL_TERMS, SYN_TERMS, \
    assemble_real, assemble_syn
from .metrics import EvalRange, MetricRow, evaluate, evaluate_batch
from .reweighting import DEFAULT_BETA, DEFAULT_EPS, consistency_map
from .scene_oracle import SceneSpec, render, selfcheck
from .tensor_io import atomic_write_bytes, elementwise_stats, read_tensor, \
    write_pgm, write_tensor


def _echo_config(name, args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config[{name}]: {json.dumps(cfg, sort_keys=True, default=str)}",
          file=sys.stderr)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _write_json(obj, path):
    atomic_write_bytes(path, (_dump_json(obj) + "\n").encode("utf-8"))


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_camera(path):
    doc = _load_json(path)
    try:
        intr = Intrinsics(float(doc["fx"]), float(doc["fy"]),
                          float(doc["cx"]), float(doc["cy"]))
        pose = Pose(np.asarray(doc["theta"], dtype=np.float64),
                    np.asarray(doc["trans"], dtype=np.float64))
    except KeyError as exc:
        raise KernelError(f"camera file {path} is missing field {exc}")
    return intr, pose


def _histogram_to_doc(hist: Histogram) -> dict:
    return {
        "spec": {"d_min": hist.spec.d_min, "d_max": hist.spec.d_max,
                 "bins": hist.spec.bins, "bandwidth": hist.spec.bandwidth},
        "probs": [float(p) for p in hist.probs],
    }


def _histogram_from_doc(doc, path) -> Histogram:
    try:
        s = doc["spec"]
        spec = HistogramSpec(float(s["d_min"]), float(s["d_max"]),
                             int(s["bins"]), float(s["bandwidth"]))
        return Histogram(spec, np.asarray(doc["probs"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise KernelError(f"histogram file {path} is malformed: {exc}")


def _ascii_bars(hist: Histogram, width=50) -> str:
    top = float(hist.probs.max())
    lines = []
    for center, p in zip(hist.spec.bin_centers, hist.probs):
        bar = "#" * (0 if top == 0 else int(round(width * p / top)))
        lines.append(f"{center:8.3f} m |{bar}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_warp(args):
    intr, pose = _load_camera(args.camera)
    source = read_tensor(args.source)
    depth = args.depth_const if args.depth is None else read_tensor(args.depth)
    if depth is None:
        raise KernelError("provide --depth or --depth-const")
    warped, mask = warp(source, pose, depth, intr)
    write_tensor(warped, args.out)
    if args.mask_out:
        write_tensor(mask, args.mask_out)
    stats = elementwise_stats(warped)
    print(_dump_json({"out": args.out, "valid_fraction": float(mask.mean()),
                      "warped_stats": stats}))
    return 0


def _candidates_from_args(args) -> DepthCandidates:
    if args.spacing == "inverse":
        return DepthCandidates.inverse_depth(args.dlo, args.dhi, args.num)
    return DepthCandidates.uniform(args.dlo, args.dhi, args.num)


def _cmd_costvol(args):
    intr, pose = _load_camera(args.camera)
    feat_t = read_tensor(args.feat_t)
    feat_prev = read_tensor(args.feat_prev)
    cands = _candidates_from_args(args)
    cv = build_cost_volume(feat_t, feat_prev, pose, cands, intr, mode=args.mode,
                           normalize=not args.raw_dot)
    write_tensor(cv.volume, args.out)
    sidecar = {"mode": cv.mode, "spacing": args.spacing,
               "candidates": [float(d) for d in cv.candidates.values]}
    _write_json(sidecar, args.sidecar)
    if args.best_depth:
        write_tensor(best_depth(cv), args.best_depth)
    print(_dump_json({"out": args.out, "sidecar": args.sidecar,
                      "slices": int(len(cv.candidates))}))
    return 0


def _cmd_hist(args):
    spec = HistogramSpec(args.dmin, args.dmax, args.bins, args.bandwidth)
    maps = [read_tensor(p) for p in args.depth]
    if len(maps) == 1:
        hist = soft_histogram(maps[0], spec)
    else:
        hist = aggregate_reference(maps, spec)
    doc = _histogram_to_doc(hist)
    if args.json_out:
        _write_json(doc, args.json_out)
    if args.rdt_out:
        write_tensor(hist.probs.astype(np.float32), args.rdt_out)
    print(_dump_json(doc))
    if args.ascii:
        print(_ascii_bars(hist))
    return 0


def _cmd_klloss(args):
    adv = _histogram_from_doc(_load_json(args.adv), args.adv)
    day = _histogram_from_doc(_load_json(args.day), args.day)
    if adv.spec != day.spec:
        raise KernelError(
            f"histogram specs differ between {args.adv} and {args.day}: "
            f"{adv.spec} vs {day.spec}")
    value, grad = kl_loss(adv, day)
    out = {"kl": value}
    if args.grad:
        out["grad_probs"] = [float(g) for g in grad]
    print(_dump_json(out))
    return 0


def _cmd_consistency(args):
    d_syn = read_tensor(args.syn)
    d_day = read_tensor(args.day)
    cm = consistency_map(d_syn, d_day, beta=args.beta, eps=args.eps)
    write_tensor(cm.confidence.astype(np.float32), args.out)
    if args.weights_out:
        write_tensor(cm.weights.astype(np.float32), args.weights_out)
    if args.pgm:
        write_pgm(cm.confidence, args.pgm)
    print(_dump_json({"out": args.out,
                      "confidence_stats": elementwise_stats(cm.confidence)}))
    return 0


def _cmd_losses(args):
    terms = _load_json(args.terms)
    weights = _load_json(args.weights) if args.weights else None
    if args.stage == "syn":
        report = assemble_syn(terms, weights)
    else:
        report = assemble_real(terms, weights)
    print(_dump_json(report.as_dict()))
    return 0


def _metric_row_csv(writer, label, row: MetricRow):
    writer.writerow([label, f"{row.abs_rel:.12g}", f"{row.sq_rel:.12g}",
                     f"{row.rmse:.12g}", f"{row.delta1:.12g}", row.n_valid])


def _cmd_metrics(args):
    rng = EvalRange(args.lo, args.hi)
    if args.manifest:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            pairs = [line.strip().split(",") for line in fh if line.strip()]
        if any(len(p) != 2 for p in pairs):
            raise KernelError(f"manifest {args.manifest} must have lines 'pred,gt'")
    elif args.pred and args.gt:
        pairs = [(args.pred, args.gt)]
    else:
        raise KernelError("provide --pred and --gt, or --manifest")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "abs_rel", "sq_rel", "rmse", "delta1", "n_valid"])
    rows = []
    for pred_path, gt_path in pairs:
        row = evaluate(read_tensor(pred_path), read_tensor(gt_path), rng,
                       median_scale=args.median_scale)
        rows.append(row)
        _metric_row_csv(writer, pred_path, row)
    if len(pairs) > 1 or args.manifest:
        agg = evaluate_batch([(read_tensor(p), read_tensor(g)) for p, g in pairs],
                             rng, median_scale=args.median_scale, pooled=args.pooled)
        _metric_row_csv(writer, "aggregate", agg)
    text = buf.getvalue()
    if args.out:
        atomic_write_bytes(args.out, text.encode("utf-8"))
    print(text, end="")
    return 0


def _cmd_oracle_gen(args):
    intr = Intrinsics(args.fx, args.fy,
                      (args.width - 1) / 2.0 if args.cx is None else args.cx,
                      (args.height - 1) / 2.0 if args.cy is None else args.cy)
    pose = Pose(np.asarray(args.theta), np.asarray(args.trans))
    spec = SceneSpec(kind=args.kind, z0=args.z0, slope_x=args.slope_x,
                     slope_y=args.slope_y, height=args.height, width=args.width,
                     channels=args.channels, intrinsics=intr, pose=pose,
                     texture_seed=args.seed)
    scene = render(spec)
    import os
    os.makedirs(args.outdir, exist_ok=True)
    paths = {}
    for name, grid in (("feat_t", scene.feat_t), ("feat_prev", scene.feat_prev),
                       ("depth_gt", scene.depth_gt), ("depth_prev", scene.depth_prev)):
        paths[name] = os.path.join(args.outdir, f"{name}.rdt")
        write_tensor(grid, paths[name])
    manifest = {
        "files": paths,
        "scene": {"kind": spec.kind, "z0": spec.z0, "slope_x": spec.slope_x,
                  "slope_y": spec.slope_y, "height": spec.height,
                  "width": spec.width, "channels": spec.channels,
                  "texture_seed": spec.texture_seed},
        "camera": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                   "theta": [float(x) for x in pose.theta],
                   "trans": [float(x) for x in pose.trans]},
    }
    manifest_path = os.path.join(args.outdir, "manifest.json")
    _write_json(manifest, manifest_path)
    print(_dump_json({"outdir": args.outdir, "manifest": manifest_path}))
    return 0


def _cmd_selfcheck(args):
    report = selfcheck(candidates=DepthCandidates.inverse_depth(num=args.candidates))
    print(report.format())
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdk",
        description="Numerical kernels for robust multi-frame depth estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", help="inverse-warp a tensor through a pose and depth")
    p.add_argument("--source", required=True, help="RDT1 source grid (C,H,W) or (H,W)")
    p.add_argument("--camera", required=True,
                   help="JSON with fx, fy, cx, cy, theta[3], trans[3]")
    p.add_argument("--depth", help="RDT1 per-pixel target depth (H,W)")
    p.add_argument("--depth-const", type=float,
                   help="constant depth plane in meters instead of --depth")
    p.add_argument("--out", required=True, help="RDT1 output for the warped grid")
    p.add_argument("--mask-out", help="RDT1 output for the 0/1 validity mask")
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("costvol", help="plane-sweep cost volume from two feature maps")
    p.add_argument("--feat-t", required=True, help="RDT1 current-frame features (C,H,W)")
    p.add_argument("--feat-prev", required=True, help="RDT1 previous-frame features")
    p.add_argument("--camera", required=True, help="JSON camera (pose maps t -> t-1)")
    p.add_argument("--mode", choices=["difference", "dot"], default="difference",
                   help="feature-difference cost or normalized dot product")
    p.add_argument("--raw-dot", action="store_true",
                   help="dot mode without L2 normalization")
    p.add_argument("--dlo", type=float, default=3.5, help="nearest candidate (default 3.5 m)")
    p.add_argument("--dhi", type=float, default=80.0, help="farthest candidate (default 80 m)")
    p.add_argument("--num", type=int, default=32, help="number of candidates (default 32)")
    p.add_argument("--spacing", choices=["inverse", "uniform"], default="inverse",
                   help="candidate spacing in 1/depth (default) or depth")
    p.add_argument("--out", required=True, help="RDT1 output volume (D,H,W)")
    p.add_argument("--sidecar", required=True, help="JSON sidecar with candidates+mode")
    p.add_argument("--best-depth", help="optional RDT1 per-pixel best-candidate map")
    p.set_defaults(func=_cmd_costvol)

    p = sub.add_parser("hist", help="differentiable depth histogram (KDE with "
                                    "difference-of-sigmoids kernel)")
    p.add_argument("--depth", required=True, action="append",
                   help="RDT1 depth map; repeat to aggregate an equal-weight reference")
    p.add_argument("--dmin", type=float, default=3.5, help="range start (default 3.5 m)")
    p.add_argument("--dmax", type=float, default=80.0, help="range end (default 80 m)")
    p.add_argument("--bins", type=int, default=100, help="bin count (default 100)")
    p.add_argument("--bandwidth", type=float, default=None,
                   help="kernel bandwidth in meters (default: bin width / 20)")
    p.add_argument("--json-out", help="also write the histogram JSON here")
    p.add_argument("--rdt-out", help="also write probabilities as a rank-1 RDT1 tensor")
    p.add_argument("--ascii", action="store_true", help="append an ASCII bar plot")
    p.set_defaults(func=_cmd_hist)

    p = sub.add_parser("klloss", help="KL divergence between two histogram JSONs")
    p.add_argument("--adv", required=True, help="adverse-condition histogram JSON")
    p.add_argument("--day", required=True, help="reference (daytime) histogram JSON")
    p.add_argument("--grad", action="store_true",
                   help="include d KL / d P_adv in the output")
    p.set_defaults(func=_cmd_klloss)

    p = sub.add_parser("consistency",
                       help="exponential agreement map between two depth maps "
                            "(confidence = exp(-beta * relative difference))")
    p.add_argument("--syn", required=True, help="RDT1 prediction whose scale anchors "
                                                "the relative difference")
    p.add_argument("--day", required=True, help="RDT1 second prediction")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA,
                   help="disagreement scale factor (default 1.0)")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS,
                   help="weight bias keeping weak supervision alive (default 1.0)")
    p.add_argument("--out", required=True, help="RDT1 confidence map output")
    p.add_argument("--weights-out", help="optional RDT1 output of confidence + eps")
    p.add_argument("--pgm", help="optional 8-bit PGM visualization ([0,1] -> [0,255])")
    p.set_defaults(func=_cmd_consistency)

    p = sub.add_parser("losses", help="assemble a stage objective from named terms")
    p.add_argument("--stage", choices=["syn", "real"], required=True)
    p.add_argument("--terms", required=True,
                   help=f"JSON of scalar terms; syn keys {list(SYN_TERMS)}, "
                        f"real keys {list(REAL_TERMS)}")
    p.add_argument("--weights",
                   help=f"JSON of weights (defaults: syn {DEFAULT_SYN_WEIGHTS}, "
                        f"real {DEFAULT_REAL_WEIGHTS})")
    p.set_defaults(func=_cmd_losses)

    p = sub.add_parser("metrics", help="AbsRel / SqRel / RMSE / delta1 with range mask")
    p.add_argument("--pred", help="RDT1 predicted depth")
    p.add_argument("--gt", help="RDT1 ground-truth depth")
    p.add_argument("--manifest", help="CSV of pred,gt path pairs (one per line)")
    p.add_argument("--lo", type=float, default=0.1,
                   help="ground-truth range start (default 0.1 m)")
    p.add_argument("--hi", type=float, default=80.0,
                   help="ground-truth range end (default 80 m; use 50 for the "
                        "shorter-range protocol)")
    p.add_argument("--median-scale", action="store_true",
                   help="align prediction scale by median ratio before evaluating")
    p.add_argument("--pooled", action="store_true",
                   help="pool pixels across images instead of per-image averaging")
    p.add_argument("--out", help="optional CSV output path (stdout either way)")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("oracle", help="analytic test scenes")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    g = osub.add_parser("gen", help="render a plane scene to RDT1 tensors + manifest")
    g.add_argument("--kind", choices=["fronto_parallel", "sloped_plane"],
                   default="fronto_parallel")
    g.add_argument("--z0", type=float, default=41.75, help="plane depth (default 41.75 m)")
    g.add_argument("--slope-x", type=float, default=0.0, help="plane dz/dX (m per m)")
    g.add_argument("--slope-y", type=float, default=0.0, help="plane dz/dY (m per m)")
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=128)
    g.add_argument("--channels", type=int, default=4)
    g.add_argument("--fx", type=float, default=160.0)
    g.add_argument("--fy", type=float, default=160.0)
    g.add_argument("--cx", type=float, default=None, help="default: image center")
    g.add_argument("--cy", type=float, default=None, help="default: image center")
    g.add_argument("--theta", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                   help="axis-angle rotation target -> source")
    g.add_argument("--trans", type=float, nargs=3, default=[5.0, 0.0, 0.0],
                   help="translation target -> source (meters)")
    g.add_argument("--seed", type=int, default=7, help="texture seed")
    g.add_argument("--outdir", required=True)
    g.set_defaults(func=_cmd_oracle_gen)

    p = sub.add_parser("selfcheck", help="run the full property suite "
                                         "(exit 1 on any failure)")
    p.add_argument("--candidates", type=int, default=32,
                   help="plane-sweep candidate count (default 32)")
    p.set_defaults(func=_cmd_selfcheck)

    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    _echo_config(args.command, args)
    try:
        return args.func(args)
    except KernelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
