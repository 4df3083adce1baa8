"""Command-line pipeline for batch users and CI.

Subcommands: select-layers, detect, evaluate, purify, theory-check,
plot-roc. Outputs are plain CSV/JSON (plus static SVG for plots) and every
written file carries a machine-readable provenance line (config, model
hash, seed) so results are replayable. Exit codes: 0 success, 1 usage
error, 2 data/format error. The environment variable IBDPSC_THREADS caps
internal parallelism.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from .detector import DetectionReport, DetectorConfig, detect
from .metrics import (
    ScoredSample,
    auroc,
    f1_at_threshold,
    roc_curve,
    roc_to_csv,
    roc_to_svg,
)
from .modelio import ContainerError, load_dataset, load_model
from .purifier import purify
from .selector import select_k
from .tensor import BnParams
from .theory import simplex_head, certify_norm_threshold, simulate_amplification

__all__ = ["main", "run"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract says 1
        raise _UsageError(message)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _provenance(args, **extra) -> str:
    record = {"tool": "ibd-psc", "subcommand": args.subcommand}
    for key in ("omega", "n", "xi", "threshold", "k", "seed"):
        if hasattr(args, key) and getattr(args, key) is not None:
            record[key] = getattr(args, key)
    if getattr(args, "model", None):
        record["model_sha256"] = _sha256(args.model)
    record.update(extra)
    return "# provenance: " + json.dumps(record, sort_keys=True)


def _write_text(path, provenance: str, body: str) -> None:
    with open(path, "w") as fh:
        fh.write(provenance + "\n")
        fh.write(body)


def _detector_config(args, k) -> DetectorConfig:
    return DetectorConfig(
        omega=args.omega,
        num_views=args.n,
        xi=args.xi,
        threshold=args.threshold,
        k=k,
        allow_shrink=getattr(args, "allow_shrink", False),
    )


def _add_detector_flags(sub, with_k=True):
    sub.add_argument("--omega", type=float, default=1.5, help="BN scaling factor")
    sub.add_argument("--n", type=int, default=5, help="number of amplified views")
    sub.add_argument("--xi", type=float, default=0.6, help="selection error-rate threshold")
    sub.add_argument("--threshold", type=float, default=0.9, help="verdict threshold")
    if with_k:
        sub.add_argument("--k", type=int, default=None,
                         help="amplified-layer start count (selected on the fly if omitted)")
    sub.add_argument("--allow-shrink", action="store_true",
                     help="permit omega < 1 for ablation runs")


def _scored_from_report_and_flags(report_path, flags_path):
    rows = DetectionReport.parse_csv(open(report_path).read())
    if not rows:
        raise ContainerError(f"report {report_path} holds no rows")
    dataset = load_dataset(flags_path)
    if dataset.poison_flags is None:
        raise ContainerError(
            f"dataset {flags_path} carries no poison flags; evaluation needs ground truth"
        )
    if len(rows) != len(dataset):
        raise ContainerError(
            f"report holds {len(rows)} rows but dataset holds {len(dataset)} samples"
        )
    return [
        ScoredSample(score, bool(flag))
        for (_, _, score, _), flag in zip(rows, dataset.poison_flags)
    ], rows


def _cmd_select_layers(args) -> int:
    graph = load_model(args.model)
    benign = load_dataset(args.benign)
    result = select_k(graph, args.omega, args.xi, benign)
    print(f"k={result.k} saturated={str(result.saturated).lower()}")
    if args.out:
        _write_text(args.out, _provenance(args, selected_k=result.k,
                                          saturated=result.saturated), result.to_csv())
    return 0


def _cmd_detect(args) -> int:
    graph = load_model(args.model)
    batch = load_dataset(args.input)
    k, mode = args.k, "given"
    if k is None:
        if not args.benign:
            raise _UsageError("detect needs --k or --benign for implicit layer selection")
        k = select_k(graph, args.omega, args.xi, load_dataset(args.benign),
                     args.allow_shrink).k
        mode = "selected"
    report = detect(graph, _detector_config(args, k), batch)
    flagged = int(report.verdicts.sum())
    print(f"k={k} ({mode}) samples={len(report.records)} flagged={flagged}")
    _write_text(args.out, _provenance(args, k_used=k, k_mode=mode,
                                      views=list(report.views)), report.to_csv())
    return 0


def _cmd_evaluate(args) -> int:
    scored, _ = _scored_from_report_and_flags(args.report, args.flags)
    area = auroc(scored)
    quality = f1_at_threshold(scored, args.threshold)
    print(f"auroc={area:.6f} f1={quality.f1:.6f} tpr={quality.tpr:.6f} fpr={quality.fpr:.6f}")
    if args.out:
        payload = {
            "auroc": area,
            "f1": quality.f1,
            "precision": quality.precision,
            "recall": quality.recall,
            "tpr": quality.tpr,
            "fpr": quality.fpr,
            "threshold": args.threshold,
        }
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_purify(args) -> int:
    graph = load_model(args.model)
    suspect = load_dataset(args.suspect)
    benign = load_dataset(args.benign)
    result = purify(graph, suspect, _detector_config(args, args.k), benign)
    result.summary["provenance"] = json.loads(
        _provenance(args, k_used=result.selected_k).removeprefix("# provenance: ")
    )
    result.write_outputs(args.keep, args.drop, args.summary)
    print(f"kept={len(result.keep_indices)} removed={len(result.drop_indices)} "
          f"k={result.selected_k}")
    return 0


def _cmd_theory_check(args) -> int:
    head = simplex_head(
        classes=args.classes,
        target=args.target,
        target_sigma=args.target_sigma,
        other_sigma=args.other_sigma,
        mean_norm=args.mean_norm,
    )
    rng = np.random.default_rng(args.seed)
    chain = []
    for _ in range(args.stages):
        chain.append(
            (
                np.eye(head.dim) + rng.uniform(0, 0.05, size=(head.dim, head.dim)),
                BnParams(
                    np.ones(head.dim, np.float32),
                    np.zeros(head.dim, np.float32),
                    np.zeros(head.dim, np.float32),
                    np.ones(head.dim, np.float32),
                ),
            )
        )
    result = simulate_amplification(
        head, chain, args.omega, list(range(args.stages + 1)), args.samples, args.seed
    )
    cert = result.certificate
    payload = {
        "backdoor_condition_holds": cert.backdoor_condition_holds,
        "threshold": cert.threshold if cert.is_finite else "inf",
        "pairwise": {str(c): (m if np.isfinite(m) else "inf")
                     for c, m in cert.pairwise.items()},
        "clamped": list(cert.clamped),
        "seed": args.seed,
        "omega": args.omega,
        "classes": args.classes,
        "target_sigma": args.target_sigma,
        "other_sigma": args.other_sigma,
        "mean_norm": args.mean_norm,
    }
    with open(args.cert_out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_text(args.curve_out, _provenance(args), result.to_csv())
    print(f"condition={str(cert.backdoor_condition_holds).lower()} "
          f"threshold={cert.threshold:.6g}")
    return 0


def _cmd_plot_roc(args) -> int:
    scored, _ = _scored_from_report_and_flags(args.report, args.flags)
    points = roc_curve(scored)
    area = auroc(scored)
    _write_text(args.out, "<!-- " + _provenance(args)[2:] + " -->",
                roc_to_svg(points, title=f"AUROC {area:.3f}"))
    if args.csv_out:
        _write_text(args.csv_out, _provenance(args, auroc=area), roc_to_csv(points))
    print(f"auroc={area:.6f} points={len(points)}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="ibd-psc", description=__doc__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    sub = subs.add_parser("select-layers", help="scan amplified views for the layer count")
    sub.add_argument("--model", required=True)
    sub.add_argument("--benign", required=True, help="benign reference .ibds")
    sub.add_argument("--omega", type=float, default=1.5)
    sub.add_argument("--xi", type=float, default=0.6)
    sub.add_argument("--out", default=None, help="write the k/eta curve CSV here")
    sub.set_defaults(func=_cmd_select_layers)

    sub = subs.add_parser("detect", help="score a batch and write the verdict report")
    sub.add_argument("--model", required=True)
    sub.add_argument("--input", required=True, help="suspicious batch .ibds")
    sub.add_argument("--benign", default=None, help="reference .ibds for implicit selection")
    _add_detector_flags(sub)
    sub.add_argument("--out", required=True, help="report CSV path")
    sub.set_defaults(func=_cmd_detect)

    sub = subs.add_parser("evaluate", help="AUROC/F1 of a report against ground truth")
    sub.add_argument("--report", required=True)
    sub.add_argument("--flags", required=True, help=".ibds with poison flags")
    sub.add_argument("--threshold", type=float, default=0.9)
    sub.add_argument("--out", default=None, help="optional metrics JSON")
    sub.set_defaults(func=_cmd_evaluate)

    sub = subs.add_parser("purify", help="partition a suspect training set")
    sub.add_argument("--model", required=True)
    sub.add_argument("--suspect", required=True)
    sub.add_argument("--benign", required=True)
    _add_detector_flags(sub)
    sub.add_argument("--keep", required=True)
    sub.add_argument("--drop", required=True)
    sub.add_argument("--summary", required=True)
    sub.set_defaults(func=_cmd_purify)

    sub = subs.add_parser("theory-check", help="certificate + norm-vs-k Monte-Carlo")
    sub.add_argument("--classes", type=int, default=4)
    sub.add_argument("--target", type=int, default=0)
    sub.add_argument("--target-sigma", type=float, default=2.0)
    sub.add_argument("--other-sigma", type=float, default=1.0)
    sub.add_argument("--mean-norm", type=float, default=1.0)
    sub.add_argument("--omega", type=float, default=1.5)
    sub.add_argument("--stages", type=int, default=4)
    sub.add_argument("--samples", type=int, default=10000)
    sub.add_argument("--seed", type=int, default=7)
    sub.add_argument("--cert-out", required=True)
    sub.add_argument("--curve-out", required=True)
    sub.set_defaults(func=_cmd_theory_check)

    sub = subs.add_parser("plot-roc", help="static SVG ROC plot from a report")
    sub.add_argument("--report", required=True)
    sub.add_argument("--flags", required=True)
    sub.add_argument("--out", required=True, help="SVG path")
    sub.add_argument("--csv-out", default=None)
    sub.set_defaults(func=_cmd_plot_roc)
    return parser


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (ContainerError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
