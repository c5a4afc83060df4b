"""Command-line entry point: simulate, correlate, fit, classify, reproduce.

Every ``cmd_*`` function returns a status dictionary; ``main`` prints it as
JSON and maps ``PhotostatError`` subclasses to exit codes
(0 success, 2 validation, 3 statistics, 4 I/O).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from joblib import Parallel, delayed
from pydantic import ValidationError

from . import analysis, fileio, models, pipeline
from .config import DEFAULT_BIN_WIDTH, ExperimentConfig, config_hash, default_jobs, load_experiment_config
from .correlator import cross_correlate, merge_all
from .errors import ParameterValidationError, PhotostatError, PhotostatIOError
from .logging_utils import set_log_level, track_step

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
HISTOGRAM_NAME = "histogram.csv"
REPORT_NAME = "report.json"


# -- configuration overrides ----------------------------------------------------

def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, out_dir: Optional[str] = None,
                    bin_width: Optional[float] = None, window: Optional[float] = None,
                    delta: Optional[float] = None, mode: Optional[str] = None,
                    realizations: Optional[int] = None) -> ExperimentConfig:
    """Command-line values win over the config file."""
    data = cfg.model_dump()
    if seed is not None:
        data["run"]["master_seed"] = seed
    if realizations is not None:
        data["run"]["realizations"] = realizations
    if out_dir is not None:
        data["outputs"] = out_dir
    if bin_width is not None:
        data["correlator"]["bin_width"] = bin_width
    if window is not None:
        data["correlator"]["window"] = window
    if delta is not None:
        dt = cfg.run.dt
        on_grid = round(delta / dt) * dt
        if abs(on_grid - delta) > 1e-6 * dt:
            logger.warning(f"⚠️  --delta {delta:g} s rounded to the sample grid: {on_grid:g} s")
        data["interferometer"]["delta"] = on_grid
    if mode is not None:
        data["interferometer"]["split_mode"] = "block_arm" if mode == "auto" else "both_arms"
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ParameterValidationError(f"Invalid configuration after overrides: {e}")


def _tag_paths(tag_dir: Path, realization: int):
    return tag_dir / f"r{realization:05d}_A.pstg", tag_dir / f"r{realization:05d}_B.pstg"


def _simulate_and_write(cfg: ExperimentConfig, realization: int, tag_dir: Path) -> Dict:
    a, b = pipeline.simulate_tags(cfg, realization)
    path_a, path_b = _tag_paths(tag_dir, realization)
    fileio.write_tags(path_a, a)
    fileio.write_tags(path_b, b)
    return {"realization": realization, "files": [path_a.name, path_b.name], "counts": [len(a), len(b)]}


# -- commands -------------------------------------------------------------------

@track_step("cmd_simulate")
def cmd_simulate(cfg: ExperimentConfig, jobs: int = 1) -> Dict:
    """Two PSTG tag files per realization plus a manifest with the config and its hash."""
    out_dir = Path(cfg.outputs)
    tag_dir = out_dir / "tags"
    entries = Parallel(n_jobs=jobs)(
        delayed(_simulate_and_write)(cfg, r, tag_dir) for r in range(cfg.run.realizations)
    )
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "config_hash": config_hash(cfg),
        "tag_dir": "tags",
        "realizations": entries,
    }
    manifest_path = fileio.write_json(out_dir / MANIFEST_NAME, manifest)
    total = [sum(e["counts"][i] for e in entries) for i in (0, 1)]
    return {
        "status": "success",
        "manifest": str(manifest_path),
        "realizations": len(entries),
        "count": total,
        "config_hash": manifest["config_hash"],
    }


def _correlate_pair(path_a, path_b, bin_width, window, mode, delta):
    return cross_correlate(fileio.read_tags(path_a), fileio.read_tags(path_b), bin_width, window,
                           mode=mode, delta=delta)


@track_step("cmd_correlate")
def cmd_correlate(pairs: List[tuple], out_dir, bin_width: float, window: float, mode: str = "cross",
                  delta: Optional[float] = None, jobs: int = 1, cfg_hash: Optional[str] = None) -> Dict:
    """Correlate every (A, B) tag-file pair and write the merged histogram CSV + JSON sidecar."""
    if not pairs:
        raise ParameterValidationError("no tag files to correlate")
    if mode == "auto":
        delta = 0.0
    histograms = Parallel(n_jobs=jobs)(
        delayed(_correlate_pair)(a, b, bin_width, window, mode, delta) for a, b in pairs
    )
    merged = merge_all(histograms)
    path = fileio.write_histogram(Path(out_dir) / HISTOGRAM_NAME, merged, config_hash=cfg_hash)
    return {
        "status": "success",
        "histogram": str(path),
        "count": int(merged.counts.sum()),
        "realizations": len(pairs),
        "mode": mode,
        "config_hash": cfg_hash,
    }


@track_step("cmd_fit")
def cmd_fit(histogram_path, out_dir, model: Optional[str] = None, delta: Optional[float] = None,
            resolution_sigma: Optional[float] = None, fit_window: Optional[float] = None,
            threshold_sigma: float = analysis.DEFAULT_THRESHOLD_SIGMA) -> Dict:
    """Fit a histogram file and write the FitReport JSON.

    ``model`` defaults to the three-model g2x comparison for cross histograms
    and to ``chaotic_siegert`` for autocorrelations.
    """
    h = fileio.read_histogram(histogram_path)
    if delta is not None and h.delta is not None and h.mode == "cross" and abs(delta - h.delta) > 1e-6 * h.bin_width:
        raise PhotostatIOError(
            f"--delta {delta:g} s conflicts with the histogram sidecar delta {h.delta:g} s",
            {"flag": delta, "sidecar": h.delta},
        )
    delta = h.delta if delta is None else delta
    model = model or ("g2x" if h.mode == "cross" else "chaotic_siegert")

    if model == "g2x":
        if not delta:
            raise ParameterValidationError("g2x fit needs a positive delta (flag or sidecar)")
        report = analysis.fit_g2x(h, delta, resolution_sigma=resolution_sigma or 0.0,
                                  threshold_sigma=threshold_sigma)
    else:
        report = analysis.fit_g2(h, model, fit_window=fit_window, resolution_sigma=resolution_sigma)
    report.config_hash = h.meta.get("config_hash")

    path = fileio.write_json(Path(out_dir) / REPORT_NAME, report.to_json())
    return {
        "status": "success",
        "report": str(path),
        "model": report.model,
        "chi2_reduced": report.chi2_reduced,
        "verdict": report.verdict,
    }


def cmd_classify(report_path, threshold_sigma: Optional[float] = None) -> Dict:
    """Verdict of a g2x FitReport; re-derived from its evidence when a threshold is given."""
    try:
        report = analysis.FitReport.model_validate(fileio.read_json(report_path))
    except ValidationError as e:
        raise PhotostatIOError(f"{report_path}: not a FitReport: {e}")
    if not report.evidence:
        raise ParameterValidationError(f"{report_path} is a {report.model} fit without cross-correlation evidence")
    verdict = report.verdict
    if threshold_sigma is not None or verdict is None:
        verdict = analysis.classify(report, threshold_sigma=threshold_sigma or analysis.DEFAULT_THRESHOLD_SIGMA)
    ev = report.evidence
    line = (f"{verdict}: dip_depth={ev.get('dip_depth', 0.0):.4f}±{ev.get('dip_sigma') or float('nan'):.4f} "
            f"background_excess={ev.get('background_excess', 0.0):.4f}±{ev.get('background_sigma') or float('nan'):.4f}")
    if verdict == "Mixture":
        line += f" x={ev.get('x_from_dip', float('nan')):.3f}"
    return {"status": "success", "verdict": verdict, "summary": line}


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4g}"


def _g2_reports(out_dir: Path, figure: str, results: Dict[str, Dict]) -> Optional[Dict[str, analysis.FitReport]]:
    """Fits of the g2 figure a cross figure is predicted from: this run's, else a summary on disk."""
    if figure not in pipeline.PREDICTED_FROM:
        return None
    g2_figure = pipeline.PREDICTED_FROM[figure][0]
    result = results.get(g2_figure)
    summary_path = out_dir / g2_figure / "summary.json"
    if result is None and summary_path.exists():
        result = fileio.read_json(summary_path)
    if result is None:
        return None
    try:
        return {label: analysis.FitReport.model_validate(r) for label, r in result.get("reports", {}).items()}
    except ValidationError as e:
        raise PhotostatIOError(f"{summary_path}: reports are not FitReports: {e}")


@track_step("cmd_reproduce")
def cmd_reproduce(figure: str, out_dir, jobs: int = 1, scale: float = 1.0) -> Dict:
    """Run canned figure experiments, write their histograms, predicted g2x curves and a pass/fail summary."""
    figures = list(pipeline.FIGURES) if figure == "all" else [figure]
    out_dir = Path(out_dir)
    results = {}
    for name in figures:
        def save(label, cfg, h, name=name):
            fileio.write_histogram(out_dir / name / f"{label}.csv", h, config_hash=config_hash(cfg))

        def save_prediction(label, tau, g2x, name=name):
            fileio.write_curve(out_dir / name / f"{label}_predicted.csv", tau, g2x)

        result = pipeline.reproduce_figure(name, jobs=jobs, scale=scale, on_histogram=save,
                                           g2_reports=_g2_reports(out_dir, name, results),
                                           on_prediction=save_prediction)
        fileio.write_json(out_dir / name / "summary.json", result)
        results[name] = result

    passed = all(r["passed"] for r in results.values())
    for r in results.values():
        for c in r["checks"]:
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] {r['figure']}: {c['name']} = {_fmt(c['value'])} "
                  f"(allowed [{_fmt(c['low'])}, {_fmt(c['high'])}])")
    return {
        "status": "success",
        "figure": figure,
        "passed": passed,
        "figures": {name: r["passed"] for name, r in results.items()},
    }


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photostat",
                                description="Photon-correlation interferometry simulator and classifier.")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (env PHOTOSTAT_LOG_LEVEL)")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help="Output directory")
    common.add_argument("--jobs", type=int, default=default_jobs(), help="Worker processes (env PHOTOSTAT_JOBS)")

    binning = argparse.ArgumentParser(add_help=False)
    binning.add_argument("--bin-width", type=float, default=None, help="Histogram bin width in seconds")
    binning.add_argument("--window", type=float, default=None, help="Histogram half-span in seconds")
    binning.add_argument("--delta", type=float, default=None, help="Interferometric delay in seconds")
    binning.add_argument("--mode", choices=["auto", "cross"], default=None,
                         help="auto: one arm blocked (g2); cross: both arms (g2x)")

    s = sub.add_parser("simulate", parents=[common, binning], help="Generate tag files from a config")
    s.add_argument("--config", required=True, help="Experiment config JSON")
    s.add_argument("--seed", type=int, default=None, help="Master seed")
    s.add_argument("--realizations", type=int, default=None, help="Number of realizations")

    c = sub.add_parser("correlate", parents=[common, binning], help="Histogram tag files")
    c.add_argument("--manifest", default=None, help="Manifest written by simulate")
    c.add_argument("--tags", nargs="+", default=None, help="Tag files as A B [A B ...] pairs")

    f = sub.add_parser("fit", parents=[common], help="Fit a histogram")
    f.add_argument("--histogram", required=True, help="Histogram CSV (sidecar JSON next to it)")
    f.add_argument("--model", choices=["g2x", *sorted(models.G2_MODELS)], default=None)
    f.add_argument("--delta", type=float, default=None, help="Interferometric delay in seconds")
    f.add_argument("--resolution-sigma", type=float, default=None, help="Timing resolution std in seconds")
    f.add_argument("--fit-window", type=float, default=None, help="Half-span of the g2 fit in seconds")
    f.add_argument("--threshold", type=float, default=analysis.DEFAULT_THRESHOLD_SIGMA,
                   help="Significance (in sigma) for dip and background evidence")

    k = sub.add_parser("classify", help="Print the verdict of a FitReport")
    k.add_argument("--report", required=True, help="FitReport JSON")
    k.add_argument("--threshold", type=float, default=None, help="Re-classify at this significance")

    r = sub.add_parser("reproduce", parents=[common], help="Run the canned figure experiments")
    r.add_argument("figure", choices=[*pipeline.FIGURES, "all"])
    r.add_argument("--scale", type=float, default=1.0, help="Multiply every realization count")
    return p


def _correlate_args(args) -> Dict:
    if args.manifest:
        manifest_path = Path(args.manifest)
        manifest = fileio.read_json(manifest_path)
        try:
            cfg = ExperimentConfig.model_validate(manifest["config"])
        except (KeyError, ValidationError) as e:
            raise PhotostatIOError(f"{manifest_path}: invalid manifest: {e}")
        tag_dir = manifest_path.parent / manifest.get("tag_dir", "tags")
        pairs = [tuple(tag_dir / name for name in entry["files"]) for entry in manifest["realizations"]]
        mode = args.mode or cfg.mode
        window = args.window or cfg.resolved_window()
        return dict(pairs=pairs, out_dir=args.out_dir or manifest_path.parent,
                    bin_width=args.bin_width or cfg.correlator.bin_width, window=window, mode=mode,
                    delta=cfg.interferometer.delta if args.delta is None else args.delta,
                    cfg_hash=manifest.get("config_hash"))
    if not args.tags or len(args.tags) % 2:
        raise ParameterValidationError("--tags needs an even number of files (A B pairs)")
    if args.window is None:
        raise ParameterValidationError("--window is required without a manifest")
    pairs = list(zip(args.tags[0::2], args.tags[1::2]))
    return dict(pairs=pairs, out_dir=args.out_dir or ".", bin_width=args.bin_width or DEFAULT_BIN_WIDTH,
                window=args.window, mode=args.mode or "cross", delta=args.delta)


def dispatch(args) -> Dict:
    if args.command == "simulate":
        cfg = apply_overrides(load_experiment_config(args.config), seed=args.seed, out_dir=args.out_dir,
                              bin_width=args.bin_width, window=args.window, delta=args.delta,
                              mode=args.mode, realizations=args.realizations)
        return cmd_simulate(cfg, jobs=args.jobs)
    if args.command == "correlate":
        return cmd_correlate(jobs=args.jobs, **_correlate_args(args))
    if args.command == "fit":
        return cmd_fit(args.histogram, args.out_dir or Path(args.histogram).parent, model=args.model,
                       delta=args.delta, resolution_sigma=args.resolution_sigma,
                       fit_window=args.fit_window, threshold_sigma=args.threshold)
    if args.command == "classify":
        return cmd_classify(args.report, threshold_sigma=args.threshold)
    return cmd_reproduce(args.figure, args.out_dir or "photostat_reproduce", jobs=args.jobs, scale=args.scale)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)
    try:
        result = dispatch(args)
    except PhotostatError as e:
        logger.error(f"❌ {args.command} failed: {e.message}")
        print(json.dumps(e.to_dict(), default=str))
        return e.exit_code
    if args.command == "classify":
        print(result["summary"])
    else:
        print(json.dumps(result, default=str))
    if args.command == "reproduce" and not result["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
