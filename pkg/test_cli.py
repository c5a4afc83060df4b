#!/usr/bin/env python3
"""
Test script for the photostat command line: simulate -> correlate -> fit -> classify,
configuration overrides, exit codes and the reproduce command
"""

import io
import json
import sys
import tempfile
from contextlib import redirect_stdout
from pathlib import Path
from unittest.mock import patch

import numpy as np

from photostat import models
from photostat.cli import apply_overrides, main
from photostat.config import (
    CorrelatorConfig,
    DetectorConfig,
    ExperimentConfig,
    InterferometerConfig,
    RunConfig,
    SourceModel,
)
from photostat.correlator import CorrelationHistogram
from photostat.errors import ParameterValidationError
from photostat.fileio import read_json, write_histogram

TAU_C = 1e-9
DT = 50e-12
IDEAL = DetectorConfig(efficiency=1.0, jitter_sigma=0.0, dead_time=0.0)


def chaotic_blocked_config():
    return ExperimentConfig(
        source=SourceModel(kind="chaotic", tau_c=TAU_C),
        interferometer=InterferometerConfig(split_mode="block_arm"),
        detectors=(IDEAL, IDEAL),
        correlator=CorrelatorConfig(bin_width=100e-12),
        run=RunConfig(duration=20e-6, dt=DT, flux=3e8, realizations=20, master_seed=11),
    )


def run_cli(argv):
    """main() exit code plus everything it printed."""
    buffer = io.StringIO()
    with redirect_stdout(buffer):
        code = main(argv)
    return code, buffer.getvalue().strip()


def mixture_histogram(path):
    """Ideal x = 0.5 cross histogram written to disk with its sidecar."""
    delta, bin_width, window, per_bin = 11e-9, 10e-12, 30e-9, 20000
    n_bins = int(round(2 * window / bin_width))
    tau = -window + (np.arange(n_bins) + 0.5) * bin_width
    expected = models.g2x_from_g2(tau, delta, lambda t: models.g2_mixture(t, 0.5, 400e-12), 400e-12)
    total_time = per_bin / (1e16 * bin_width)
    n = int(round(1e8 * total_time))
    h = CorrelationHistogram(bin_width=bin_width, window=window,
                             counts=np.random.default_rng(8).poisson(expected * per_bin),
                             n_a=n, n_b=n, record_time=total_time, total_time=total_time,
                             mode="cross", delta=delta)
    return write_histogram(path, h, config_hash="synthetic")


def test_apply_overrides():
    """Flags win over the file; delta snaps to the sample grid with a warning"""
    print("\n" + "="*80)
    print("TEST 1: Configuration overrides")
    print("="*80)

    base = ExperimentConfig(
        source=SourceModel(kind="chaotic", tau_c=TAU_C),
        interferometer=InterferometerConfig(delta=10e-9, dither="random_phase", segment_duration=100e-9),
        run=RunConfig(duration=20e-6, dt=DT, flux=1e8),
    )
    with patch("photostat.cli.logger") as mock_logger:
        cfg = apply_overrides(base, seed=42, delta=10.02e-9, bin_width=200e-12, realizations=5, out_dir="elsewhere")
        print(f"delta -> {cfg.interferometer.delta:.4e} s, warnings: {mock_logger.warning.call_count}")
        assert mock_logger.warning.call_count == 1
    assert abs(cfg.interferometer.delta - 10e-9) < 1e-18
    assert cfg.run.master_seed == 42 and cfg.run.realizations == 5
    assert cfg.correlator.bin_width == 200e-12 and cfg.outputs == "elsewhere"
    assert base.run.master_seed == 0, "Overrides must not mutate the loaded config"

    auto = apply_overrides(base, mode="auto")
    assert auto.mode == "auto" and auto.interferometer.split_mode == "block_arm"

    try:
        apply_overrides(base, realizations=0)
        raise AssertionError("Expected ParameterValidationError")
    except ParameterValidationError as e:
        print(f"   realizations=0: {e.message[:80]}")
    print("✅ PASSED: Overrides are applied and validated")


def test_end_to_end_autocorrelation():
    """simulate -> correlate -> fit on a blocked-arm chaotic source recovers tau_c"""
    print("\n" + "="*80)
    print("TEST 2: Command-line pipeline")
    print("="*80)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config_path = tmp / "chaotic.json"
        config_path.write_text(chaotic_blocked_config().model_dump_json(indent=2))
        out = tmp / "run"

        code, output = run_cli(["simulate", "--config", str(config_path), "--out-dir", str(out), "--jobs", "1"])
        assert code == 0, output
        simulated = json.loads(output)
        manifest = read_json(out / "manifest.json")
        print(f"simulate: {simulated['realizations']} realizations, tags {simulated['count']}")
        assert simulated["realizations"] == 20
        assert len(list((out / "tags").glob("*.pstg"))) == 40
        assert manifest["config_hash"] == simulated["config_hash"]

        code, output = run_cli(["correlate", "--manifest", str(out / "manifest.json"), "--jobs", "2"])
        assert code == 0, output
        correlated = json.loads(output)
        sidecar = read_json(out / "histogram.json")
        print(f"correlate: {correlated['count']} pairs in {sidecar['n_bins']} bins, mode {sidecar['mode']}")
        assert sidecar["mode"] == "auto" and sidecar["config_hash"] == manifest["config_hash"]

        code, output = run_cli(["fit", "--histogram", str(out / "histogram.csv"), "--resolution-sigma", "0"])
        assert code == 0, output
        report = read_json(out / "report.json")
        print(f"fit: {report['model']} tau_c = {report['params']['tau_c'] * 1e9:.3f} ns, "
              f"chi2_red = {report['chi2_reduced']:.3f}")
        assert report["model"] == "chaotic_siegert"
        assert abs(report["params"]["tau_c"] - TAU_C) < 0.2 * TAU_C
        assert report["config_hash"] == manifest["config_hash"]
        assert "residuals" not in report

        code, output = run_cli(["classify", "--report", str(out / "report.json")])
        print(f"classify on a g2 report: exit {code}")
        assert code == 2
    print("✅ PASSED: The pipeline runs from the command line")


def test_simulate_is_reproducible():
    """Same config and seed write byte-identical tag files"""
    print("\n" + "="*80)
    print("TEST 3: Reproducible tag files")
    print("="*80)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config_path = tmp / "chaotic.json"
        config_path.write_text(chaotic_blocked_config().model_dump_json())
        for name, jobs in (("one", "1"), ("two", "2")):
            code, output = run_cli(["simulate", "--config", str(config_path), "--out-dir", str(tmp / name),
                                    "--jobs", jobs, "--realizations", "3"])
            assert code == 0, output
        code, _ = run_cli(["simulate", "--config", str(config_path), "--out-dir", str(tmp / "other"),
                           "--jobs", "1", "--realizations", "3", "--seed", "12"])
        assert code == 0

        for r in range(3):
            for channel in ("A", "B"):
                name = f"r{r:05d}_{channel}.pstg"
                assert (tmp / "one" / "tags" / name).read_bytes() == (tmp / "two" / "tags" / name).read_bytes()
        assert (tmp / "one" / "tags" / "r00000_A.pstg").read_bytes() != (tmp / "other" / "tags" / "r00000_A.pstg").read_bytes()
    print("✅ PASSED: Tag files are bit-identical across worker counts")


def test_fit_and_classify_cross_histogram():
    """g2x fit of a mixture histogram, classify output and threshold re-classification"""
    print("\n" + "="*80)
    print("TEST 4: fit and classify on a cross-correlation")
    print("="*80)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        histogram = mixture_histogram(tmp / "histogram.csv")

        code, output = run_cli(["fit", "--histogram", str(histogram)])
        assert code == 0, output
        assert json.loads(output)["verdict"] == "Mixture"

        code, line = run_cli(["classify", "--report", str(tmp / "report.json")])
        print(f"classify: {line}")
        assert code == 0
        assert line.startswith("Mixture: dip_depth=")
        assert " x=0.4" in line or " x=0.5" in line

        code, line = run_cli(["classify", "--report", str(tmp / "report.json"), "--threshold", "1e6"])
        print(f"classify at 1e6 sigma: {line}")
        assert line.startswith("Chaotic:")

        code, output = run_cli(["fit", "--histogram", str(histogram), "--delta", "5e-9"])
        print(f"conflicting --delta: exit {code}")
        assert code == 4
    print("✅ PASSED: Cross histograms are fitted and classified")


def test_exit_codes():
    """I/O, validation and statistics failures map to 4, 2 and 3"""
    print("\n" + "="*80)
    print("TEST 5: Exit codes")
    print("="*80)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        bad = tmp / "bad.json"
        bad.write_text(json.dumps({"source": {"kind": "chaotic", "tau_c": -1.0},
                                   "run": {"duration": 1e-5, "dt": 1e-11, "flux": 1e8}}))

        sparse = CorrelationHistogram(bin_width=1e-9, window=20e-9, counts=np.full(40, 5), n_a=100, n_b=100,
                                      record_time=1e-3, total_time=1e-3, mode="auto", delta=0.0)
        write_histogram(tmp / "sparse.csv", sparse)

        cases = [
            ("missing config", ["simulate", "--config", str(tmp / "missing.json")], 4),
            ("invalid config", ["simulate", "--config", str(bad)], 2),
            ("odd tag list", ["correlate", "--tags", str(tmp / "a.pstg"), "--window", "1e-8"], 2),
            ("missing tag file", ["correlate", "--tags", str(tmp / "a.pstg"), str(tmp / "b.pstg"),
                                  "--window", "1e-8", "--out-dir", str(tmp)], 4),
            ("sparse histogram", ["fit", "--histogram", str(tmp / "sparse.csv")], 3),
        ]
        for name, argv, expected in cases:
            code, output = run_cli(argv)
            print(f"   {name}: exit {code} ({output[:70]})")
            assert code == expected, f"{name}: expected exit {expected}, got {code}"
            assert json.loads(output)["status"] == "error"
    print("✅ PASSED: Failures map to their exit codes")


def test_reproduce_command():
    """reproduce writes a summary per figure and fails the process on a failed check"""
    print("\n" + "="*80)
    print("TEST 6: reproduce")
    print("="*80)

    def fake_result(passed):
        return {
            "status": "success",
            "figure": "mixture",
            "passed": passed,
            "checks": [{"name": "g2x(0)", "value": 0.751, "target": 0.75, "low": 0.72, "high": 0.78, "passed": passed}],
            "reports": {},
        }

    with tempfile.TemporaryDirectory() as tmp:
        with patch("photostat.cli.pipeline.reproduce_figure", return_value=fake_result(True)) as mock_reproduce:
            code, output = run_cli(["reproduce", "mixture", "--out-dir", tmp, "--scale", "0.1", "--jobs", "1"])
            print(f"passing figure: exit {code}")
            assert code == 0
            assert "[PASS] mixture: g2x(0)" in output
            assert mock_reproduce.call_args.kwargs["scale"] == 0.1
            assert read_json(Path(tmp) / "mixture" / "summary.json")["passed"] is True

        with patch("photostat.cli.pipeline.reproduce_figure", return_value=fake_result(False)):
            code, output = run_cli(["reproduce", "mixture", "--out-dir", tmp])
            print(f"failing figure: exit {code}")
            assert code == 1
            assert "[FAIL]" in output
    print("✅ PASSED: reproduce reports pass and fail")


def test_reproduce_writes_prediction():
    """fig3 reproduction picks up the fig2 fits on disk and writes the predicted curve"""
    print("\n" + "="*80)
    print("TEST 7: reproduce with a predicted g2x curve")
    print("="*80)

    fig2_reports = {"chaotic": {"model": "gaussian", "params": {"amplitude": 0.25, "sigma": 1.8e-10},
                                "chi2_reduced": 1.02}}

    def fake_reproduce(figure, jobs=1, scale=1.0, on_histogram=None, g2_reports=None, on_prediction=None):
        tau = np.linspace(-1e-9, 1e-9, 5)
        on_prediction("chaotic", tau, np.ones_like(tau))
        return {"status": "success", "figure": figure, "passed": True, "checks": [], "reports": {},
                "predictions": {"chaotic": {"from": "fig2 chaotic fit", "chi2_reduced": 1.0}}}

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "fig2").mkdir()
        (tmp / "fig2" / "summary.json").write_text(json.dumps({"figure": "fig2", "reports": fig2_reports}))
        with patch("photostat.cli.pipeline.reproduce_figure", side_effect=fake_reproduce) as mock_reproduce:
            code, _ = run_cli(["reproduce", "fig3-top", "--out-dir", str(tmp)])
        g2_reports = mock_reproduce.call_args.kwargs["g2_reports"]
        curve = np.loadtxt(tmp / "fig3-top" / "chaotic_predicted.csv", delimiter=",", skiprows=1)
        header = (tmp / "fig3-top" / "chaotic_predicted.csv").read_text().splitlines()[0]
        print(f"exit {code}, g2 reports {sorted(g2_reports)}, curve {curve.shape}, header {header}")

        assert code == 0
        assert g2_reports["chaotic"].model == "gaussian"
        assert g2_reports["chaotic"].params["amplitude"] == 0.25
        assert header == "tau_s,g2x"
        assert curve.shape == (5, 2) and np.allclose(curve[:, 1], 1.0)
        assert not list((tmp / "fig3-top").glob(".*.tmp"))

        with patch("photostat.cli.pipeline.reproduce_figure", side_effect=fake_reproduce) as mock_reproduce:
            run_cli(["reproduce", "fig3-top", "--out-dir", str(tmp / "fresh")])
        assert mock_reproduce.call_args.kwargs["g2_reports"] is None
    print("✅ PASSED: Predicted curves land next to the histograms")


def run_all_tests():
    """Run all tests"""
    print("\n" + "="*80)
    print("TESTING cli")
    print("="*80)

    tests = [
        ("Overrides", test_apply_overrides),
        ("End-to-End", test_end_to_end_autocorrelation),
        ("Reproducible Tags", test_simulate_is_reproducible),
        ("Cross Fit and Classify", test_fit_and_classify_cross_histogram),
        ("Exit Codes", test_exit_codes),
        ("Reproduce", test_reproduce_command),
        ("Reproduce Prediction", test_reproduce_writes_prediction),
    ]

    passed = 0
    failed = 0

    for test_name, test_func in tests:
        try:
            test_func()
            passed += 1
        except AssertionError as e:
            print(f"❌ FAILED: {test_name}")
            print(f"   Error: {str(e)}")
            failed += 1
        except Exception as e:
            print(f"❌ ERROR in {test_name}: {str(e)}")
            failed += 1

    print("\n" + "="*80)
    print("TEST SUMMARY")
    print("="*80)
    print(f"Total tests: {len(tests)}")
    print(f"Passed: {passed} ✅")
    print(f"Failed: {failed} ❌")
    print("="*80)

    return failed == 0


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)
