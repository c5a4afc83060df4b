#!/usr/bin/env python3
"""
Test script for the on-disk formats: binary traces and tags, CSV exports and histogram sidecars
"""

import json
import struct
import sys
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np

from photostat.correlator import CorrelationHistogram
from photostat.detector import TagStream
from photostat.errors import PhotostatIOError
from photostat.fieldsim import FieldTrace, generate_chaotic
from photostat.fileio import (
    FORMAT_VERSION,
    export_csv,
    read_field_trace,
    read_histogram,
    read_intensity_trace,
    read_json,
    read_tags,
    write_field_trace,
    write_histogram,
    write_intensity_trace,
    write_curve,
    write_tags,
)
from photostat.interferometer import blocked_arm_intensity


def test_binary_formats():
    """Traces and tag streams come back with the same samples and metadata"""
    print("\n" + "="*80)
    print("TEST 1: PSFT / PSIT / PSTG files")
    print("="*80)

    trace = generate_chaotic(1e-9, 1000e-9, 5e-11, seed=3, flux=2e8)
    intensity = blocked_arm_intensity(trace)
    stream = TagStream(tags=np.array([1e-9, 2.5e-9, 7e-9]), duration=1e-6, channel_id=1)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        field_back = read_field_trace(write_field_trace(tmp / "field.psft", trace))
        intensity_back = read_intensity_trace(write_intensity_trace(tmp / "port_a.psit", intensity))
        tags_back = read_tags(write_tags(tmp / "a.pstg", stream))

        size = (tmp / "a.pstg").stat().st_size
        print(f"field: {field_back.n} samples, intensity: {intensity_back.n} samples, tags: {len(tags_back)} ({size} bytes)")
        assert size == struct.calcsize("<4sIdQI") + 3 * 8
        assert not list(tmp.glob("*.tmp")), "Atomic writes must not leave temp files"

    assert np.array_equal(field_back.samples, trace.samples)
    assert field_back.dt == trace.dt and field_back.flux == 2e8
    assert np.array_equal(intensity_back.samples, intensity.samples)
    assert np.array_equal(tags_back.tags, stream.tags)
    assert tags_back.duration == 1e-6 and tags_back.channel_id == 1
    print("✅ PASSED: Binary files preserve their contents")


def test_corrupt_files():
    """Wrong magic, truncated payloads and unsorted tags are I/O errors"""
    print("\n" + "="*80)
    print("TEST 2: Corrupt binary files")
    print("="*80)

    stream = TagStream(tags=np.array([1e-9, 2e-9, 3e-9]), duration=1e-6)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        good = write_tags(tmp / "good.pstg", stream).read_bytes()

        (tmp / "magic.pstg").write_bytes(b"XXXX" + good[4:])
        (tmp / "truncated.pstg").write_bytes(good[:-4])
        (tmp / "header.pstg").write_bytes(good[:10])
        (tmp / "version.pstg").write_bytes(
            struct.pack("<4sIdQI", b"PSTG", FORMAT_VERSION + 1, 1e-6, 3, 0) + good[struct.calcsize("<4sIdQI"):])
        unsorted = struct.pack("<4sIdQI", b"PSTG", FORMAT_VERSION, 1e-6, 3, 0) + np.array([3e-9, 1e-9, 2e-9]).tobytes()
        (tmp / "unsorted.pstg").write_bytes(unsorted)

        for name in ("magic", "truncated", "header", "version", "unsorted", "missing"):
            try:
                read_tags(tmp / f"{name}.pstg")
                raise AssertionError(f"{name}: expected PhotostatIOError")
            except PhotostatIOError as e:
                print(f"   {name}: {e.message}")
                assert e.exit_code == 4

        try:
            read_field_trace(tmp / "good.pstg")
            raise AssertionError("A tag file must not load as a field trace")
        except PhotostatIOError as e:
            print(f"   wrong kind: {e.message}")
    print("✅ PASSED: Corrupt files are rejected")


def test_csv_exports():
    """Debug and curve CSVs carry the expected columns and are written atomically"""
    print("\n" + "="*80)
    print("TEST 3: CSV export")
    print("="*80)

    trace = FieldTrace(samples=np.array([1 + 1j, 0.5 - 0.25j]), dt=1e-11)
    stream = TagStream(tags=np.array([1e-9, 2e-9]), duration=1e-8)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        field_csv = export_csv(tmp / "field.csv", trace)
        tags_csv = export_csv(tmp / "tags.csv", stream)
        header = field_csv.read_text().splitlines()[0]
        table = np.loadtxt(field_csv, delimiter=",", skiprows=1)
        print(f"field header: {header}, rows: {table.shape[0]}")

        assert header == "t,re,im"
        assert np.allclose(table, [[0.0, 1.0, 1.0], [1e-11, 0.5, -0.25]])
        assert tags_csv.read_text().splitlines()[0] == "t"

        curve = write_curve(tmp / "predicted.csv", [-1e-9, 0.0, 1e-9], [1.1, 0.9, 1.1])
        assert curve.read_text().splitlines()[0] == "tau_s,g2x"
        assert np.allclose(np.loadtxt(curve, delimiter=",", skiprows=1)[:, 1], [1.1, 0.9, 1.1])

        with patch("photostat.fileio.os.replace", side_effect=OSError("disk full")):
            try:
                export_csv(tmp / "interrupted.csv", stream)
                raise AssertionError("Expected PhotostatIOError when the rename fails")
            except PhotostatIOError as e:
                print(f"   interrupted write: {e.message}")
        assert not (tmp / "interrupted.csv").exists()
        assert not list(tmp.glob("*.tmp")), "CSV writes must not leave temp files"
    print("✅ PASSED: CSV exports are readable")


def test_histogram_with_sidecar():
    """Histogram CSV plus JSON sidecar restores counts, normalization and provenance"""
    print("\n" + "="*80)
    print("TEST 4: Histogram CSV and sidecar")
    print("="*80)

    counts = np.arange(20) * 10
    h = CorrelationHistogram(bin_width=1e-9, window=10e-9, counts=counts, n_a=5000, n_b=4000,
                             record_time=1e-3, total_time=0.9e-3, mode="cross", delta=5e-9)
    with tempfile.TemporaryDirectory() as tmp:
        path = write_histogram(Path(tmp) / "histogram.csv", h, config_hash="abc123")
        sidecar = read_json(path.with_suffix(".json"))
        back = read_histogram(path)
        header = path.read_text().splitlines()[0]
        print(f"header: {header}, sidecar keys: {sorted(sidecar)}")

        assert header == "tau_s,g2,sigma,counts"
        assert not list(Path(tmp).glob("*.tmp"))
        assert sidecar["rate_a"] == 5e6 and sidecar["mode"] == "cross"
        assert np.array_equal(back.counts, counts)
        assert np.allclose(back.g2, h.g2)
        assert back.delta == 5e-9 and back.meta["config_hash"] == "abc123"

        meta = json.loads(path.with_suffix(".json").read_text())
        meta["n_bins"] = 21
        path.with_suffix(".json").write_text(json.dumps(meta))
        try:
            read_histogram(path)
            raise AssertionError("Sidecar and table disagree; expected PhotostatIOError")
        except PhotostatIOError as e:
            print(f"   mismatch: {e.message}")
    print("✅ PASSED: Histograms survive the trip to disk")


def run_all_tests():
    """Run all tests"""
    print("\n" + "="*80)
    print("TESTING fileio")
    print("="*80)

    tests = [
        ("Binary Formats", test_binary_formats),
        ("Corrupt Files", test_corrupt_files),
        ("CSV Export", test_csv_exports),
        ("Histogram Sidecar", test_histogram_with_sidecar),
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
