import json

import numpy as np
import pytest

from dquant import compression_report, deco_quantize, synth_activations
from dquant.cli import main
from dquant.formats import read_tensor, write_tensor


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_matrix(path, m):
    write_tensor(path, np.asarray(m, dtype=np.float32))
    return str(path)


def test_unknown_subcommand(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 4
    assert "unknown subcommand" in err


def test_quantize_dequantize_roundtrip(tmp_path, capsys):
    m = synth_activations(256, 256, 8, 20.0, seed=0)
    src = write_matrix(tmp_path / "m.dqt", m)
    dqz = str(tmp_path / "m.dqz")
    code, out, _ = run(capsys, "quantize", "--input", src, "--bits", "8", "--out", dqz)
    assert code == 0
    report = json.loads(out)
    expected = compression_report(deco_quantize(m, 8))
    assert report["ratio"] == pytest.approx(expected.ratio)
    assert report["bytes_compressed"] == expected.bytes_compressed

    back = str(tmp_path / "back.dqt")
    code, _, _ = run(capsys, "dequantize", "--input", dqz, "--out", back)
    assert code == 0
    rec = read_tensor(back)
    assert rec.dtype == np.float32
    assert np.linalg.norm(rec - m) / np.linalg.norm(m) < 0.02


def test_quantize_deterministic_output(tmp_path, capsys):
    m = synth_activations(64, 64, 4, 20.0, seed=1)
    src = write_matrix(tmp_path / "m.dqt", m)
    out1, out2 = str(tmp_path / "a.dqz"), str(tmp_path / "b.dqz")
    assert run(capsys, "quantize", "--input", src, "--bits", "4", "--out", out1)[0] == 0
    assert run(capsys, "quantize", "--input", src, "--bits", "4", "--out", out2)[0] == 0
    assert (tmp_path / "a.dqz").read_bytes() == (tmp_path / "b.dqz").read_bytes()


def test_quantize_bad_bits(tmp_path, capsys):
    src = write_matrix(tmp_path / "m.dqt", np.ones((4, 4)))
    code, _, err = run(capsys, "quantize", "--input", src, "--bits", "5", "--out", "x")
    assert code == 3
    assert "bits" in err


def test_quantize_truncated_input(tmp_path, capsys):
    src = tmp_path / "m.dqt"
    write_matrix(src, np.ones((8, 8)))
    src.write_bytes(src.read_bytes()[:-5])
    code, _, _ = run(capsys, "quantize", "--input", str(src), "--bits", "4", "--out", "x")
    assert code == 2


def test_dequantize_malformed(tmp_path, capsys):
    bad = tmp_path / "bad.dqz"
    bad.write_bytes(b"DQZ1\x01")
    code, _, _ = run(capsys, "dequantize", "--input", str(bad), "--out", "x")
    assert code == 2


def test_analyze_outliers(tmp_path, capsys):
    m = synth_activations(256, 256, 8, 20.0, seed=2)
    src = write_matrix(tmp_path / "m.dqt", m)
    csv_path = tmp_path / "outliers.csv"
    code, out, _ = run(capsys, "analyze-outliers", "--input", src, "--csv", str(csv_path))
    assert code == 0
    summary = json.loads(out)
    assert summary["iqr_t_large"] < summary["iqr_matrix"]
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "tensor_label,q1,q3,iqr,outlier_count,total"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["matrix", "t_large", "t_small"]


def test_analyze_outliers_constant_tensor(tmp_path, capsys):
    src = write_matrix(tmp_path / "m.dqt", np.zeros((32, 32)))
    csv_path = tmp_path / "o.csv"
    code, out, _ = run(capsys, "analyze-outliers", "--input", src, "--csv", str(csv_path))
    assert code == 0
    summary = json.loads(out)
    assert summary["iqr_matrix"] == summary["iqr_t_large"] == 0.0


def test_bench_strategies_row_count(tmp_path, capsys):
    csv_path = tmp_path / "errors.csv"
    code, out, _ = run(
        capsys,
        "bench",
        "--experiment",
        "strategies",
        "--bits",
        "4,8",
        "--seeds",
        "2",
        "--csv",
        str(csv_path),
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["rows"] == 3 * 2 * 2  # methods x bits x seeds
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 1 + summary["rows"]


def test_bench_unknown_experiment(tmp_path, capsys):
    code, _, err = run(
        capsys, "bench", "--experiment", "nonsense", "--csv", str(tmp_path / "x.csv")
    )
    assert code == 4
    assert "unknown experiment" in err


def test_bench_bad_bits(tmp_path, capsys):
    code, _, _ = run(
        capsys,
        "bench",
        "--experiment",
        "strategies",
        "--bits",
        "4,5",
        "--csv",
        str(tmp_path / "x.csv"),
    )
    assert code == 3


def test_kv_sim_prefill_only(tmp_path, capsys):
    csv_path = tmp_path / "trace.csv"
    code, out, _ = run(
        capsys,
        "kv-sim",
        "--layers", "2", "--dim", "64", "--prompt-len", "32", "--gen-len", "0",
        "--bits", "4", "--chunk", "16", "--seed", "1", "--csv", str(csv_path),
    )
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 2  # header + prefill row
    summary = json.loads(out)
    assert summary["bytes_actual"] > 0


def test_kv_sim_audit_and_fp16(tmp_path, capsys):
    code, out, _ = run(
        capsys,
        "kv-sim",
        "--layers", "1", "--dim", "32", "--prompt-len", "16", "--gen-len", "8",
        "--bits", "8", "--chunk", "8", "--audit", "--csv", str(tmp_path / "t.csv"),
    )
    assert code == 0
    assert json.loads(out)["median_score_deviation"] < 1e-2
    code, out, _ = run(
        capsys,
        "kv-sim",
        "--layers", "1", "--dim", "32", "--prompt-len", "16", "--gen-len", "0",
        "--bits", "16", "--chunk", "8", "--csv", str(tmp_path / "t2.csv"),
    )
    assert code == 0
    assert json.loads(out)["ratio"] == 1.0


def test_kv_sim_invalid_config(tmp_path, capsys):
    code, _, _ = run(
        capsys,
        "kv-sim",
        "--layers", "0", "--dim", "32", "--prompt-len", "4", "--gen-len", "0",
        "--csv", str(tmp_path / "t.csv"),
    )
    assert code == 3


def test_import_raw(tmp_path, capsys):
    raw = tmp_path / "dump.bin"
    data = np.arange(12, dtype="<f4")
    raw.write_bytes(data.tobytes())
    out = tmp_path / "t.dqt"
    code, _, _ = run(
        capsys, "import-raw", "--input", str(raw), "--rows", "3", "--cols", "4",
        "--out", str(out),
    )
    assert code == 0
    np.testing.assert_array_equal(read_tensor(out), data.reshape(3, 4))

    code, _, _ = run(
        capsys, "import-raw", "--input", str(raw), "--rows", "5", "--cols", "4",
        "--out", str(out),
    )
    assert code == 2


def test_missing_required_flag(capsys):
    code, _, _ = run(capsys, "quantize", "--bits", "4")
    assert code == 2
