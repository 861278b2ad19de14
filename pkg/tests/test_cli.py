"""End-to-end subcommand tests: exit codes, file outputs, and schemas."""
import json
import struct

import numpy as np
import pytest

from polykan.cli import build_parser, load_matrix, main, save_matrix
from polykan.lut import load_lut
from polykan.tensor import CoeffTensor, Layout, load_coeff, save_coeff


def run_cli(*argv) -> int:
    return main(list(argv))


def test_lut_build_writes_expected_length(tmp_path, capsys):
    out = tmp_path / "t.pklt"
    code = run_cli("lut-build", "--basis", "chebyshev", "--degree", "8",
                   "--size", "32768", "--out", str(out))
    assert code == 0
    expected = 17 + 4 * (9 * 32768 + 9 * 32767)
    assert out.stat().st_size == expected
    captured = capsys.readouterr().out
    assert "error bounds" in captured
    table = load_lut(out)
    assert table.degree == 8 and table.lut_size == 32768


def test_lut_build_is_deterministic(tmp_path):
    a = tmp_path / "a.pklt"
    b = tmp_path / "b.pklt"
    assert run_cli("lut-build", "--degree", "4", "--size", "512", "--out", str(a)) == 0
    assert run_cli("lut-build", "--degree", "4", "--size", "512", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_lut_build_rejects_tiny_size(tmp_path, capsys):
    code = run_cli("lut-build", "--degree", "2", "--size", "1",
                   "--out", str(tmp_path / "x.pklt"))
    assert code == 2
    assert "lut_size must be >= 2" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("lut-build", "--degree", "2", "--out", "x", "--frobnicate")
    assert exc.value.code == 2


def test_unknown_basis_is_usage_error(tmp_path, capsys):
    code = run_cli("lut-build", "--basis", "bspline", "--degree", "2",
                   "--out", str(tmp_path / "x.pklt"))
    assert code == 2
    assert "unknown basis" in capsys.readouterr().err


def test_bench_custom_config_and_row_counts(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps([{"batch": 1, "d_in": 1, "d_out": 1, "degree": 0}]))
    csv_out = tmp_path / "b.csv"
    code = run_cli("bench", "--configs", str(cfg), "--versions", "all",
                   "--reps", "1", "--warmups", "0", "--csv", str(csv_out))
    assert code == 0
    lines = csv_out.read_text().strip().splitlines()
    assert len(lines) == 1 + 5  # header + one row per version

    code = run_cli("bench", "--configs", str(cfg), "--versions", "fused-lut",
                   "--reps", "1", "--warmups", "0", "--csv", str(csv_out))
    assert code == 0
    lines = csv_out.read_text().strip().splitlines()
    assert len(lines) == 2


def test_bench_paper_preset_emits_all_rows(tmp_path):
    csv_out = tmp_path / "paper.csv"
    code = run_cli("bench", "--configs", "paper", "--versions", "all",
                   "--reps", "1", "--warmups", "0", "--csv", str(csv_out))
    assert code == 0
    lines = csv_out.read_text().strip().splitlines()
    assert len(lines) == 1 + 3 * 5  # three shapes x five versions
    shapes = {tuple(line.split(",")[:4]) for line in lines[1:]}
    assert ("128", "40", "256", "8") in shapes
    assert ("64", "256", "512", "15") in shapes
    assert ("32", "512", "1024", "24") in shapes


def test_lut_build_cli_matches_library_bytes(tmp_path):
    from polykan.basis import BasisKind
    from polykan.lut import lut_build, save_lut

    cli_path = tmp_path / "cli.pklt"
    lib_path = tmp_path / "lib.pklt"
    assert run_cli("lut-build", "--basis", "hermite", "--degree", "5",
                   "--size", "257", "--out", str(cli_path)) == 0
    save_lut(lut_build(BasisKind.HERMITE, 5, 257), lib_path)
    assert cli_path.read_bytes() == lib_path.read_bytes()


def test_bench_roofline_json_lambda(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(
        [{"batch": 2, "d_in": 3, "d_out": 4, "degree": 1, "elem_bytes": 8}]
    ))
    csv_out = tmp_path / "b.csv"
    rj = tmp_path / "roofline.json"
    code = run_cli("bench", "--configs", str(cfg), "--versions", "fused-lut+reorder",
                   "--reps", "1", "--warmups", "0", "--csv", str(csv_out),
                   "--roofline-json", str(rj))
    assert code == 0
    payload = json.loads(rj.read_text())
    lam4 = 4 * (2 * 3 + 2 * 4 + 2 * 2 * 3 * 2 + 3 * 4 * 2)
    assert payload[0]["bytes"] == 2 * lam4


def test_bench_unknown_version(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps([{"batch": 1, "d_in": 1, "d_out": 1, "degree": 0}]))
    code = run_cli("bench", "--configs", str(cfg), "--versions", "fused-maybe",
                   "--reps", "1", "--warmups", "0", "--csv", str(tmp_path / "b.csv"))
    assert code == 2
    assert "unknown kernel version" in capsys.readouterr().err


def test_train_end_to_end_and_determinism(tmp_path, capsys):
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    args = ["train", "--data", "synthetic:cheb2", "--arch", "1,1", "--degree", "2",
            "--epochs", "8", "--seed", "3"]
    assert run_cli(*args, "--out", str(out1)) == 0
    assert run_cli(*args, "--out", str(out2)) == 0
    assert (out1 / "loss.csv").read_bytes() == (out2 / "loss.csv").read_bytes()
    assert (out1 / "manifest.json").exists()
    assert (out1 / "layer_0.pkck").exists()
    lines = (out1 / "loss.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,loss"
    assert len(lines) == 9


def test_train_rejects_bad_arch(tmp_path, capsys):
    code = run_cli("train", "--data", "synthetic:cheb2", "--arch", "1",
                   "--out", str(tmp_path / "o"))
    assert code == 2
    code = run_cli("train", "--data", "synthetic:cheb2", "--arch", "a,b",
                   "--out", str(tmp_path / "o"))
    assert code == 2


def test_train_rejects_bad_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,t\n1,2\nx,3\n")
    code = run_cli("train", "--data", str(bad), "--arch", "1,1",
                   "--out", str(tmp_path / "o"))
    assert code == 2
    assert "lines: 3" in capsys.readouterr().err


def test_train_csv_regression(tmp_path):
    data = tmp_path / "d.csv"
    rows = ["x1,x2,y"]
    rng = np.random.default_rng(0)
    for _ in range(64):
        a, b = rng.uniform(-1, 1, 2)
        rows.append(f"{a},{b},{a + b}")
    data.write_text("\n".join(rows) + "\n")
    code = run_cli("train", "--data", str(data), "--arch", "2,1", "--degree", "3",
                   "--epochs", "5", "--out", str(tmp_path / "o"))
    assert code == 0


def test_train_csv_classification(tmp_path):
    data = tmp_path / "labels.csv"
    rows = ["x1,x2,label"]
    rng = np.random.default_rng(4)
    for _ in range(80):
        a, b = rng.uniform(-1, 1, 2)
        rows.append(f"{a},{b},{int(a + b > 0)}")
    data.write_text("\n".join(rows) + "\n")
    code = run_cli("train", "--data", str(data), "--arch", "2,4,2", "--degree", "3",
                   "--epochs", "5", "--loss", "cross_entropy",
                   "--out", str(tmp_path / "o"))
    assert code == 0
    lines = (tmp_path / "o" / "loss.csv").read_text().strip().splitlines()
    first = float(lines[1].split(",")[1])
    last = float(lines[-1].split(",")[1])
    assert last < first  # the classifier learns the separable rule


def test_verify_small_passes(capsys):
    assert run_cli("verify", "--config", "small") == 0
    out = capsys.readouterr().out
    assert "all" in out and "passed" in out


def test_verify_fault_injection_trips_slope_check():
    # A sign flip in the slope table must fail the slope-consistency property
    # specifically, and nothing upstream of it.
    from polykan.basis import BasisKind
    from polykan.lut import lut_build
    from polykan.verify import check_lut_slope_consistency, check_lut_grid_exactness

    table = lut_build(BasisKind.CHEBYSHEV, 6, 1024)
    table._slopes_by_pos = -table._slopes_by_pos
    result = check_lut_slope_consistency(table)
    assert not result.passed
    assert check_lut_grid_exactness(table).passed  # values untouched


def test_apply_forward_backward(tmp_path):
    rng = np.random.default_rng(1)
    coeff = CoeffTensor(4, 3, 2, Layout.JOD,
                        rng.uniform(-0.5, 0.5, 36).astype(np.float32).astype(np.float64))
    save_coeff(coeff, tmp_path / "layer.pkck")
    x = rng.uniform(-2, 2, (5, 4))
    save_matrix(x, tmp_path / "x.pkmx")
    dy = rng.standard_normal((5, 3))
    save_matrix(dy, tmp_path / "dy.pkmx")
    bias = [0.5, -1.0, 0.25]
    (tmp_path / "bias.json").write_text(json.dumps(bias))

    code = run_cli("apply", "--coeff", str(tmp_path / "layer.pkck"),
                   "--input", str(tmp_path / "x.pkmx"),
                   "--output", str(tmp_path / "y.pkmx"),
                   "--bias-json", str(tmp_path / "bias.json"),
                   "--dy", str(tmp_path / "dy.pkmx"),
                   "--coeff-grad", str(tmp_path / "cg.pkck"),
                   "--x-grad", str(tmp_path / "xg.pkmx"),
                   "--lut-size", "4096")
    assert code == 0
    y = load_matrix(tmp_path / "y.pkmx")
    assert y.shape == (5, 3)
    cg = load_coeff(tmp_path / "cg.pkck")
    assert cg.layout is Layout.DOJ
    assert load_matrix(tmp_path / "xg.pkmx").shape == (5, 4)

    # same inputs -> bit-identical output files
    code = run_cli("apply", "--coeff", str(tmp_path / "layer.pkck"),
                   "--input", str(tmp_path / "x.pkmx"),
                   "--output", str(tmp_path / "y2.pkmx"),
                   "--bias-json", str(tmp_path / "bias.json"),
                   "--lut-size", "4096")
    assert code == 0
    assert (tmp_path / "y.pkmx").read_bytes() == (tmp_path / "y2.pkmx").read_bytes()


def test_apply_shape_mismatch_is_usage_error(tmp_path, capsys):
    rng = np.random.default_rng(2)
    coeff = CoeffTensor(4, 3, 2, Layout.JOD, rng.uniform(-0.5, 0.5, 36))
    save_coeff(coeff, tmp_path / "layer.pkck")
    save_matrix(rng.uniform(-1, 1, (5, 7)), tmp_path / "x.pkmx")  # wrong width
    code = run_cli("apply", "--coeff", str(tmp_path / "layer.pkck"),
                   "--input", str(tmp_path / "x.pkmx"),
                   "--output", str(tmp_path / "y.pkmx"), "--lut-size", "64")
    assert code == 2


def test_apply_missing_file_is_io_error(tmp_path):
    code = run_cli("apply", "--coeff", str(tmp_path / "none.pkck"),
                   "--input", str(tmp_path / "none.pkmx"),
                   "--output", str(tmp_path / "y.pkmx"))
    assert code == 4


def test_matrix_file_roundtrip_and_validation(tmp_path):
    arr = np.random.default_rng(3).standard_normal((4, 6)).astype(np.float32)
    p = tmp_path / "m.pkmx"
    save_matrix(arr.astype(np.float64), p)
    back = load_matrix(p)
    assert np.array_equal(back, arr.astype(np.float64))
    bad = tmp_path / "bad.pkmx"
    bad.write_bytes(b"XXXX" + struct.pack("<III", 1, 2, 2) + b"\x00" * 16)
    with pytest.raises(ValueError, match="not a PKMX"):
        load_matrix(bad)


def test_help_lists_documented_flags(capsys):
    parser = build_parser()
    documented = {
        "lut-build": ["--basis", "--degree", "--size", "--out"],
        "verify": ["--config"],
        "bench": ["--configs", "--versions", "--reps", "--warmups", "--csv",
                  "--roofline-json", "--seed", "--workers"],
        "train": ["--data", "--arch", "--degree", "--epochs", "--lr", "--mode",
                  "--loss", "--batch-size", "--seed", "--out", "--workers"],
        "apply": ["--coeff", "--input", "--output", "--bias-json", "--mode",
                  "--basis", "--lut-size", "--dy", "--coeff-grad", "--x-grad"],
    }
    for sub, flags in documented.items():
        with pytest.raises(SystemExit):
            parser.parse_args([sub, "--help"])
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text, (sub, flag)


def test_workers_env_default(monkeypatch):
    from polykan.cli import _default_workers

    monkeypatch.setenv("POLYKAN_WORKERS", "3")
    assert _default_workers() == 3
    monkeypatch.setenv("POLYKAN_WORKERS", "junk")
    assert _default_workers() == 1
    monkeypatch.delenv("POLYKAN_WORKERS")
    assert _default_workers() == 1
