import json

import numpy as np
import pytest

from gpgraph.cli import EVAL_SCHEMA, GROUP_SCHEMA, build_parser, convex_hull, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--out", str(data), "--scenes", "2", "--frames", "22", "--noise", "0.01", "--seed", "4"]) == 0
    ckpt = root / "model.gpg"
    assert main(["train", "--data", str(data), "--out", str(ckpt), "--epochs", "2", "--seed", "1"]) == 0
    return root, data, ckpt


def test_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--scenes", "2", "--seed", "7", "--noise", "0.05"]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert len(list((tmp_path / "a").glob("*.groups.txt"))) == 2


def test_train_outputs(workspace):
    root, _, ckpt = workspace
    assert ckpt.read_bytes()[:4] == b"GPG1"
    sidecar = json.loads((root / "model.gpg.json").read_text())
    assert len(sidecar["loss_trace"]) == 2
    lines = (root / "model.gpg.loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 3


def test_train_is_reproducible(workspace, tmp_path):
    _, data, ckpt = workspace
    again = tmp_path / "again.gpg"
    assert main(["train", "--data", str(data), "--out", str(again), "--epochs", "2", "--seed", "1"]) == 0
    assert again.read_bytes() == ckpt.read_bytes()


def test_eval_outputs_and_jobs(workspace, tmp_path):
    _, data, ckpt = workspace
    one, two = tmp_path / "one", tmp_path / "two"
    base = ["eval", "--data", str(data), "--checkpoint", str(ckpt), "--samples", "5", "--seed", "3"]
    assert main(base + ["--out", str(one)]) == 0
    assert main(base + ["--out", str(two), "--jobs", "2"]) == 0
    assert (one / "metrics.csv").read_bytes() == (two / "metrics.csv").read_bytes()
    assert (one / "summary.json").read_bytes() == (two / "summary.json").read_bytes()
    rows = (one / "metrics.csv").read_text().splitlines()
    assert rows[0] == "window_id,metric,value"
    assert {r.split(",")[1] for r in rows[1:]} == {"ade", "fde", "col", "tcc"}
    summary = json.loads((one / "summary.json").read_text())
    assert summary["samples"] == 5 and summary["mode"] == "group" and summary["col_threshold"] == 0.2
    assert summary["windows"] * 4 == len(rows) - 1


def test_group_with_own_labels(workspace, tmp_path):
    _, data, ckpt = workspace
    out = tmp_path / "g"
    assert main(["group", "--data", str(data), "--checkpoint", str(ckpt), "--labels", str(data), "--out", str(out)]) == 0
    text = (out / "groups.txt").read_text()
    assert text.startswith("# scene_000:0\n")
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["mean"]) == {"pw_precision", "pw_recall", "gm_precision", "gm_recall"}


def test_plot_writes_svg(workspace, tmp_path):
    _, data, ckpt = workspace
    out = tmp_path / "fig.svg"
    assert main(["plot", "--data", str(data), "--checkpoint", str(ckpt), "--out", str(out), "--samples", "3"]) == 0
    svg = out.read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "stroke-dasharray" in svg and "<polyline" in svg


def test_help_documents_schemas(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--help"])
    assert exc.value.code == 0
    assert "window_id,metric,value" in capsys.readouterr().out
    assert "groups.txt" in GROUP_SCHEMA and "summary.json" in EVAL_SCHEMA


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["eval", "--data", "x"],
        ["train", "--data", "x", "--out", "y", "--supervised"],
        ["eval", "--data", "x", "--checkpoint", "c", "--out", "o", "--mode", "crowd"],
        ["synth", "--out", "o", "--min-groups", "5", "--max-groups", "2"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_files_exit_2(workspace, tmp_path, capsys):
    _, data, ckpt = workspace
    assert main(["eval", "--data", str(tmp_path / "none"), "--checkpoint", str(ckpt), "--out", str(tmp_path / "o")]) == 2
    assert str(tmp_path / "none") in capsys.readouterr().err
    assert main(["eval", "--data", str(data), "--checkpoint", str(tmp_path / "no.gpg"), "--out", str(tmp_path / "o")]) == 2


def test_malformed_data_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 0 0\n0 1 1 1\n")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.gpg"), "--epochs", "1"]) == 2
    assert "line 2" in capsys.readouterr().err


def test_overfit_through_cli(tmp_path):
    data = tmp_path / "one"
    assert main(["synth", "--out", str(data), "--scenes", "1", "--noise", "0.0", "--seed", "2"]) == 0
    ckpt = tmp_path / "m.gpg"
    assert main(["train", "--data", str(data), "--out", str(ckpt), "--epochs", "600", "--lr", "3e-3", "--schedule", "cosine"]) == 0
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["mean"]["ade"] < 0.1


def test_convex_hull():
    square = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)]
    assert sorted(convex_hull(square)) == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
    assert len(convex_hull([(0, 0), (1, 1)])) == 2


def test_parser_defaults():
    args = build_parser().parse_args(["eval", "--data", "d", "--checkpoint", "c", "--out", "o"])
    assert (args.samples, args.col_threshold, args.mode, args.jobs, args.seed) == (20, 0.2, "group", 1, 0)
