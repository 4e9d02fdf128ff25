import argparse
import json

import numpy as np
import pytest

from mskmeans.cli import build_parser, main
from mskmeans.volio import MaskVolume, VolumeGeometry, read_labels, read_mask, read_centroids_csv, write_mask


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def grid(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "grid", "--snr", "inf", "--out", tmp_path / "g.f4d",
                     "--truth-out", tmp_path / "t.f4d")
    assert code == 0
    return tmp_path


def test_noiseless_pipeline(grid, capsys):
    code, out, _ = run(capsys, "cluster", "multistage", "--in", grid / "g.f4d", "--ct", 0.7, "--ns", 3,
                       "--truth", grid / "t.f4d", "--labels-out", grid / "l.f4d",
                       "--centroids-out", grid / "c.csv", "--tree-out", grid / "tree.json",
                       "--report-out", grid / "r.json")
    assert code == 0
    report = json.loads((grid / "r.json").read_text())
    assert report["k"] == 6 and report["vs_truth"]["mean_si"] == 1.0 and report["seed"] == 0
    assert read_labels(grid / "l.f4d").k == 6
    assert read_centroids_csv(grid / "c.csv").shape == (6, 50)
    assert json.loads((grid / "g.f4d.json").read_text())["spec"]["snr"] == "inf"
    code, out, _ = run(capsys, "metrics", "msi", "--a", grid / "l.f4d", "--b", grid / "t.f4d")
    assert json.loads(out)["msi"] == 1.0


def test_single_voxel_mask(grid, capsys):
    flags = np.zeros((8, 8, 1), bool)
    flags[2, 5, 0] = True
    write_mask(MaskVolume(VolumeGeometry(8, 8, 1), flags), grid / "m.f4d")
    code, out, _ = run(capsys, "cluster", "multistage", "--in", grid / "g.f4d", "--mask", grid / "m.f4d",
                       "--labels-out", grid / "l1.f4d")
    assert code == 0 and json.loads(out)["k"] == 1
    assert read_labels(grid / "l1.f4d").labels.sum() == 1


def test_bench_predict(capsys):
    code, out, _ = run(capsys, "bench", "predict", "--algo", "hier", "--n", 100)
    assert code == 0 and out.strip() == "4950"


def test_same_seed_same_bytes(tmp_path, capsys):
    outs = []
    for tag in ("a", "b"):
        run(capsys, "--seed", 5, "synth", "grid", "--snr", 1, "--out", tmp_path / f"{tag}.f4d")
        run(capsys, "cluster", "multistage", "--seed", 5, "--threads", 2, "--in", tmp_path / f"{tag}.f4d",
            "--labels-out", tmp_path / f"{tag}.l.f4d", "--tree-out", tmp_path / f"{tag}.json")
        outs.append([(tmp_path / f"{tag}{ext}").read_bytes() for ext in (".f4d", ".l.f4d", ".json")])
    assert outs[0] == outs[1]


def test_seed_after_subcommand_overrides_global(tmp_path, capsys):
    run(capsys, "--seed", 1, "synth", "grid", "--snr", 1, "--out", tmp_path / "x.f4d", "--seed", 2)
    assert json.loads((tmp_path / "x.f4d.json").read_text())["seed"] == 2


def test_errors_exit_one(tmp_path, capsys):
    code, _, err = run(capsys, "cluster", "simple", "--in", tmp_path / "missing.f4d", "--k", 2)
    assert code == 1 and err.startswith("error:")
    code, _, err = run(capsys, "--quiet", "cluster", "simple", "--in", tmp_path / "missing.f4d", "--k", 2)
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"
    (tmp_path / "junk.f4d").write_bytes(b"garbage")
    code, _, err = run(capsys, "--quiet", "cluster", "multistage", "--in", tmp_path / "junk.f4d")
    assert code == 1 and json.loads(err)["error"] == "FormatError"
    with pytest.raises(SystemExit) as exc:
        main(["cluster", "multistage", "--in", "x", "--no-such-flag"])
    assert exc.value.code == 1
    capsys.readouterr()
    with pytest.raises(SystemExit) as exc:
        main(["--quiet", "bench", "predict", "--algo", "hier"])
    assert exc.value.code == 1
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"


LEAVES = [("synth", "grid"), ("synth", "task"), ("preprocess",), ("cluster", "multistage"),
          ("cluster", "simple"), ("cluster", "hier"), ("metrics", "msi"), ("metrics", "intra"),
          ("metrics", "overlap"), ("metrics", "random-baseline"), ("hrf", "fit"), ("hrf", "rank"),
          ("bench", "scaling"), ("bench", "table1"), ("bench", "smoothing"), ("bench", "predict")]


def leaf_parser(path):
    parser = build_parser()
    for name in path:
        sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        parser = sub.choices[name]
    return parser


@pytest.mark.parametrize("leaf", LEAVES)
def test_help_lists_every_flag_with_default(leaf, capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args([*leaf, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--seed", "--threads", "--quiet"):
        assert flag in text
    parser = leaf_parser(leaf)
    fmt = parser._get_formatter()
    for action in parser._actions:
        if action.option_strings == ["-h", "--help"]:
            continue
        assert action.help, action.option_strings
        assert action.option_strings[0] in text
        shown = fmt._get_help_string(action)
        assert "(default" in shown or "(required)" in shown, action.option_strings


def test_task_preprocess_and_hrf(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "task", "--noise", 0.3, "--out", tmp_path / "task.f4d",
                     "--truth-out", tmp_path / "resp.f4d")
    assert code == 0 and read_mask(tmp_path / "resp.f4d").count == 16
    code, _, _ = run(capsys, "preprocess", "--in", tmp_path / "task.f4d", "--mask-threshold", -1e9,
                     "--smooth-fwhm", 3, "--out", tmp_path / "pp.f4d", "--mask-out", tmp_path / "pm.f4d")
    assert code == 0 and read_mask(tmp_path / "pm.f4d").count == 64
    run(capsys, "cluster", "multistage", "--in", tmp_path / "task.f4d", "--labels-out", tmp_path / "l.f4d",
        "--tree-out", tmp_path / "tree.json")
    code, out, _ = run(capsys, "hrf", "rank", "--labels", tmp_path / "l.f4d", "--data", tmp_path / "task.f4d",
                       "--tree", tmp_path / "tree.json", "--onsets", tmp_path / "task.f4d.json",
                       "--out", tmp_path / "rank.json")
    assert code == 0 and isinstance(json.loads(out)["secondary"], list)
    code, _, _ = run(capsys, "hrf", "fit", "--labels", tmp_path / "l.f4d", "--data", tmp_path / "task.f4d",
                     "--onsets", "15,45,75,105,135", "--out", tmp_path / "fir.csv")
    lines = (tmp_path / "fir.csv").read_text().splitlines()
    assert code == 0 and lines[0] == "cluster,lag,beta"
    code, _, _ = run(capsys, "metrics", "overlap", "--labels", tmp_path / "l.f4d", "--gm", tmp_path / "resp.f4d",
                     "--wm", tmp_path / "pm.f4d", "--out", tmp_path / "ov.csv")
    assert code == 0
    code, out, _ = run(capsys, "metrics", "intra", "--labels", tmp_path / "l.f4d", "--data", tmp_path / "task.f4d")
    assert code == 0 and 0 < json.loads(out)["grand_mean"] <= 1


def test_bench_commands(tmp_path, capsys):
    code, _, _ = run(capsys, "bench", "table1", "--ct-grid", "0.5:0.7:0.1", "--ns-grid", "2,3",
                     "--out", tmp_path / "t1.csv")
    lines = (tmp_path / "t1.csv").read_text().splitlines()
    assert code == 0 and lines[0] == "ct,ns2,ns3" and len(lines) == 4
    code, _, _ = run(capsys, "bench", "smoothing", "--fwhm-grid", "0,1", "--out", tmp_path / "sm.csv")
    assert code == 0 and len((tmp_path / "sm.csv").read_text().splitlines()) == 3
    code, out, _ = run(capsys, "bench", "scaling", "--sizes", "20,40,80,160", "--repeats", 1, "--t", 12,
                       "--out", tmp_path / "sc.csv")
    assert code == 0
    assert (tmp_path / "sc.csv").read_text().splitlines()[0] == "algorithm,n,mean_seconds,distance_ops"
    assert set(json.loads((tmp_path / "sc.csv.json").read_text())["slopes"]) == {"simple", "multistage", "hier"}
    code, out, _ = run(capsys, "metrics", "random-baseline", "--k", 4, "--trials", 3, "--shape", "4,4,4",
                       "--out", tmp_path / "rb.json")
    assert code == 0 and len(json.loads((tmp_path / "rb.json").read_text())["msi"]) == 3
