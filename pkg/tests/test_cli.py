import json
import shutil

import pytest

from graphwords.cli import main

SMALL = ["--set", "n_seeds=8", "--set", "first_pass_k=12", "--set", "dict_size=6"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("ws")
    run = lambda *a: main(["-w", str(ws), *SMALL, *a])
    assert run("synth", "--categories", "2", "--images", "4", "--train", "3", "--keypoints", "15",
               "--dim", "8", "--seed", "3") == 0
    for cmd in ("graphs", "dict", "encode", "eval"):
        assert run(cmd) == 0
    return ws


def test_pipeline_writes_every_artifact(workspace):
    for sub in ("features", "graphs", "dicts", "sigs", "reports"):
        assert any((workspace / sub).iterdir())
    report = json.loads((workspace / "reports" / "report.json").read_text())
    assert "FUSED_0+3+6+9" in report["methods"]
    assert report["config"]["values"]["dict_size"] == 6
    assert "dict_size" in report["config"]["choice_keys"]
    header = (workspace / "reports" / "sweep.csv").read_text().splitlines()[0]
    assert header == "method,layer_set,dict_size,category,map,dataset_map"
    assert "cat00_000" in (workspace / "graphs" / "cat00_000.json").read_text()
    assert (workspace / "run.log").read_text().strip()


def test_query_output(workspace, capsys):
    capsys.readouterr()
    assert main(["-w", str(workspace), *SMALL, "query", "--image", "cat00_000", "--topk", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    rows = [line.split() for line in lines]
    assert [int(r[0]) for r in rows] == [1, 2, 3, 4, 5]
    dists = [float(r[2]) for r in rows]
    assert dists == sorted(dists)
    assert "cat00_000" not in [r[1] for r in rows]


def test_query_unknown_image(workspace, capsys):
    assert main(["-w", str(workspace), *SMALL, "query", "--image", "nope"]) == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "nope" in err


def test_stale_dictionary_refused(workspace, tmp_path, capsys):
    ws = tmp_path / "copy"
    shutil.copytree(workspace, ws)
    assert main(["-w", str(ws), *SMALL, "--set", "alpha=0.001", "encode"]) == 1
    assert "rerun dict" in capsys.readouterr().err


def test_stale_graphs_refused(workspace, tmp_path, capsys):
    ws = tmp_path / "copy"
    shutil.copytree(workspace, ws)
    assert main(["-w", str(ws), *SMALL, "--set", "n_seeds=5", "dict"]) == 1
    assert "rerun graphs" in capsys.readouterr().err


def test_missing_inputs(tmp_path, capsys):
    assert main(["-w", str(tmp_path / "empty"), "graphs"]) == 1
    assert "ingest or synth" in capsys.readouterr().err


def test_bad_override(tmp_path, capsys):
    assert main(["-w", str(tmp_path), "--set", "beta=-1", "graphs"]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_subcommand(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["-w", str(tmp_path), "train"])
    assert exc.value.code != 0


def test_sweep(workspace, tmp_path):
    ws = tmp_path / "copy"
    shutil.copytree(workspace, ws)
    assert main(["-w", str(ws), *SMALL, "sweep", "--sizes", "3,6"]) == 0
    rows = (ws / "reports" / "sweep.csv").read_text().splitlines()[1:]
    assert {r.split(",")[2] for r in rows} == {"3", "6"}
    assert (ws / "reports" / "sweep_report_3.json").is_file()


def test_ingest_round_trip(workspace, tmp_path):
    ws = tmp_path / "ingested"
    assert main(["-w", str(ws), "ingest", str(workspace / "features" / "manifest.json")]) == 0
    src = sorted(p.name for p in (workspace / "features").glob("*.jsonl"))
    assert sorted(p.name for p in (ws / "features").glob("*.jsonl")) == src
    for name in src:
        assert (ws / "features" / name).read_text() == (workspace / "features" / name).read_text()
