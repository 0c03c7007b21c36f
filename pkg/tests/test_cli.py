import pytest

from app.cli import EXIT_ERROR, EXIT_OK, build_parser, main
from app.services.datasets import load_edge_list, save_edge_list
from app.services.graphs import Graph

TINY_CONFIG = """\
SWINGNN_MODEL__PATCH_SIZE=1
SWINGNN_MODEL__WINDOW_SIZE=2
SWINGNN_MODEL__TOKEN_DIM=8
SWINGNN_MODEL__HEADS=[1,2]
SWINGNN_MODEL__DOWN_LAYERS=[1,1]
SWINGNN_MODEL__UP_LAYERS=[1,1]
SWINGNN_EDM__NUM_STEPS=4
SWINGNN_DATASET__KIND=grid
SWINGNN_DATASET__COUNT=4
SWINGNN_DATASET__ROWS_MIN=2
SWINGNN_DATASET__ROWS_MAX=2
SWINGNN_DATASET__COLS_MIN=2
SWINGNN_DATASET__COLS_MAX=3
SWINGNN_TRAIN__EPOCHS=1
SWINGNN_TRAIN__BATCH_SIZE=4
"""


def parse_fields(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.env"
    path.write_text(TINY_CONFIG)
    return path


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_verify_theory(capsys):
    assert main(["verify-theory", "--group", "counterexamples", "--group", "gmm"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "check=case1_tv_star value=29/16 expected=29/16 status=pass" in out
    assert out.strip().splitlines()[-3:] == ["summary=pass", f"checks={out.count('check=')}", "failed=0"]


def test_train_then_sample(tiny_config, tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(run_dir)]) == EXIT_OK
    fields = parse_fields(capsys.readouterr().out)
    assert fields["epochs"] == "1"
    assert fields["checkpoint"] == str(run_dir / "checkpoint.pt")

    assert main(["sample", "--ckpt", fields["checkpoint"], "--count", "2", "--seed", "1"]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("n ")
    assert sum(line.startswith("n ") for line in text.splitlines()) == 2

    out_file = tmp_path / "samples.txt"
    assert main(["sample", "--ckpt", fields["checkpoint"], "--count", "3", "--permute", "--out", str(out_file)]) == EXIT_OK
    assert parse_fields(capsys.readouterr().out)["graphs"] == "3"
    assert len(load_edge_list(out_file)) == 3


def test_eval_reports_mmd_and_recall(tmp_path, capsys):
    graphs = [Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)]), Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])]
    generated = save_edge_list(graphs, tmp_path / "gen.txt")
    reference = save_edge_list(graphs, tmp_path / "ref.txt")
    assert main(["eval", "--generated", str(generated), "--reference", str(reference)]) == EXIT_OK
    fields = parse_fields(capsys.readouterr().out)
    assert set(fields) == {"degree_mmd", "clustering_mmd", "orbit_mmd", "recall"}
    assert float(fields["recall"]) == 1.0
    assert float(fields["degree_mmd"]) == pytest.approx(0.0, abs=1e-12)


def test_missing_file_is_a_categorized_error(tmp_path, capsys):
    code = main(["eval", "--generated", str(tmp_path / "a.txt"), "--reference", str(tmp_path / "b.txt")])
    assert code == EXIT_ERROR
    assert capsys.readouterr().err.startswith("error category=invalid_input message=")


def test_bad_config_is_a_categorized_error(tmp_path, capsys):
    bad = tmp_path / "bad.env"
    bad.write_text("SWINGNN_TRAIN__LR=-1\n")
    assert main(["train", "--config", str(bad)]) == EXIT_ERROR
    assert "error category=config" in capsys.readouterr().err


def test_parse_error_category(tmp_path, capsys):
    broken = tmp_path / "broken.txt"
    broken.write_text("n 2\n0 5\n")
    assert main(["eval", "--generated", str(broken), "--reference", str(broken)]) == EXIT_ERROR
    assert "error category=parse_error" in capsys.readouterr().err


def test_eval_prints_a_metric_table(tmp_path, capsys):
    graphs = [Graph.from_edges(3, [(0, 1), (1, 2)])]
    generated = save_edge_list(graphs, tmp_path / "gen.txt")
    assert main(["eval", "--generated", str(generated), "--reference", str(generated)]) == EXIT_OK
    out = capsys.readouterr().out
    table, _, machine = out.partition("\n\n")
    assert table.split()[:2] == ["metric", "value"]
    for name in ("degree_mmd", "clustering_mmd", "orbit_mmd", "recall"):
        assert any(line.split()[0] == name for line in table.splitlines()[1:])
        assert f"{name}=" in machine
