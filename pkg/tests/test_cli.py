import re

import numpy as np
import pytest
from click.testing import CliRunner

from kdcontrast.cli import cli, error_line
from kdcontrast.teacher_store import Emb1Codec

SMALL = ["--set", "batch_size=4", "--set", "hidden_dim=8", "--set", "grounded_dim=4", "--set", "eval_every=5"]


@pytest.fixture
def runner():
    return CliRunner()


def _data_args(files):
    return [
        "--text-features", str(files["text"]),
        "--visual-features", str(files["visual"]),
        "--manifest", str(files["manifest"]),
        "--sts", str(files["sts"]),
    ]


def _train(runner, files, out, *extra):
    return runner.invoke(cli, ["train", *_data_args(files), "--out", str(out), *SMALL, *extra])


def test_error_line():
    assert error_line("ConfigError", 1, "unknown key\n'x'") == "error | kind=ConfigError | exit=1 | message=unknown key 'x'"


def test_train_zero_steps(runner, tiny_files, tmp_path):
    result = _train(runner, tiny_files, tmp_path / "run", "--set", "steps=0")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "run" / "history_steps.csv").read_text() == "step,branch,loss\n"
    assert (tmp_path / "run" / "history_eval.csv").read_text() == "step,spearman,alignment,uniformity\n"
    assert (tmp_path / "run" / "checkpoint.bin").exists()


def test_train_is_reproducible(runner, tiny_files, tmp_path):
    assert _train(runner, tiny_files, tmp_path / "a", "--set", "steps=12").exit_code == 0
    assert _train(runner, tiny_files, tmp_path / "b", "--set", "steps=12").exit_code == 0
    for name in ("history_steps.csv", "history_eval.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = (tmp_path / "a" / "history_steps.csv").read_text().splitlines()
    assert len(lines) == 13
    assert lines[2].startswith("2,multimodal,")


def test_config_file_matches_overrides(runner, tiny_files, tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("steps = 6\nmargin = 0.2\nseed = 11\n", encoding="utf-8")
    from_file = _train(runner, tiny_files, tmp_path / "file", "--config", str(config))
    from_set = _train(runner, tiny_files, tmp_path / "set", "--set", "steps=6", "--set", "margin=0.2", "--seed", "11")
    assert from_file.exit_code == 0 and from_set.exit_code == 0
    for name in ("history_steps.csv", "history_eval.csv"):
        assert (tmp_path / "file" / name).read_bytes() == (tmp_path / "set" / name).read_bytes()


def test_eval_prints_metrics(runner, tiny_files, tmp_path):
    assert _train(runner, tiny_files, tmp_path / "run", "--set", "steps=5").exit_code == 0
    result = runner.invoke(
        cli, ["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.bin"), "--sts", str(tiny_files["sts"])]
    )
    assert result.exit_code == 0, result.output
    assert re.search(r"spearman=\S+ alignment=\S+ uniformity=\S+", result.output)


def test_stats_writes_csvs(runner, tiny_files, tmp_path):
    out = tmp_path / "stats"
    result = runner.invoke(cli, [
        "stats", "--text-features", str(tiny_files["text"]), "--visual-features", str(tiny_files["visual"]),
        "--manifest", str(tiny_files["manifest"]), "--bins", "5", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    histogram = (out / "histogram_tv.csv").read_text().splitlines()
    assert histogram[0] == "bin_lo,bin_hi,count"
    assert len(histogram) == 6
    assert sum(int(line.split(",")[2]) for line in histogram[1:]) == 12
    ranks = (out / "caption_rank.csv").read_text().splitlines()
    assert ranks[0] == "image_id,max_rank"
    assert [line.split(",")[0] for line in ranks[1:]] == ["i0", "i1", "i2", "i3"]


def test_gradcheck_passes(runner):
    result = runner.invoke(cli, ["gradcheck", "--cases", "2"])
    assert result.exit_code == 0, result.output
    assert "objective,slot,max_rel_err,pass" in result.output
    assert ",false" not in result.output


def test_gradcheck_rejects_epsilon(runner):
    result = runner.invoke(cli, ["gradcheck", "--cases", "1", "--epsilon", "0.5"])
    assert result.exit_code == 1


def test_export_views(runner, tiny_files, tmp_path):
    assert _train(runner, tiny_files, tmp_path / "run", "--set", "steps=2").exit_code == 0
    out = tmp_path / "vectors.emb"
    result = runner.invoke(cli, [
        "export", "--checkpoint", str(tmp_path / "run" / "checkpoint.bin"), "--out", str(out), "--views", "2",
    ])
    assert result.exit_code == 0, result.output
    ids, matrix, _ = Emb1Codec.decode(out.read_bytes())
    sentences = 8 + 4
    assert matrix.shape == (3 * sentences, 8)
    assert ids[sentences] == ids[0] + "#1"


def test_sweep(runner, tiny_files, tmp_path):
    out = tmp_path / "sweep"
    result = runner.invoke(cli, [
        "sweep", *_data_args(tiny_files), *SMALL, "--set", "steps=5", "--margins", "0.0,0.1", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "margin,spearman"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "0.1"]
    bad = runner.invoke(cli, ["sweep", *_data_args(tiny_files), "--margins", "a,b", "--out", str(out)])
    assert bad.exit_code == 1


def test_synth(runner, tmp_path):
    result = runner.invoke(cli, ["synth", "--out", str(tmp_path / "data"), "--concepts", "4"])
    assert result.exit_code == 0, result.output
    for name in ("text.emb", "visual.emb", "manifest.json", "dev.tsv"):
        assert (tmp_path / "data" / name).exists()


def test_unknown_key_exits_1(runner, tiny_files, tmp_path):
    result = _train(runner, tiny_files, tmp_path / "run", "--set", "learning_rat=0.1")
    assert result.exit_code == 1
    assert "error | kind=ConfigError | exit=1" in result.output


def test_malformed_file_exits_2(runner, tiny_files, tmp_path):
    tiny_files["text"].write_bytes(b"EMB1")
    result = _train(runner, tiny_files, tmp_path / "run")
    assert result.exit_code == 2
    assert "kind=MalformedFile" in result.output


def test_missing_option_exits_1(runner):
    assert runner.invoke(cli, ["train"]).exit_code == 1


def test_negative_seed_exits_1(runner, tiny_files, tmp_path):
    result = _train(runner, tiny_files, tmp_path / "run", "--seed", "-1")
    assert result.exit_code == 1
    assert "error | kind=ConfigError | exit=1" in result.output
    assert isinstance(result.exception, SystemExit)


def test_duplicate_feature_id_exits_2(runner, tiny_files, tmp_path):
    tiny_files["visual"].write_bytes(Emb1Codec.encode(["i0", "i0"], np.eye(2)))
    result = _train(runner, tiny_files, tmp_path / "run")
    assert result.exit_code == 2
    assert "error | kind=DuplicateId | exit=2" in result.output
