"""Command-line behavior: config precedence, workflows, exit codes."""

import json

import pytest

from ctcmt import cli, data, evalbench
from ctcmt.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(cli.CONFIG_ENV_VAR, raising=False)


# -- configuration -------------------------------------------------------------

def test_defaults_have_sources():
    cfg = cli.build_run_config()
    assert cfg["model.k"] == 3
    assert cfg.sources["model.k"] == "default"


def test_three_way_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("model.k = 2\ntraining.max_steps = 77\n")
    cfg = cli.build_run_config(str(conf), {"training.max_steps": 99})
    assert cfg["model.k"] == 2
    assert cfg.sources["model.k"] == f"file:{conf}"
    assert cfg["training.max_steps"] == 99
    assert cfg.sources["training.max_steps"] == "flag"
    assert cfg["model.d_model"] == 64
    assert cfg.sources["model.d_model"] == "default"


def test_env_var_supplies_config(tmp_path, monkeypatch):
    conf = tmp_path / "env.conf"
    conf.write_text("model.d_ff = 512\n")
    monkeypatch.setenv(cli.CONFIG_ENV_VAR, str(conf))
    cfg = cli.build_run_config()
    assert cfg["model.d_ff"] == 512


def test_config_file_parsing(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("# comment\nmodel.k = 4  # trailing note\n\n")
    assert cli.parse_config_file(conf) == {"model.k": 4}
    conf.write_text("model.unknown = 1\n")
    with pytest.raises(ConfigError, match="unknown setting"):
        cli.parse_config_file(conf)
    conf.write_text("model.k = not-a-number\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        cli.parse_config_file(conf)
    conf.write_text("model.k\n")
    with pytest.raises(ConfigError, match="key = value"):
        cli.parse_config_file(conf)


def test_boolean_coercion(tmp_path):
    conf = tmp_path / "b.conf"
    conf.write_text("model.split_position_encoding = false\n")
    assert cli.parse_config_file(conf) == {"model.split_position_encoding": False}
    conf.write_text("model.split_position_encoding = maybe\n")
    with pytest.raises(ConfigError):
        cli.parse_config_file(conf)


def test_describe_and_digest(tmp_path):
    a = cli.build_run_config()
    text = a.describe()
    assert "model.k = 3  # default" in text
    b = cli.build_run_config(None, {"model.k": 2})
    assert a.digest() != b.digest()
    assert a.digest() == cli.build_run_config().digest()


# -- full workflow ----------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """vocab + train via the real CLI, shared by the workflow tests."""
    root = tmp_path_factory.mktemp("cli")
    pairs = data.synthetic_pairs(120, seed=31, min_len=2, max_len=5)
    (root / "src.txt").write_text("".join(s + "\n" for s, _ in pairs))
    (root / "tgt.txt").write_text("".join(t + "\n" for _, t in pairs))

    rc = cli.main(["vocab", "--source", str(root / "src.txt"),
                   "--output", str(root / "vocab.txt")])
    assert rc == 0
    rc = cli.main([
        "train",
        "--source", str(root / "src.txt"),
        "--target", str(root / "tgt.txt"),
        "--vocab", str(root / "vocab.txt"),
        "--checkpoint", str(root / "model.ckpt"),
        "--log", str(root / "train.jsonl"),
        "--d-model", "32", "--n-heads", "2", "--d-ff", "64",
        "--enc-layers", "1", "--dec-layers", "1", "--k", "2",
        "--max-source-len", "16",
        "--max-steps", "250", "--base-lr", "3e-3", "--warmup", "60",
        "--batch-tokens", "128", "--log-every", "50",
    ])
    assert rc == 0
    return root


def test_training_log_is_jsonl(workspace):
    entries = [json.loads(line)
               for line in (workspace / "train.jsonl").read_text().splitlines()]
    assert entries[-1]["step"] == 250
    assert all("loss" in e and "lr" in e for e in entries)
    assert entries[-1]["loss"] < 0.1


def test_translate_modes_are_byte_identical(workspace, capsys):
    rc = cli.main(["translate", "--checkpoint", str(workspace / "model.ckpt"),
                   "--vocab", str(workspace / "vocab.txt"),
                   "--input", str(workspace / "src.txt"),
                   "--output", str(workspace / "lat.txt"), "--latency"])
    assert rc == 0
    rc = cli.main(["translate", "--checkpoint", str(workspace / "model.ckpt"),
                   "--vocab", str(workspace / "vocab.txt"),
                   "--input", str(workspace / "src.txt"),
                   "--output", str(workspace / "bat.txt"), "--batch", "32"])
    assert rc == 0
    capsys.readouterr()
    assert (workspace / "lat.txt").read_bytes() == (workspace / "bat.txt").read_bytes()


def test_score_command(workspace, capsys):
    rc = cli.main(["score", "--hypotheses", str(workspace / "lat.txt"),
                   "--references", str(workspace / "tgt.txt")])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("BLEU = ")
    assert float(out.split("=")[1]) > 90.0


def test_bench_report_and_compare(workspace, capsys):
    common = ["--checkpoint", str(workspace / "model.ckpt"),
              "--vocab", str(workspace / "vocab.txt"),
              "--input", str(workspace / "src.txt"), "--warmup", "8"]
    rc = cli.main(["bench", *common, "--latency",
                   "--report", str(workspace / "lat.report")])
    assert rc == 0
    rc = cli.main(["bench", *common, "--batch", "16",
                   "--report", str(workspace / "bat.report"),
                   "--hypotheses", str(workspace / "bench_hyp.txt")])
    assert rc == 0
    report = evalbench.read_report(workspace / "bat.report")
    report.validate()
    assert report.sentence_count == 112  # 120 lines minus 8 warmup
    assert (workspace / "bench_hyp.txt").read_text().count("\n") == 112
    capsys.readouterr()

    rc = cli.main(["bench", "--compare", str(workspace / "lat.report"),
                   str(workspace / "bat.report")])
    assert rc == 0
    table = capsys.readouterr().out
    assert "speedup" in table and len(table.strip().splitlines()) == 3


def test_resume_continues_from_checkpoint(workspace, capsys):
    rc = cli.main([
        "train",
        "--source", str(workspace / "src.txt"),
        "--target", str(workspace / "tgt.txt"),
        "--vocab", str(workspace / "vocab.txt"),
        "--checkpoint", str(workspace / "model.ckpt"),
        "--resume", "--max-steps", "260", "--base-lr", "3e-3", "--warmup", "60",
        "--batch-tokens", "128",
    ])
    assert rc == 0
    captured = capsys.readouterr()
    assert "resuming from step 250" in captured.err
    assert "step 260" in captured.out


def test_selfcheck_passes(capsys):
    rc = cli.main(["selfcheck"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "8/8 checks passed" in out
    assert "FAIL" not in out


# -- failure modes ------------------------------------------------------------------

def test_missing_corpus_is_exit_1(tmp_path, capsys):
    rc = cli.main(["train", "--source", str(tmp_path / "absent.txt"),
                   "--target", str(tmp_path / "absent2.txt"),
                   "--vocab", str(tmp_path / "v.txt"),
                   "--checkpoint", str(tmp_path / "m.ckpt")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "absent.txt" in err


def test_unknown_subcommand_is_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_flag_is_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["selfcheck", "--no-such-flag"])
    assert exc.value.code == 2


def test_bench_without_input_is_exit_1(workspace, capsys):
    rc = cli.main(["bench", "--checkpoint", str(workspace / "model.ckpt"),
                   "--vocab", str(workspace / "vocab.txt")])
    assert rc == 1
    assert "input" in capsys.readouterr().err
