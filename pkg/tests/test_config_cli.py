import json
import os
from pathlib import Path

import pytest

from metricrl import cli
from metricrl.config import SCHEMA, RunConfig
from metricrl.errors import ConfigError
from metricrl.tensor import atomic_write_text

GOLDEN = json.loads((Path(__file__).parent / "golden" / "metrics_headers.json").read_text())

TINY_METRIC = ["--epochs", "3", "--batches-per-epoch", "50", "--batch-size", "64", "--latent-dim", "16",
               "--hidden", "32,32"]
TINY_AGENT = ["--epochs", "2", "--batches-per-epoch", "20", "--batch-size", "32", "--hidden", "16"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def check_golden(out, verb):
    lines = (Path(out) / "metrics.csv").read_text().splitlines()
    assert lines[0] == GOLDEN[verb]["header"]
    assert len(lines) - 1 == GOLDEN[verb]["rows"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    d, t = root / "data", root / "train"
    assert run("gen-data", "--cells", 6, "--episodes", 100, "--seed", 0, "--out", d) == 0
    assert run("train", "--data", d, "--out", t, *TINY_METRIC) == 0
    return root


# --- config ------------------------------------------------------------------------

def test_train_without_data_names_flag(capsys, tmp_path):
    assert run("train", "--out", tmp_path / "x") == 1
    assert "--data" in capsys.readouterr().err


def test_no_verb_is_usage_error(capsys):
    assert run() == 1


def test_flag_beats_config_file(tmp_path, pipeline):
    ini = tmp_path / "c.ini"
    ini.write_text("[metric]\nlam = 2\nepochs = 1\nbatches_per_epoch = 5\nlatent_dim = 4\nhidden = 8\n")
    out = tmp_path / "t"
    assert run("train", "--config", ini, "--data", pipeline / "data", "--lam", 3, "--out", out) == 0
    cfg = RunConfig.from_ini_text((out / "config.ini").read_text())
    assert cfg["metric.lam"] == 3.0 and cfg["metric.epochs"] == 1


def test_set_sits_between_file_and_flags(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[agent]\ngamma = 0.5\n")
    args = cli.build_parser().parse_args(["eval", "--config", str(ini), "--set", "agent.gamma=0.7"])
    assert cli.resolve(args)["agent.gamma"] == 0.7
    args = cli.build_parser().parse_args(["eval", "--config", str(ini), "--set", "agent.gamma=0.7",
                                          "--gamma", "0.8"])
    assert cli.resolve(args)["agent.gamma"] == 0.8


def test_echoed_config_round_trips(pipeline):
    text = (pipeline / "train" / "config.ini").read_text()
    cfg = RunConfig.from_ini_text(text)
    assert cfg.to_ini() == text
    assert cfg["metric.epochs"] == 3 and cfg["metric.hidden"] == "32,32"


def test_unknown_and_malformed_keys(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[metric]\nlamda = 2\n")
    assert run("train", "--config", ini, "--data", tmp_path) == 1
    assert "metric.lamda" in capsys.readouterr().err
    ini.write_text("[metrics]\nlam = 2\n")
    assert run("train", "--config", ini, "--data", tmp_path) == 1
    ini.write_text("[metric]\nlam = two\n")
    assert run("train", "--config", ini, "--data", tmp_path) == 1
    assert "metric.lam" in capsys.readouterr().err
    assert run("eval", "--gamma", "1.0", "--out", tmp_path / "e") == 1
    assert run("eval", "--set", "nope", "--out", tmp_path / "e") == 1
    with pytest.raises(ConfigError):
        RunConfig().set("agent.nope", 1)


def test_help_lists_defaults_and_published_values(capsys):
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["train", "--help"])
    text = capsys.readouterr().out
    for key, (default, _, _) in SCHEMA["metric"].items():
        if key != "seed":
            assert "--" + key.replace("_", "-") in text
    assert "[published]" in text and "default: 128" in text


def test_threads_env_sets_jobs(monkeypatch):
    monkeypatch.setenv("METRICRL_THREADS", "3")
    assert cli.resolve(cli.build_parser().parse_args(["sweep-quality"]))["harness.jobs"] == 3
    args = cli.build_parser().parse_args(["sweep-quality", "--jobs", "2"])
    assert cli.resolve(args)["harness.jobs"] == 2


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("METRICRL_OUTPUT_ROOT", str(tmp_path))
    assert run("verify-theorem", "--fixture", "isometric-path") == 0
    assert (tmp_path / "verify-theorem" / "metrics.csv").is_file()


# --- end to end --------------------------------------------------------------------

def test_gen_data_and_train(pipeline):
    check_golden(pipeline / "data", "gen-data")
    check_golden(pipeline / "train", "train")
    assert (pipeline / "train" / "embedding.ckpt").is_file()
    assert (pipeline / "train" / "report.txt").read_text().startswith("epochs")


def test_policy_training_verbs(pipeline):
    d, ckpt = pipeline / "data", pipeline / "train" / "embedding.ckpt"
    assert run("train-actor", "--data", d, "--model", ckpt, "--out", pipeline / "actor", *TINY_AGENT) == 0
    assert run("train-bc", "--data", d, "--out", pipeline / "bc", *TINY_AGENT) == 0
    assert run("train-dqn", "--data", d, "--out", pipeline / "dqn", *TINY_AGENT) == 0
    for verb, name in (("train-actor", "actor"), ("train-bc", "bc"), ("train-dqn", "dqn")):
        check_golden(pipeline / name, verb)
        assert (pipeline / name / f"{name}.ckpt").is_file()


def test_eval_verb(pipeline, capsys):
    d, ckpt = pipeline / "data", pipeline / "train" / "embedding.ckpt"
    assert run("eval", "--data", d, "--model", ckpt, "--episodes", 50, "--out", pipeline / "ev") == 0
    check_golden(pipeline / "ev", "eval")
    assert run("eval", "--cells", 6, "--policy", "oracle", "--episodes", 50, "--out", pipeline / "evo") == 0
    assert "success rate  1.0" in capsys.readouterr().out
    bc = pipeline / "bc" / "bc.ckpt"
    if not bc.exists():
        assert run("train-bc", "--data", d, "--out", pipeline / "bc", *TINY_AGENT) == 0
    assert run("eval", "--data", d, "--policy", bc, "--episodes", 20, "--out", pipeline / "evb") == 0
    check_golden(pipeline / "evb", "eval")


def test_check_mono_verb(pipeline):
    out = pipeline / "mono"
    assert run("check-mono", "--data", pipeline / "data", "--model", pipeline / "train" / "embedding.ckpt",
               "--triples", 500, "--out", out) == 0
    check_golden(out, "check-mono")
    assert (out / "witnesses.csv").read_text().splitlines()[0] == "s1,s2,s3,d13,d23,z13,z23"


def test_verify_theorem_fixtures(tmp_path, capsys):
    assert run("verify-theorem", "--fixture", "isometric-path", "--out", tmp_path / "v") == 0
    text = capsys.readouterr().out
    assert "agreement             1.000000" in text and "violations            0 /" in text
    check_golden(tmp_path / "v", "verify-theorem")
    assert run("verify-theorem", "--fixture", "swapped-path", "--out", tmp_path / "s") == 0
    assert "agreement             0.800000" in capsys.readouterr().out


def test_sweep_quality_verb(tmp_path):
    out = tmp_path / "q"
    assert run("sweep-quality", "--cells", 6, "--tiers", "low,high", "--methods", "metricrl,bc,random",
               "--seeds", "0,1", "--episodes", 20, "--data-episodes", 40, "--triples", 200, *TINY_METRIC,
               "--policy-epochs", 1, "--policy-batches-per-epoch", 20, "--policy-hidden", 16,
               "--out", out) == 0
    check_golden(out, "sweep-quality")
    assert (out / "quality.svg").read_text().startswith("<svg")
    os.remove(out / "quality.svg")
    assert run("plot", out) == 0
    assert (out / "quality.svg").is_file()


def test_sweep_complexity_verb(tmp_path, capsys):
    out = tmp_path / "c"
    assert run("sweep-complexity", "--sizes", "4,6", "--max-updates", 1000, "--cadence", 500,
               "--methods", "metricrl,dqn", "--out", out) == 0
    check_golden(out, "sweep-complexity")
    assert "growth ratio" in capsys.readouterr().out
    assert (out / "complexity.svg").is_file()


def test_multi_goal_verb(tmp_path):
    out = tmp_path / "m"
    assert run("multi-goal", "--cells", 6, "--goals", "1:1@0.7|5:5@1.0", "--gammas", "0.5,0.99",
               "--data-episodes", 60, *TINY_METRIC, "--out", out) == 0
    check_golden(out, "multi-goal")
    assert (out / "gradient_field.csv").read_text().startswith("gamma,x,y,value,grad_x,grad_y")
    assert sorted(p.name for p in out.glob("*.svg")) == ["gradient_gamma_0.5.svg", "gradient_gamma_0.99.svg"]


def test_plot_training_run(pipeline):
    assert run("plot", pipeline / "train") == 0
    assert (pipeline / "train" / "training.svg").is_file()


def test_plot_without_metrics(tmp_path):
    assert run("plot", tmp_path) == 1


# --- run directories and errors ------------------------------------------------------

def test_existing_output_needs_force(tmp_path, capsys):
    out = tmp_path / "v"
    assert run("verify-theorem", "--fixture", "isometric-path", "--out", out) == 0
    assert run("verify-theorem", "--fixture", "isometric-path", "--out", out) == 1
    assert "--force" in capsys.readouterr().err
    assert run("verify-theorem", "--fixture", "isometric-path", "--out", out, "--force") == 0


def test_interrupted_write_leaves_nothing(tmp_path, monkeypatch):
    target = tmp_path / "metrics.csv"

    def boom(src, dst):
        raise KeyboardInterrupt
    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        atomic_write_text(target, "a,b\n1,2\n")
    assert list(tmp_path.iterdir()) == []


def test_bad_dataset_exit_2(pipeline, tmp_path, capsys):
    import shutil
    bad = tmp_path / "bad"
    shutil.copytree(pipeline / "data", bad)
    rec = bad / "records.csv"
    rec.write_text(rec.read_text().replace("0", "1", 5))
    assert run("train", "--data", bad, "--out", tmp_path / "t") == 2
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "t2") == 2


def test_missing_checkpoint_exit_1(pipeline, tmp_path):
    assert run("eval", "--data", pipeline / "data", "--model", tmp_path / "none.ckpt",
               "--out", tmp_path / "e") == 1


def test_training_error_exit_3(pipeline, tmp_path, capsys):
    with pytest.warns(RuntimeWarning):
        code = run("train", "--data", pipeline / "data", "--lr", "1e200", "--epochs", 1,
                   "--batches-per-epoch", 5, "--out", tmp_path / "t")
    assert code == 3
    assert "failing batch index" in capsys.readouterr().err
