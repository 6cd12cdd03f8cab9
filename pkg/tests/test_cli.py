import subprocess
import sys

import pytest

from outfitrec.cli import main
from outfitrec.config import ConfigFileError, load_config

SMALL = ["--set", "synth.n_users=30", "--set", "synth.n_outfits=40", "--set", "synth.n_items=80",
         "--set", "synth.n_categories=5", "--set", "synth.interactions_per_user=6",
         "--set", "synth.heldout_outfits=15", "--set", "synth.outfit_len_max=4"]
TINY_MODEL = ["--set", "model.d=8", "--set", "model.encoder_hidden=8"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-synth", "--seed", "7", "--out", str(path)] + SMALL) == 0
    return path


@pytest.fixture(scope="module")
def checkpoint(data):
    ck = data.parent / "model.ckpt"
    args = ["train", "--data", str(data), "--out", str(ck), "--epochs", "2",
            "--set", "train.batch_com=16"] + TINY_MODEL
    assert main(args) == 0
    return ck


def test_gen_synth_is_deterministic(data, tmp_path):
    assert main(["gen-synth", "--seed", "7", "--out", str(tmp_path)] + SMALL) == 0
    for f in data.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_missing_checkpoint_exits_2(data, tmp_path, capsys):
    missing = tmp_path / "missing.ckpt"
    assert main(["eval", "--data", str(data), "--checkpoint", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["eval", "--bogus"]) == 1
    assert main([]) == 1
    assert main(["gen-synth", "--out", "x", "--set", "train.nope=1"]) == 1
    assert "nope" in capsys.readouterr().err


def test_train_zero_epochs_writes_initial_checkpoint(data, tmp_path, capsys):
    ck = tmp_path / "init.ckpt"
    assert main(["train", "--data", str(data), "--out", str(ck), "--epochs", "0"]
                + TINY_MODEL) == 0
    assert ck.exists()
    assert main(["inspect-checkpoint", "--checkpoint", str(ck)]) == 0
    out = capsys.readouterr().out
    assert "epoch\t0" in out and "config.d\t8" in out


def test_graph_stats_format(data, capsys):
    assert main(["graph-stats", "--data", str(data), "--top", "2"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 5
    for row in rows:
        cells = row.split("\t")
        assert int(cells[1]) >= 0 and len(cells) <= 4
        weights = [float(c.rsplit(":", 1)[1]) for c in cells[2:]]
        assert weights == sorted(weights, reverse=True)
        assert all(0 < w <= 1 for w in weights)


def test_eval_metrics_file(data, checkpoint, tmp_path):
    metrics = tmp_path / "m.txt"
    args = ["eval", "--data", str(data), "--checkpoint", str(checkpoint),
            "--metrics", str(metrics), "--k", "5"]
    assert main(args) == 0
    kv = dict(line.split("=") for line in metrics.read_text().splitlines())
    assert set(kv) == {"hr@5", "ndcg@5", "recall@5", "precision@5", "users"}
    assert 0 <= float(kv["ndcg@5"]) <= 1
    first = metrics.read_bytes()
    assert main(args) == 0
    assert metrics.read_bytes() == first


def test_fitb_export_import(data, checkpoint, tmp_path, capsys):
    q = tmp_path / "q.tsv"
    base = ["fitb", "--data", str(data), "--checkpoint", str(checkpoint)]
    assert main(base + ["--count", "100", "--export", str(q)]) == 0
    first = capsys.readouterr().out
    assert main(base + ["--queries", str(q)]) == 0
    assert capsys.readouterr().out == first
    assert "queries=100" in first


def test_filter_removing_everything_exits_2(data, tmp_path):
    assert main(["filter", "--data", str(data), "--out", str(tmp_path / "f"),
                 "--min-user", "1000"]) == 2


def test_split_command(data, tmp_path, capsys):
    assert main(["split", "--data", str(data), "--out", str(tmp_path)]) == 0
    assert {"train.tsv", "val.tsv", "test.tsv"} <= {p.name for p in tmp_path.iterdir()}
    assert main(["eval", "--data", str(data), "--split-dir", str(tmp_path / "none"),
                 "--checkpoint", "x"]) == 2


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# example\nseed = 4\nmodel.d = 16  # trailing comment\n\n"
                    "train.neg_resample_per_epoch = off\nsplit.train_fraction = 0.7\n")
    cfg = load_config(path, ["train.epochs=3"])
    assert cfg.model_config().d == 16 and cfg.model_config().init_seed == 4
    tc = cfg.train_config()
    assert tc.epochs == 3 and tc.rng_seed == 5 and tc.neg_resample_per_epoch is False
    assert cfg.split_spec().split_seed == 6
    assert load_config(None, cfg.to_text().splitlines()) == cfg
    for bad in ("model.init_seed = 3\n", "model.d = x\n", "nosuch.key = 1\n", "model.d 3\n",
                "model.d = 0\n"):
        path.write_text(bad)
        with pytest.raises(ConfigFileError):
            load_config(path)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "outfitrec.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "gen-synth" in out.stdout
