"""CLI subcommands exercised in-process through main()."""

import os

import numpy as np
import pytest

from fedfairprompt.cli import main
from fedfairprompt.data import load_embeddings

_TINY = [
    "--rounds", "1", "--clients", "2",
]
_TINY_DATA = [
    # small synthetic splits keep each invocation around a second
]


def _tiny_flags(out):
    return [
        "--rounds", "1", "--clients", "2", "--out", str(out),
    ]


def _cfg_file(tmp_path, **extra):
    lines = {"n_train": 160, "n_test": 48, "n_val": 48, "refine_steps": 2}
    lines.update(extra)
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in lines.items()))
    return str(path)


def test_run_writes_outputs_and_exits_zero(tmp_path, capsys):
    rc = main(["run", "--config", _cfg_file(tmp_path), "--method",
               "fedavg_baseline", *_tiny_flags(tmp_path / "out")])
    out = capsys.readouterr().out
    assert rc == 0
    assert (tmp_path / "out" / "rounds.csv").exists()
    assert "phi_eq:" in out
    assert "a_b:" in out


def test_bad_flag_value_exits_two(tmp_path, capsys):
    rc = main(["run", "--alpha", "-1", "--out", str(tmp_path / "x")])
    err = capsys.readouterr().err
    assert rc == 2
    assert "alpha" in err


def test_unknown_config_key_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate=0.5\n")
    rc = main(["run", "--config", str(path)])
    err = capsys.readouterr().err
    assert rc == 2
    assert "learning_rate" in err


def test_failed_run_exits_one(tmp_path, capsys):
    # lr this size overflows the layernorm variance on the next forward
    rc = main(["run", "--config", _cfg_file(tmp_path, lr=1e200),
               "--method", "fedavg_baseline", *_tiny_flags(tmp_path / "out")])
    captured = capsys.readouterr()
    assert rc == 1
    assert "failed" in captured.err


def test_gen_data_roundtrips_through_run(tmp_path, capsys):
    data_dir = tmp_path / "emb"
    rc = main(["gen-data", "--config", _cfg_file(tmp_path),
               "--out", str(data_dir)])
    assert rc == 0
    for name in ("train", "val", "test"):
        ds = load_embeddings(str(data_dir / f"{name}.emb"))
        assert ds.kind == "features"
        assert ds.features.shape[1] == 1
    assert load_embeddings(str(data_dir / "train.emb")).features.shape[0] == 160

    cfg = _cfg_file(tmp_path, data_dir=str(data_dir))
    rc = main(["run", "--config", cfg, "--method", "fedavg_baseline",
               *_tiny_flags(tmp_path / "out2")])
    assert rc == 0
    assert (tmp_path / "out2" / "report.json").exists()


def test_gen_data_balances_eval_splits(tmp_path):
    data_dir = tmp_path / "emb"
    main(["gen-data", "--config", _cfg_file(tmp_path), "--out", str(data_dir)])
    test_ds = load_embeddings(str(data_dir / "test.emb"))
    for y in (0, 1):
        for g in (0, 1):
            cell = np.sum((test_ds.labels == y) & (test_ds.groups == g))
            assert cell == 12  # 48 / 4


def test_report_prints_finished_summary(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", _cfg_file(tmp_path), "--method",
          "fedavg_baseline", *_tiny_flags(out)])
    capsys.readouterr()
    rc = main(["report", "--out", str(out)])
    printed = capsys.readouterr().out
    assert rc == 0
    assert "Federation run summary" in printed


def test_report_missing_dir_exits_two(tmp_path, capsys):
    rc = main(["report", "--out", str(tmp_path / "nope")])
    assert rc == 2
    assert "report.json" in capsys.readouterr().err


def test_sweep_axis_prints_comparison_table(tmp_path, capsys):
    rc = main(["sweep", "--config", _cfg_file(tmp_path), "--method",
               "fedavg_baseline", "--axis", "clients", "--values", "2,3",
               "--replicates", "1", *_tiny_flags(tmp_path / "sw")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "clients=2" in out and "clients=3" in out
    assert "phi_eq" in out


def test_sweep_needs_exactly_one_mode(tmp_path, capsys):
    rc = main(["sweep", "--out", str(tmp_path)])
    assert rc == 2
    assert "exactly one" in capsys.readouterr().err


def test_sweep_rejects_unknown_preset(tmp_path):
    with pytest.raises(SystemExit):
        main(["sweep", "--preset", "table9", "--out", str(tmp_path)])
