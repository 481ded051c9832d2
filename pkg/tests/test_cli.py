"""End-to-end command line behavior: config layering, artifacts, exit codes."""

import os

import pytest

import sadsp.cli as cli
from sadsp.cli import main
from sadsp.data import load_dataset
from sadsp.errors import TrainingDivergence
from sadsp.model import ModelParams
from sadsp.trainer import load_checkpoint, save_checkpoint

FAST = {
    "num_states": 3, "num_objects": 4, "feature_dim": 6, "proto_dim": 5,
    "train_per_pair": 3, "test_seen_per_pair": 2, "test_unseen_per_pair": 2,
    "hidden": 8, "epochs": 2, "batch_size": 8,
}


def fast_args(cmd, out, **over):
    merged = {**FAST, **over}
    args = [cmd, "--out", str(out)]
    for k, v in merged.items():
        args += ["--set", f"{k}={v}"]
    return args


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert main(fast_args("train", out)) == 0
    return out / "checkpoint.sadspck"


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# --------------------------------------------------------------- config


def test_config_layering_file_then_set_then_flag(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\n\nepochs=7\nseed=3\nout_dir=ignored\n")
    parser = cli.build_parser()
    args = parser.parse_args(["train", "--config", str(cfgfile),
                              "--set", "seed=4", "--set", "epochs=1",
                              "--seed", "5", "--out", str(tmp_path / "o")])
    cfg = cli.effective_config(args)
    assert cfg["epochs"] == 1          # --set beats the file
    assert cfg["seed"] == 5            # named flag beats --set
    assert cfg["out_dir"] == str(tmp_path / "o")
    assert cfg["batch_size"] == 2      # untouched default


def test_unknown_and_badly_typed_keys_exit_usage(tmp_path, capsys):
    assert main(fast_args("gen", tmp_path / "a", warp_drive=1)) == 1
    assert "unknown config key" in capsys.readouterr().err
    assert main(fast_args("gen", tmp_path / "b", epochs="many")) == 1
    assert "wants int" in capsys.readouterr().err
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("epochs\n")
    assert main(["train", "--config", str(cfgfile)]) == 1
    assert "expected key=value" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["transmogrify"]) == 1
    assert main(["train", "--regime", "sideways"]) == 1
    err = capsys.readouterr().err
    assert "usage error" in err


def test_config_echo_round_trips(tmp_path):
    out = tmp_path / "run"
    assert main(fast_args("gen", out)) == 0
    echoed = cli.load_config_file(str(out / "effective.cfg"))
    assert echoed["num_states"] == 3
    assert echoed["epochs"] == 2
    assert set(echoed) == set(cli.CONFIG_FIELDS)


# ------------------------------------------------------------------ gen


def test_gen_writes_loadable_features_and_sidecar(tmp_path):
    out = tmp_path / "run"
    assert main(fast_args("gen", out)) == 0
    ds = load_dataset(str(out / "features.sadspf"))
    assert ds.spec.num_states == 3 and ds.spec.num_objects == 4
    assert ds.train and ds.test_seen and ds.test_unseen
    lines = (out / "pairs.txt").read_text().splitlines()
    n_seen = int(lines[0].split(":")[1])
    assert lines[0].startswith("seen_pairs:")
    assert n_seen == len(ds.spec.seen_pairs)
    seen_lines = {tuple(map(int, l.split(","))) for l in lines[1:1 + n_seen]}
    assert seen_lines == set(ds.spec.seen_pairs)
    assert f"unseen_feasible_pairs:" in lines[1 + n_seen]


def test_gen_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(fast_args("gen", a)) == 0
    assert main(fast_args("gen", b)) == 0
    assert read_bytes(a / "features.sadspf") == read_bytes(b / "features.sadspf")
    assert (a / "pairs.txt").read_text() == (b / "pairs.txt").read_text()


def test_gen_seen_pair_count_tracks_requested_fraction(tmp_path):
    out = tmp_path / "big"
    rc = main(fast_args("gen", out, num_states=16, num_objects=12,
                        feature_dim=8, seen_frac=0.43, train_per_pair=1,
                        test_seen_per_pair=1, test_unseen_per_pair=1))
    assert rc == 0
    first = (out / "pairs.txt").read_text().splitlines()[0]
    n_seen = int(first.split(":")[1])
    assert abs(n_seen - 83) <= 2       # round(0.43 * 192) = 83


# ---------------------------------------------------------------- train


def test_train_epochs_zero_equals_initialization(tmp_path):
    out = tmp_path / "run"
    assert main(fast_args("train", out, epochs=0)) == 0
    fresh = ModelParams.create(3, 4, 6, hidden=8, seed=0)
    ref = tmp_path / "ref.sadspck"
    save_checkpoint(fresh, str(ref))
    assert read_bytes(out / "checkpoint.sadspck") == read_bytes(ref)


def test_train_artifacts_and_checkpoint_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(fast_args("train", a)) == 0
    for name in ("checkpoint.sadspck", "train_log.csv", "effective.cfg"):
        assert (a / name).exists()
    assert main(fast_args("train", b)) == 0
    assert read_bytes(a / "checkpoint.sadspck") == read_bytes(b / "checkpoint.sadspck")


def test_train_fixed_trunk_keeps_trunk_at_init(tmp_path):
    out = tmp_path / "run"
    assert main(fast_args("train", out) + ["--regime", "fixed_trunk"]) == 0
    got = load_checkpoint(str(out / "checkpoint.sadspck"))
    fresh = ModelParams.create(3, 4, 6, hidden=8, seed=0)
    for name in ("f_e1", "f_e2"):
        assert got.layer(name).w.values == fresh.layer(name).w.values
        assert got.layer(name).b.values == fresh.layer(name).b.values
    assert got.layer("f_s").w.values != fresh.layer("f_s").w.values


def test_divergence_maps_to_exit_three(tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise TrainingDivergence(epoch=1, batch=2, detail="l_sp=nan")
    monkeypatch.setitem(cli.COMMANDS, "train", boom)
    assert main(fast_args("train", tmp_path / "run")) == 3
    assert "training diverged" in capsys.readouterr().err


# ------------------------------------------------- eval / ablate / sweep


def test_eval_artifacts_and_determinism(tmp_path, trained):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--checkpoint", str(trained)]
    assert main(fast_args("eval", a) + args) == 0
    assert main(fast_args("eval", b) + args) == 0
    for name in ("eval_summary.csv", "sweep_curve.csv"):
        assert read_bytes(a / name) == read_bytes(b / name)
    header, values = (a / "eval_summary.csv").read_text().splitlines()
    assert header == "best_S,best_U,best_HM,AUC"
    assert len(values.split(",")) == 4


def test_eval_gamma_one_zero_zero_equals_sp_ablation_row(tmp_path, trained):
    ev, ab = tmp_path / "ev", tmp_path / "ab"
    assert main(fast_args("eval", ev) + ["--checkpoint", str(trained),
                                         "--gamma", "1,0,0"]) == 0
    assert main(fast_args("ablate", ab) + ["--checkpoint", str(trained)]) == 0
    eval_vals = (ev / "eval_summary.csv").read_text().splitlines()[1]
    rows = (ab / "ablation.csv").read_text().splitlines()
    assert len(rows) == 13
    sp = next(r for r in rows[1:] if r.startswith("SP,"))
    assert sp.split(",", 2)[2] == eval_vals


def test_sweep_single_point_matches_eval_at_default_gamma(tmp_path, trained):
    sw, ev = tmp_path / "sw", tmp_path / "ev"
    assert main(fast_args("sweep", sw, sweep_g2="0.25", sweep_g3="0.05")
                + ["--checkpoint", str(trained)]) == 0
    assert main(fast_args("eval", ev) + ["--checkpoint", str(trained)]) == 0
    lines = (sw / "gamma_sweep.csv").read_text().splitlines()
    assert lines[0] == "g1,g2,g3,AUC,skipped,best"
    assert len(lines) == 2
    g1, g2, g3, auc, skipped, best = lines[1].split(",")
    assert (g1, g2, g3) == ("0.7", "0.25", "0.05")
    assert (skipped, best) == ("0", "1")
    eval_auc = (ev / "eval_summary.csv").read_text().splitlines()[1].split(",")[3]
    assert auc == eval_auc


def test_checkpoint_dataset_dimension_mismatch_is_data_error(tmp_path, trained, capsys):
    rc = main(fast_args("eval", tmp_path / "run", num_states=4)
              + ["--checkpoint", str(trained)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "data error" in err and "disagree" in err
    assert "|S|=3" in err and "|S|=4" in err


def test_missing_inputs(tmp_path, trained, capsys):
    assert main(fast_args("eval", tmp_path / "a")) == 1
    assert "checkpoint_path" in capsys.readouterr().err
    rc = main(fast_args("eval", tmp_path / "b")
              + ["--checkpoint", str(tmp_path / "nope.sadspck")])
    assert rc == 2
    rc = main(fast_args("train", tmp_path / "c")
              + ["--data", str(tmp_path / "nope.sadspf")])
    assert rc == 2
    assert main(fast_args("eval", tmp_path / "d", gamma="0.5,0.5,0.5")
                + ["--checkpoint", str(trained)]) == 1
    assert main(fast_args("eval", tmp_path / "e", disable="pf_q")
                + ["--checkpoint", str(trained)]) == 1


def test_train_on_generated_file_matches_synthetic(tmp_path):
    gen_out = tmp_path / "gen"
    assert main(fast_args("gen", gen_out)) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(fast_args("train", a)
                + ["--data", str(gen_out / "features.sadspf")]) == 0
    assert main(fast_args("train", b)) == 0
    assert read_bytes(a / "checkpoint.sadspck") == read_bytes(b / "checkpoint.sadspck")


# -------------------------------------------------------------- analyze


def test_analyze_writes_reports(tmp_path, trained):
    out = tmp_path / "run"
    assert main(fast_args("analyze", out) + ["--checkpoint", str(trained)]) == 0
    for name in ("attention_rows.csv", "attention_cols.csv", "attention_raw.csv",
                 "heatmap.csv", "frequency.csv", "topk.csv",
                 "prototypes.csv", "prototypes.txt", "probes.csv"):
        assert (out / name).exists(), name
    rows = (out / "attention_rows.csv").read_text().splitlines()
    assert rows[0] == ",o0,o1,o2,o3" and len(rows) == 4
    body = [float(v) for v in rows[1].split(",")[1:]]
    assert abs(sum(body) - 1.0) <= 1e-9
    probe_lines = (out / "probes.csv").read_text().splitlines()
    assert probe_lines[0] == "probe,accuracy" and len(probe_lines) == 5
    topk = (out / "topk.csv").read_text().splitlines()
    assert topk[0].startswith("kind,index,direction,space,rank")
    assert main(fast_args("analyze", tmp_path / "bad", attention_mode="psychic")
                + ["--checkpoint", str(trained)]) == 1
