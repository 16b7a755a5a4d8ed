"""Config parsing/validation/echo and the four command-line verbs.

The config contract under test: flat dotted keys, every field echoed (no
silent defaults), file-then-flags precedence, and hard failures on unknown
keys or invalid values. CLI verbs run end-to-end on tiny instances.
"""

import numpy as np
import pytest

from owgraph import cli
from owgraph.config import (
    FIELDS,
    SWEEP_PARAMS,
    ConfigError,
    ExperimentConfig,
    apply_pairs,
    config_echo,
    dump_config,
    load_config,
    parse_pairs,
)
from owgraph.graph import load_graph

TINY = """
sbm.class_sizes = 10,10,10
sbm.intra = 0.35
sbm.inter = 0.05
sbm.feature_dim = 6
sbm.separation = 4.0
sbm.noise = 0.8
split.known_class_fraction = 0.67
model.n_prototypes = 6
model.topk = 2
model.layers = 2
model.hidden_dim = 8
train.max_iterations = 6
train.refine_period = 3
"""


def tiny_config_file(tmp_path, extra=""):
    path = tmp_path / "exp.cfg"
    path.write_text(TINY + extra)
    return str(path)


# ------------------------------------------------------------------ parsing


def test_parse_pairs_comments_blanks_duplicates():
    pairs = parse_pairs("""
# full-line comment
run.seed = 1   # trailing comment
pseudo.eta = 0.5

run.seed = 2
""")
    assert pairs == {"run.seed": "2", "pseudo.eta": "0.5"}


def test_parse_pairs_requires_equals():
    with pytest.raises(ConfigError):
        parse_pairs("run.seed 3")


def test_apply_pairs_parses_types():
    cfg = apply_pairs(ExperimentConfig(), {
        "sbm.class_sizes": "10,20,30",
        "train.pseudo_supervision": "no",
        "refine.enabled": "1",
        "granularity.fixed": "5",
        "granularity.min": "none",
        "dataset.path": "none",
        "pseudo.gamma": "0.4",
    })
    assert cfg.sbm_class_sizes == (10, 20, 30)
    assert cfg.train_pseudo_supervision is False
    assert cfg.refine_enabled is True
    assert cfg.granularity_fixed == 5
    assert cfg.granularity_min is None
    assert cfg.dataset_path is None
    assert cfg.pseudo_gamma == 0.4


def test_apply_pairs_rejects_unknown_key_and_bad_value():
    with pytest.raises(ConfigError):
        apply_pairs(ExperimentConfig(), {"model.width": "3"})
    with pytest.raises(ConfigError):
        apply_pairs(ExperimentConfig(), {"model.layers": "three"})
    with pytest.raises(ConfigError):
        apply_pairs(ExperimentConfig(), {"refine.enabled": "maybe"})


def test_validate_requires_exactly_one_source():
    with pytest.raises(ConfigError):
        ExperimentConfig().validate()  # neither source
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset_path="d", sbm_class_sizes=(5, 5)).validate()
    ExperimentConfig(sbm_class_sizes=(5, 5)).validate()  # ok


def test_validate_rejects_bad_values():
    base = dict(sbm_class_sizes=(5, 5))
    with pytest.raises(ConfigError):
        ExperimentConfig(**base, model_activation="tanh").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**base, model_attention="cosine").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**base, model_layers=0).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**base, train_max_iterations=-1).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**base, dataset_feature_scale=0.0).validate()


def test_echo_covers_every_field_and_round_trips():
    cfg = ExperimentConfig(sbm_class_sizes=(7, 9), dataset_feature_scale=2.5,
                           granularity_min=5, train_pseudo_supervision=False)
    echo = dict(config_echo(cfg))
    assert set(echo) == set(FIELDS)  # no silent defaults
    back = apply_pairs(ExperimentConfig(), dict(parse_pairs(dump_config(cfg))))
    assert back == cfg


def test_load_config_flags_beat_file(tmp_path):
    path = tiny_config_file(tmp_path, extra="run.seed = 3\n")
    cfg = load_config(path, {"run.seed": "11", "pseudo.eta": "0.07"})
    assert cfg.run_seed == 11
    assert cfg.pseudo_eta == 0.07
    assert cfg.sbm_class_sizes == (10, 10, 10)


def test_sweep_names_map_to_real_keys():
    for key in SWEEP_PARAMS.values():
        assert key in FIELDS


# ---------------------------------------------------------------- CLI verbs


def test_cli_gen_writes_loadable_dataset(tmp_path, capsys):
    out = tmp_path / "data"
    code = cli.main(["gen", "--sbm.class_sizes", "8,8", "--sbm.intra", "0.4",
                     "--sbm.inter", "0.05", "--sbm.feature_dim", "4",
                     "--output", str(out)])
    assert code == 0
    assert "wrote 16 nodes" in capsys.readouterr().out
    g = load_graph(out)
    assert g.node_count == 16
    assert g.label_mask.all()


def test_cli_run_emits_report_and_artifacts(tmp_path, capsys):
    cfg = tiny_config_file(tmp_path)
    out = tmp_path / "run1"
    code = cli.main(["run", "--config", cfg, "--output", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "ensemble.acc_all = " in stdout
    assert "predicted_class_count = " in stdout
    for key in FIELDS:  # full config echo, no silent defaults
        assert f"{key} = " in stdout
    for name in ("report.txt", "loss_history.csv", "pseudo_labels.csv",
                 "refined_edges.csv", "checkpoint.npz"):
        assert (out / name).exists()
    # artifact report matches the stdout report
    assert (out / "report.txt").read_text().strip() == stdout.strip()


def test_cli_run_deterministic_metrics(tmp_path, capsys):
    cfg = tiny_config_file(tmp_path)
    outputs = []
    for _ in range(2):
        assert cli.main(["run", "--config", cfg]) == 0
        lines = capsys.readouterr().out.splitlines()
        outputs.append([l for l in lines if not l.startswith("wall_clock")])
    assert outputs[0] == outputs[1]


def test_cli_run_rejects_invalid_config(tmp_path, capsys):
    cfg = tiny_config_file(tmp_path, extra="model.attention = fancy\n")
    code = cli.main(["run", "--config", cfg])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_run_rejects_unknown_flag_value(tmp_path, capsys):
    cfg = tiny_config_file(tmp_path)
    code = cli.main(["run", "--config", cfg, "--model.layers", "zero"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_sweep_prints_row_per_value(tmp_path, capsys):
    cfg = tiny_config_file(tmp_path)
    code = cli.main(["sweep", "--config", cfg, "--param", "eta",
                     "--values", "0.01,0.05"])
    assert code == 0
    out = capsys.readouterr().out.splitlines()
    assert "acc_all" in out[0]
    assert len(out) == 3  # header + one row per value
    assert out[1].strip().startswith("0.01")
    assert out[2].strip().startswith("0.05")


def test_cli_eval_scores_predictions(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["gen", "--sbm.class_sizes", "6,6", "--sbm.intra", "0.5",
                     "--sbm.inter", "0.05", "--sbm.feature_dim", "4",
                     "--output", str(data)]) == 0
    capsys.readouterr()
    g = load_graph(data)
    preds = tmp_path / "preds.csv"
    rows = [f"{v},{g.labels[v] if v < 9 else 1 - g.labels[v]}"
            for v in range(g.node_count)]
    preds.write_text("\n".join(rows) + "\n")
    code = cli.main(["eval", "--predictions", str(preds), "--dataset",
                     str(data), "--known", "0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "acc_all = 0.750000" in out  # 9 of 12 kept their true class
    assert "acc_known" in out and "acc_novel" in out


def test_cli_eval_rejects_unlabeled_nodes(tmp_path, capsys):
    d = tmp_path / "data"
    d.mkdir()
    (d / "features.csv").write_text("1,0\n0,1\n")
    (d / "edges.csv").write_text("0,1\n")
    (d / "labels.csv").write_text("0,0\n")  # node 1 unlabeled
    preds = tmp_path / "p.csv"
    preds.write_text("0,0\n1,0\n")
    code = cli.main(["eval", "--predictions", str(preds), "--dataset", str(d),
                     "--known", "0"])
    assert code == 1
    assert "ground-truth" in capsys.readouterr().err
