import pytest

from regimecl.config import ConfigError, ExperimentConfig, load_config, parse_config


def errors_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.errors


def test_empty_config_gets_defaults():
    cfg = parse_config("")
    assert cfg.tasks == 5 and cfg.classes_per_task == 2 and cfg.n_random_orders == 10
    assert cfg.regimes == (1, 2, 3, 4)
    assert cfg.methods == ("ewc", "si", "lwf", "gem")
    assert cfg.method_params["ewc"] == {"gamma": 0.9, "lambda": 1.0}
    assert cfg.method_params["gem"]["memory_per_task"] == 32
    assert cfg.lambda_for("ewc") == 1.0 and cfg.lambda_for("gem") == 0.0
    assert cfg.forgetting_convention == "as_written"


def test_overrides_are_applied():
    cfg = parse_config("""
tasks: 3
regimes: [2, 1]
methods: [sgd, ewc]
network: {block_widths: [8, 8]}
train: {eta: 0.1, epochs_per_task: 2, batch_size: 8}
ewc: {lambda: 5}
dataset: {kind: synthetic, dim: 4, test_fraction: 0.5}
""")
    assert cfg.regimes == (1, 2) and cfg.methods == ("sgd", "ewc")
    assert cfg.block_widths == (8, 8) and cfg.eta == 0.1
    assert cfg.lambda_for("ewc") == 5.0 and cfg.method_params["ewc"]["gamma"] == 0.9
    assert "si" not in cfg.method_params
    assert cfg.dataset.dim == 4 and cfg.dataset.test_fraction == 0.5


def test_regime_beyond_depth_is_a_range_error():
    errs = errors_of("regimes: [9]\nnetwork: {block_widths: [4, 4, 4, 4, 4, 4, 4, 4]}\n")
    assert len(errs) == 1 and "regimes[0]" in errs[0] and "[1, 8]" in errs[0]


def test_duplicates_and_unknowns():
    assert any("duplicate method" in e for e in errors_of("methods: [ewc, ewc]"))
    assert any("unknown method" in e for e in errors_of("methods: [adam]"))
    assert any("duplicate regime" in e for e in errors_of("regimes: [1, 1]"))
    assert any("unknown key" in e for e in errors_of("epochs: 3"))
    assert any("train.lr: unknown key" in e for e in errors_of("train: {lr: 0.1}"))
    assert any("duplicate key" in e for e in errors_of("tasks: 3\ntasks: 4\n"))


def test_every_problem_is_reported_at_once():
    errs = errors_of("tasks: 1\ntrain: {eta: -1}\nsi: {xi: 0}\ndataset: {test_fraction: 0}\nbogus: 1\n")
    joined = "\n".join(errs)
    for fragment in ("tasks", "train.eta", "si.xi", "dataset.test_fraction", "bogus"):
        assert fragment in joined
    assert len(errs) == 5


def test_type_errors():
    assert any("expected an integer" in e for e in errors_of("tasks: 2.5"))
    assert any("expected an integer" in e for e in errors_of("tasks: true"))
    assert any("expected a number" in e for e in errors_of("train: {eta: fast}"))
    assert errors_of("- 1\n- 2\n") == ["config must be a mapping at the top level"]
    assert errors_of("a: [")[0].startswith("invalid YAML")


def test_idx_paths_resolve_against_config_dir(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("dataset: {kind: idx, train_images: a.idx, train_labels: /abs/b.idx}\n")
    cfg = load_config(path)
    assert cfg.dataset.train_images == str(tmp_path / "a.idx")
    assert cfg.dataset.train_labels == "/abs/b.idx"
    assert any("required for idx" in e for e in errors_of("dataset: {kind: idx}"))


def test_digest_ignores_output_dir_only():
    a = parse_config("output_dir: x")
    b = parse_config("output_dir: y\nworkers: 3")
    c = parse_config("master_seed: 1")
    assert a.digest() == b.digest() != c.digest()
    assert ExperimentConfig().digest() == ExperimentConfig().digest()
