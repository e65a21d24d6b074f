import struct

import numpy as np
import pytest

from gmc import analysis
from gmc.bandit import BanditConfig, run_bandit
from gmc.cli import (EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, ConfigError, load_config, main,
                     parse_seeds, validate)
from gmc.datasets import SyntheticSpec, generate_synthetic

TINY = """
[experiment]
track = bandit
condition = noise
methods = gmc, uniform
seeds = 0..1

[bandit]
epochs = 2
batches_per_epoch = 3
batch_size = 16
eval_per_arm = 5
classifier_hidden = (16,)
actor_hidden = (8,)

[synthetic]
input_dim = 8
samples_per_class = 10
"""

TINY_GRID = """
[experiment]
track = gridworld
condition = doornoise
methods = ppo, icm_gmc
seeds = 0..1

[gridworld]
size = 5

[ppo]
total_steps = 512
rollout = 256
n_envs = 4
hidden = (16,)

[icm]
hidden = 16
feature_dim = 8

[gmc_rl]
hidden = 16
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


def test_parse_seeds():
    assert parse_seeds("0..4") == (0, 1, 2, 3, 4)
    assert parse_seeds("3") == (3,)
    assert parse_seeds("1, 5,7") == (1, 5, 7)
    with pytest.raises(ConfigError):
        parse_seeds("4..1")
    with pytest.raises(ConfigError):
        parse_seeds("a..b")


def test_default_config_is_valid():
    assert validate(load_config(None)) == []


def test_validate_rejections(tmp_path, tiny):
    cfg = load_config(tiny)
    cfg.condition = "curriculum"
    cfg.bandit["action_space"] = "per_group"
    assert any("action space" in p for p in validate(cfg))
    cfg = load_config(tiny)
    cfg.bandit["gmc_beta0"] = 1.5
    assert validate(cfg)
    cfg = load_config(tiny)
    cfg.condition = "doornoise"
    assert validate(cfg)
    bad = tmp_path / "bad.ini"
    bad.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_cli_exit_codes(tmp_path, tiny, capsys):
    assert main(["validate", "--config", str(tiny)]) == 0
    assert main(["validate", "--config", str(tiny), "--condition", "doornoise"]) == EXIT_USAGE
    assert main(["run", "--config", str(tiny), "--method", "bogus"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE


def test_cli_data_format_error(tmp_path):
    img, lab = tmp_path / "i", tmp_path / "l"
    img.write_bytes(struct.pack(">IIII", 0x999, 1, 28, 28) + bytes(784))
    lab.write_bytes(struct.pack(">II", 0x801, 1) + bytes(1))
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.replace(
        "seeds = 0..1", f"seeds = 0..1\ndataset = mnist\nmnist_images = {img}\nmnist_labels = {lab}"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_numerical_abort(tmp_path, tiny):
    out = tmp_path / "o"
    # an infinite learning rate turns the classifier's weights non-finite
    cfg = tmp_path / "nan.ini"
    cfg.write_text(TINY.replace("epochs = 2", "epochs = 2\nclassifier_lr = 1e308"))
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_NUMERIC
    assert (out / "diagnostic.txt").exists()


def test_cli_run_outputs_and_determinism(tmp_path, tiny):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(tiny), "--out", str(a)]) == 0
    assert main(["run", "--config", str(tiny), "--out", str(b)]) == 0
    for name in ("metrics.csv", "summary.csv", "ttest.csv", "summary_normalized.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    runs = analysis.read_bandit_csv(a / "metrics.csv")
    assert len(runs) == 4 and all(r.test_loss.shape == (2, 4) for r in runs)
    normed = {r.method: r for r in analysis.read_summary_csv(a / "summary_normalized.csv")}
    assert normed["uniform"].mean_auc == 1.0
    assert len(analysis.read_ttest_csv(a / "ttest.csv")) == 1
    assert main(["summarize", "--out", str(a)]) == 0


def test_seed_isolation(tmp_path, tiny):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(tiny), "--out", str(a), "--method", "gmc"])
    main(["run", "--config", str(tiny), "--out", str(b), "--method", "gmc", "--seeds", "1"])
    assert (a / "runs" / "noise_gmc_1.csv").read_bytes() == \
        (b / "runs" / "noise_gmc_1.csv").read_bytes()


def test_cli_gridworld(tmp_path):
    cfg = tmp_path / "g.ini"
    cfg.write_text(TINY_GRID)
    out = tmp_path / "g"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("condition,rollout,seed,method")
    assert len(rows) == 1 + 2 * 2 * 2
    assert "doornoise,icm_gmc" in (out / "summary.csv").read_text()


def test_bandit_run_shapes():
    data = generate_synthetic(SyntheticSpec(input_dim=8, samples_per_class=10))
    for mode, method in (("curriculum", "deltaloss"), ("noise", "gmc_cosine"),
                         ("noise", "normlast"), ("curriculum", "curiosity")):
        cfg = BanditConfig(mode=mode, method=method, epochs=2, batches_per_epoch=3, batch_size=8,
                           classifier_hidden=(8,), actor_hidden=(8,), eval_per_arm=3)
        run = run_bandit(cfg, data)
        assert run.test_loss.shape == (2, 4)
        assert np.all(run.visit_counts.sum(1) == 24)
        assert np.all(np.isfinite(run.test_loss))
