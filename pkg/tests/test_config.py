import pytest

from lifelong_bbo.config import Config, desk_config, dump_config, load_config
from lifelong_bbo.errors import ConfigError


def test_yaml_round_trip_preserves_hash(tmp_path):
    cfg = desk_config()
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_hash_tracks_every_field():
    base = Config()
    assert base.config_hash() == Config().config_hash()
    assert base.replace(train={"alpha": 0.5}).config_hash() != base.config_hash()
    assert base.replace(guide={"p_best": 0.2}).config_hash() != base.config_hash()
    assert base.replace(eval={"decode": "sample"}).config_hash() != base.config_hash()


def test_desk_preset_file_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text("preset: desk\ntrain:\n  epochs: 3\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.train.epochs == 3 and cfg.problem.dim == 2
    (tmp_path / "p.yaml").write_text("preset: full\n")
    assert load_config(tmp_path / "p.yaml") == Config()


@pytest.mark.parametrize(
    "text",
    [
        "bogus: {}\n",
        "train:\n  alphaa: 1\n",
        "preset: huge\n",
        "- 1\n- 2\n",
        "train:\n  alpha: -1\n",
        "train:\n  reward_variant: other\n",
        "problem:\n  pop_size: 1\n",
        "problem:\n  fe_budget: 5\n",
        "task_orders:\n  0: [U, U]\n",
        "eval:\n  decode: beam\n",
    ],
)
def test_bad_configs_are_rejected(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


def test_horizon_accounts_for_initial_population():
    assert Config().problem.horizon == 499
    assert desk_config().problem.horizon == 30
