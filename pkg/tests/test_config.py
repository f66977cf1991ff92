import pytest

from plaqueseg.config import ConfigError, TrainConfig, apply_overrides, load_config, parse_text, to_mapping
from plaqueseg.losses import LossKind


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.loss, cfg.folds) == (0.001, 100, 2, LossKind.dice, 10)
    assert cfg.postprocess.area_ratio == 5.0


def test_text_round_trip(tmp_path):
    cfg = apply_overrides(TrainConfig(), {"epochs": "30", "model.base_channels": "8", "loss": "ssim",
                                          "model.enable_se": "false", "postprocess.area_ratio": "4.5"})
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    back = load_config(path)
    assert back == cfg
    assert to_mapping(back) == to_mapping(cfg)


def test_comments_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# desk scale\nepochs = 3   # short\n\nmodel.input_size = 64x64\n")
    cfg = load_config(path, ["epochs=5", "postprocess.kernel_size=5"])
    assert cfg.epochs == 5 and cfg.model.input_size == (64, 64)
    assert cfg.postprocess.element.size == 5


@pytest.mark.parametrize("override", ["epochs=0", "learning_rate=-1", "nonsense=1", "model.bogus=1",
                                      "postprocess.shape=disk", "epochs=abc", "loss=focal", "model.base_channels=3",
                                      "postprocess.area_ratio=0.5", "noequals"])
def test_bad_values_rejected(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_malformed_line():
    with pytest.raises(ConfigError):
        parse_text("epochs 3\n")
