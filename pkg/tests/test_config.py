import pytest

from chromalign.config import get_settings
from chromalign.errors import ChannelNotFoundError, ChromAlignError, ParseError, TrainingError


def test_settings_defaults(monkeypatch):
    for name in ("LOG_LEVEL", "PREDICT_BATCH", "DEFAULT_SEED"):
        monkeypatch.delenv(f"CHROMALIGN_{name}", raising=False)
    settings = get_settings()
    assert settings.log_level == "INFO"
    assert settings.predict_batch == 4096
    assert settings.default_seed == 0


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("CHROMALIGN_LOG_LEVEL", "debug")
    monkeypatch.setenv("CHROMALIGN_PREDICT_BATCH", "128")
    monkeypatch.setenv("CHROMALIGN_DEFAULT_SEED", "11")
    settings = get_settings()
    assert (settings.log_level, settings.predict_batch, settings.default_seed) == ("DEBUG", 128, 11)


def test_parse_error_names_its_location():
    assert str(ParseError("not a number", row=4, column="mz")) == "not a number (row 4, column mz)"
    assert str(ParseError("empty file")) == "empty file"


def test_missing_channel_is_a_key_error():
    with pytest.raises(KeyError) as info:
        raise ChannelNotFoundError(117, [103, 110])
    assert str(info.value) == "m/z 117 not in matrix; available channels: 103, 110"
    assert isinstance(info.value, ChromAlignError)


def test_training_error_carries_the_epoch():
    error = TrainingError("loss is not finite", epoch=3)
    assert error.epoch == 3
    assert str(error) == "loss is not finite (epoch 3)"
