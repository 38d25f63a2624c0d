import pytest

from config import Config, RunConfig, _env_workers
from errors import ConfigError


def test_config_defaults_validate():
    assert Config.validate() is True


def test_config_collects_every_problem(monkeypatch):
    monkeypatch.setattr(Config, "WORKERS", 0)
    monkeypatch.setattr(Config, "LOG_FORMAT", "xml")
    with pytest.raises(ConfigError) as excinfo:
        Config.validate()
    message = str(excinfo.value)
    assert "AUGMENT_WORKERS" in message and "AUGMENT_LOG_FORMAT" in message


def test_run_config_validation(tmp_path, demo_manifest_path):
    ok = RunConfig(manifest_path=demo_manifest_path, out_dir=tmp_path / "new" / "out", count=3)
    assert ok.validate() is True

    bad = RunConfig(manifest_path=tmp_path / "missing.json", out_dir=tmp_path, count=0,
                    mode="nope", mix_ratio=1.5, workers=0)
    with pytest.raises(ConfigError) as excinfo:
        bad.validate()
    message = str(excinfo.value)
    for fragment in ("--count", "--mode", "--mix-ratio", "--workers", "Manifest not found"):
        assert fragment in message


def test_output_path_must_be_a_directory(tmp_path, demo_manifest_path):
    target = tmp_path / "file.txt"
    target.write_text("x")
    with pytest.raises(ConfigError):
        RunConfig(manifest_path=demo_manifest_path, out_dir=target, count=1).validate()


def test_zero_workers_from_environment_is_reported(monkeypatch):
    monkeypatch.setenv("AUGMENT_WORKERS", "0")
    assert _env_workers() == 0
    monkeypatch.setattr(Config, "WORKERS", _env_workers())
    with pytest.raises(ConfigError) as excinfo:
        Config.validate()
    assert "AUGMENT_WORKERS must be >= 1" in str(excinfo.value)

    monkeypatch.delenv("AUGMENT_WORKERS")
    assert _env_workers() == 1
