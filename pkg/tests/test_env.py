import logging
import os

import pytest

from contrast_homog import _config


def test_defaults(monkeypatch) -> None:
    for name in ("LOG", "SOLVER", "TOL", "MAX_ITER", "PYTHON_DOTENV_FILE"):
        monkeypatch.delenv(f"CH_{name}", raising=False)
    assert _config.LOG.get() == logging.INFO
    assert _config.SOLVER.get() == "direct"
    assert _config.TOL.get() == 1e-10
    assert _config.MAX_ITER.get() == 10_000
    assert _config.PYTHON_DOTENV_FILE.get() == ".dev.env"


def test_values_are_stripped_and_case_folded(monkeypatch) -> None:
    monkeypatch.setenv("CH_LOG", " DEBUG ")
    monkeypatch.setenv("CH_SOLVER", "CG")
    assert _config.LOG.get() == logging.DEBUG
    assert _config.SOLVER.get() == "cg"


def test_unknown_log_level(monkeypatch) -> None:
    monkeypatch.setenv("CH_LOG", "verbose")
    with pytest.raises(ValueError, match="CH_LOG:verbose"):
        _config.LOG.get()


def test_apply_log_level_sets_package_logger(monkeypatch) -> None:
    logger = logging.getLogger(_config.PACKAGE_LOGGER_NAME)
    monkeypatch.setattr(logger, "level", logger.level)
    monkeypatch.setenv("CH_LOG", "error")
    _config.apply_log_level()
    assert logger.level == logging.ERROR
    _config.apply_log_level(logging.DEBUG)
    assert logger.level == logging.DEBUG


def test_dotenv_does_not_override_environment(workdir, monkeypatch) -> None:
    (workdir / "test.env").write_text("CH_MAX_ITER=42\nCH_TOL=1e-6\n")
    monkeypatch.setenv("CH_PYTHON_DOTENV_FILE", "test.env")
    monkeypatch.setenv("CH_TOL", "1e-12")
    monkeypatch.delenv("CH_MAX_ITER", raising=False)
    monkeypatch.setenv("PROJECT_ROOT", str(workdir))
    _config._load_dotenv()
    try:
        assert _config.MAX_ITER.get() == 42
        assert _config.TOL.get() == 1e-12
    finally:
        os.environ.pop("CH_MAX_ITER", None)
