import faulthandler
import functools
import logging
import os
import pathlib
import signal
import sys
import types
from collections.abc import Callable
from dataclasses import dataclass
from os import PathLike
from typing import Generic, NoReturn, TypeVar

from dotenv import load_dotenv

"""
Environment configuration loader for contrast-homog.

This module is registered via `sitecustomize-entrypoints` (see
`pyproject.toml` under `[project.entry-points.sitecustomize]`) so it is
automatically executed on Python startup. It loads environment variables from
a dotenv file and applies the ``CH_LOG`` level to the package logger tree.

The dotenv file defaults to `.dev.env` and can be overridden by setting the
`CH_PYTHON_DOTENV_FILE` environment variable. Solver defaults (`CH_SOLVER`,
`CH_TOL`, `CH_MAX_ITER`) are read lazily by :mod:`contrast_homog.fem` so a
dotenv value loaded here is honored by every solve.
"""

PYPROJECT_FILE_NAME = "pyproject.toml"
PACKAGE_LOGGER_NAME = "contrast_homog"

_T = TypeVar("_T")
_ENVAR_CONFIG_PREFIX = "CH_"

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}
_SOLVER_BACKENDS = ("direct", "cg")


@dataclass
class _EnvarConfig(Generic[_T]):
    name: str
    load_fn: Callable[[str | None], _T]

    def get(self) -> _T:
        value = os.getenv(_ENVAR_CONFIG_PREFIX + self.name, None)
        if value is not None:
            value = value.strip()
        return self.load_fn(value)


def _log_level(value: str | None) -> int:
    key = (value or "info").lower()
    if key not in _LOG_LEVELS:
        raise ValueError(f"Unknown log level - {_ENVAR_CONFIG_PREFIX}LOG:{value}")
    return _LOG_LEVELS[key]


def _solver_backend(value: str | None) -> str:
    backend = (value or "direct").lower()
    if backend not in _SOLVER_BACKENDS:
        raise ValueError(f"Unknown solver backend - {_ENVAR_CONFIG_PREFIX}SOLVER:{value}")
    return backend


PYTHON_DOTENV_FILE = _EnvarConfig[str](name="PYTHON_DOTENV_FILE", load_fn=lambda v: v or ".dev.env")
LOG = _EnvarConfig[int](name="LOG", load_fn=_log_level)
SOLVER = _EnvarConfig[str](name="SOLVER", load_fn=_solver_backend)
TOL = _EnvarConfig[float](name="TOL", load_fn=lambda v: float(v) if v else 1e-10)
MAX_ITER = _EnvarConfig[int](name="MAX_ITER", load_fn=lambda v: int(v) if v else 10_000)


@functools.cache
def load() -> None:
    _install_sigint_traceback_dump()
    _load_dotenv()
    apply_log_level()


def apply_log_level(level: int | None = None) -> None:
    """Set the level of the package logger tree, defaulting to ``CH_LOG``."""
    logging.getLogger(PACKAGE_LOGGER_NAME).setLevel(LOG.get() if level is None else level)


def _load_dotenv() -> None:
    env_file_name = PYTHON_DOTENV_FILE.get()

    seen: set[pathlib.Path] = set()

    for dir_fn in (pathlib.Path.cwd, _root_dir):
        if dir_path := dir_fn():
            dir_path = dir_path.resolve()

            if dir_path in seen:
                continue
            seen.add(dir_path)

            env_file = dir_path / env_file_name
            if env_file.is_file():
                load_dotenv(env_file, override=False)


def _dump(sig: int, frame: types.FrameType | None) -> NoReturn:
    faulthandler.dump_traceback(file=sys.stderr, all_threads=True)
    raise KeyboardInterrupt


def _install_sigint_traceback_dump() -> None:
    # signal handlers can only be installed from the main thread
    try:
        signal.signal(signal.SIGINT, _dump)
    except ValueError:
        pass


def _root_dir() -> pathlib.Path | None:
    """
    Return the project root: ``PROJECT_ROOT`` or the nearest ancestor with a
    ``pyproject.toml``.
    """
    if root_dir := _dir(os.getenv("PROJECT_ROOT")):
        return root_dir
    cur = pathlib.Path.cwd()
    while True:
        if (cur / PYPROJECT_FILE_NAME).is_file():
            return cur
        parent = cur.parent
        if parent == cur:
            return None
        cur = parent


def _dir(path: PathLike | str | None) -> pathlib.Path | None:
    if not path:
        return None
    elif isinstance(path, str):
        path = path.strip()
        if not path:
            return None
    path = pathlib.Path(path)
    return path if path.is_dir() else None
