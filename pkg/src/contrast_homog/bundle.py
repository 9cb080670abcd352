import hashlib
import importlib.abc
import importlib.resources
import pathlib
import shutil
from collections.abc import Iterator
from dataclasses import dataclass
from os import PathLike

from lfp_logging import logs

"""
Run configurations bundled with contrast-homog.

The JSON files under ``contrast_homog/configs/`` ship inside the wheel and
are located with ``importlib.resources``, so ``run --config acceptance``
works the same from a wheel install and from a source checkout. A config
reference is either a path to an existing file or the stem of a bundled
config.
"""

LOG = logs.logger(__name__)

# ``importlib.resources.abc.Traversable`` only exists on 3.11+
Traversable = importlib.abc.Traversable

_BUNDLED_PACKAGE = f"{__package__}.configs"
_SUFFIX = ".json"


@dataclass(frozen=True)
class ExportReport:
    """
    Files touched by :func:`export`.

    Attributes
    ----------
    written
        Destination paths created or rewritten.
    skipped
        Destinations left alone: identical content, or divergent without ``force``.
    dry_run
        True when nothing was written.
    """

    written: list[pathlib.Path]
    skipped: list[pathlib.Path]
    dry_run: bool


def list_bundled_names() -> list[str]:
    """Sorted stems of the bundled configs."""
    return sorted(name for name, _ in _iter_bundled())


def bundled_config(name: str) -> Traversable:
    """
    Bundled config resource for ``name`` (stem, ``.json`` optional).

    Raises
    ------
    ValueError
        For unknown names.
    """
    entries = dict(_iter_bundled())
    stem = name.removesuffix(_SUFFIX)
    if stem not in entries:
        available = ", ".join(sorted(entries)) or "<none>"
        raise ValueError(f"Unknown bundled config - name:{name} available:{available}")
    return entries[stem]


def read_config(reference: PathLike | str) -> tuple[str, pathlib.Path]:
    """
    Text of a config and the directory its relative outputs resolve against.

    Existing files win over bundled names; bundled configs resolve outputs
    against the working directory.
    """
    path = pathlib.Path(reference)
    if path.is_file():
        return path.read_text(), path.parent
    resource = bundled_config(str(reference))
    LOG.debug("Using bundled config - name:%s", resource.name)
    return resource.read_text(), pathlib.Path.cwd()


def export(
    target_dir: pathlib.Path,
    *,
    names: list[str] | None = None,
    force: bool = False,
    dry_run: bool = False,
) -> ExportReport:
    """
    Copy bundled configs into ``target_dir`` for editing.

    Destinations whose content already matches are skipped; divergent ones
    are rewritten only with ``force``.
    """
    entries = dict(_iter_bundled())
    selected = {n: bundled_config(n) for n in names} if names else entries
    written: list[pathlib.Path] = []
    skipped: list[pathlib.Path] = []
    for name, resource in selected.items():
        dest = target_dir / f"{name.removesuffix(_SUFFIX)}{_SUFFIX}"
        if dest.exists() and (
            _digest(resource.read_bytes()) == _digest(dest.read_bytes()) or not force
        ):
            skipped.append(dest)
            continue
        if not dry_run:
            dest.parent.mkdir(parents=True, exist_ok=True)
            with importlib.resources.as_file(resource) as source_path:
                shutil.copyfile(source_path, dest)
        written.append(dest)
        LOG.debug("Config exported - name:%s dest:%s dry_run:%s", name, dest, dry_run)
    LOG.info(
        "Bundled configs exported - target:%s written:%s skipped:%s",
        target_dir,
        len(written),
        len(skipped),
    )
    return ExportReport(written=written, skipped=skipped, dry_run=dry_run)


def _iter_bundled() -> Iterator[tuple[str, Traversable]]:
    root = importlib.resources.files(_BUNDLED_PACKAGE)
    for child in sorted(root.iterdir(), key=lambda c: c.name):
        if child.name.startswith(("_", ".")):
            continue
        if child.is_file() and child.name.endswith(_SUFFIX):
            yield child.name.removesuffix(_SUFFIX), child


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
