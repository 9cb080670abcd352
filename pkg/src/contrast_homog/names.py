import math
import re

"""
File-name helpers for run artifacts.

Run names are tokenized like identifiers: runs of non-alphanumeric
characters split first, then camelCase boundaries, and the lowercased tokens
are joined with ``-``. Parameter values become filesystem-safe tokens such
as ``0p125`` or ``1em03``, so artifact names sort and compare without
locale or float-format surprises.
"""

_NON_ALNUM_SPLIT = re.compile(r"[^a-zA-Z0-9]+")
_CAMEL_CASE_SPLIT = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def run_name(*parts: str) -> str:
    """
    Canonical run name, e.g. ``run_name("Corrected Rate", "typeI") == "corrected-rate-type-i"``.

    Returns ``""`` when no part holds an alphanumeric character.
    """
    tokens = []
    for part in parts:
        for piece in _NON_ALNUM_SPLIT.split(part or ""):
            tokens.extend(t for t in _CAMEL_CASE_SPLIT.split(piece) if t)
    return "-".join(tokens).lower()


def value_token(value: float) -> str:
    """
    Filesystem-safe token for a parameter value.

    Values in ``[1e-2, 1e4)`` keep their decimal form with ``.`` replaced by
    ``p``; others use a fixed three-digit mantissa and exponent, with ``m``
    marking a negative exponent.
    """
    if not math.isfinite(value) or value <= 0.0:
        raise ValueError(f"Parameter token needs a positive finite value - value:{value}")
    if 1e-2 <= value < 1e4:
        text = f"{value:.6f}".rstrip("0").rstrip(".")
        return text.replace(".", "p")
    mantissa, exponent = f"{value:.2e}".split("e")
    mantissa = mantissa.rstrip("0").rstrip(".").replace(".", "p")
    sign = "m" if exponent.startswith("-") else ""
    return f"{mantissa}e{sign}{int(exponent.lstrip('+-')):02d}"


def artifact_name(kind: str, suffix: str, **parameters: float) -> str:
    """
    ``<kind>-<key><token>...<suffix>`` with parameters in keyword order.

    ``artifact_name("mesh", ".txt", eps=0.125) == "mesh-eps0p125.txt"``.
    """
    stem = run_name(kind)
    if not stem:
        raise ValueError(f"Artifact kind has no alphanumeric characters - kind:{kind!r}")
    tokens = [f"{run_name(key).replace('-', '')}{value_token(v)}" for key, v in parameters.items()]
    return "-".join([stem, *tokens]) + suffix
