import math

import pytest

from contrast_homog import names


def test_run_name_single_simple_token() -> None:
    assert names.run_name("smoke") == "smoke"


def test_run_name_joins_multiple_parts_with_hyphen() -> None:
    assert names.run_name("corrected", "rate", "type2") == "corrected-rate-type2"


def test_run_name_lowercases_and_splits_camel_case() -> None:
    assert names.run_name("Corrected Rate", "typeI") == "corrected-rate-type-i"


def test_run_name_handles_acronyms_with_trailing_word() -> None:
    """``NPSpectrum`` should split as ``NP`` + ``Spectrum``."""
    assert names.run_name("NPSpectrum") == "np-spectrum"


def test_run_name_collapses_repeated_delimiters() -> None:
    assert names.run_name("chi___inf..x") == "chi-inf-x"


def test_run_name_drops_empty_parts() -> None:
    assert names.run_name("", "cell", "  ", "---") == "cell"
    assert names.run_name() == ""


@pytest.mark.parametrize(
    ("value", "token"),
    [
        (0.125, "0p125"),
        (0.03125, "0p03125"),
        (1.0, "1"),
        (100.0, "100"),
        (0.01, "0p01"),
        (1e-3, "1em03"),
        (2.5e-5, "2p5em05"),
        (1e4, "1e04"),
    ],
)
def test_value_token(value: float, token: str) -> None:
    assert names.value_token(value) == token


@pytest.mark.parametrize("value", [0.0, -1.0, math.inf, math.nan])
def test_value_token_rejects_invalid(value: float) -> None:
    with pytest.raises(ValueError, match="value:"):
        names.value_token(value)


def test_artifact_name_orders_parameters() -> None:
    assert names.artifact_name("mesh", ".txt", eps=0.125) == "mesh-eps0p125.txt"
    assert (
        names.artifact_name("lipschitz-unmodified", ".csv", eps=0.0625, delta=1e-3)
        == "lipschitz-unmodified-eps0p0625-delta1em03.csv"
    )


def test_artifact_name_requires_kind() -> None:
    with pytest.raises(ValueError, match="kind"):
        names.artifact_name("--", ".txt")
