import pytest

import errors


def test_exit_codes_follow_the_error_family():
    """Validation errors exit with 2, numerical failures with 3."""
    assert errors.ConfigError.exit_code == 2
    assert errors.ManifoldError.exit_code == 2
    assert errors.InvalidOrder.exit_code == 2
    assert errors.SingularSystem.exit_code == 3
    assert errors.NoConvergence.exit_code == 3
    assert errors.VortexNotFound.exit_code == 3


def test_errors_are_catchable_as_builtins():
    with pytest.raises(ValueError):
        raise errors.DegenerateInput("bad input")
    with pytest.raises(ArithmeticError):
        raise errors.ResidualTooLarge("residual")
    with pytest.raises(RuntimeError):
        raise errors.NoConvergence("stalled")


def test_parse_error_keeps_line_number():
    """ParseError prefixes the message with its line."""
    e = errors.ParseError("bad vertex", 7)
    assert e.line == 7
    assert str(e) == "line 7: bad vertex"
    assert isinstance(e, errors.ValidationError)
