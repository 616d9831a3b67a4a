import os

import pytest

from iss_smallgain.network import example_network
from iss_smallgain.specfile import SpecError, format_spec, model_equal, parse_spec, read_spec, write_spec

HERE = os.path.dirname(__file__)
GOLDEN = ["example_mixed", "example_sum_only", "example_unstable", "example_cascade", "example_power"]

# (file, line, col, expected token)
MALFORMED = [
    ("truncated.ganet", 16, 1, "agg"),
    ("bad_expr.ganet", 12, 15, "r"),
    ("unknown_key.ganet", 17, 1, "gain <j>"),
]


@pytest.mark.parametrize("name", GOLDEN)
def test_golden_round_trip(data_dir, name):
    with open(os.path.join(data_dir, name + ".ganet"), encoding="utf-8") as fh:
        text = fh.read()
    model = parse_spec(text)
    printed = format_spec(model)
    assert printed == text
    assert model_equal(parse_spec(printed), model)


@pytest.mark.parametrize("fname,line,col,token", MALFORMED)
def test_malformed_positions(fname, line, col, token):
    with pytest.raises(SpecError) as exc:
        read_spec(os.path.join(HERE, "data", fname))
    err = exc.value
    assert (err.line, err.col) == (line, col)
    assert token in err.expected
    assert str(err).startswith(f"line {line}, col {col}: ")


def test_diagonal_gain_rejected(mixed_path):
    with open(mixed_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines(keepends=True)
    lines[11] = 'gain 1 = "r"\n'
    with pytest.raises(SpecError, match="diagonal gain must be absent") as exc:
        parse_spec("".join(lines))
    assert exc.value.line == 12


def test_example_parses_to_network(mixed_path):
    model = read_spec(mixed_path)
    assert model.n == 3
    assert model.network == example_network(eta=0.1)
    assert model.dynamics is not None and len(model.lyapunov) == 3
    assert model.analysis.alpha == (0.1,) and model.analysis.horizon == 60.0


def test_write_then_read(tmp_path, mixed_path):
    model = read_spec(mixed_path)
    out = tmp_path / "copy.ganet"
    write_spec(model, out)
    assert model_equal(read_spec(out), model)


def test_bad_index_and_agg():
    base = '[system]\nn = 2\n\n[row 1]\nagg = sum\ngain 3 = "r"\n\n[row 2]\nagg = max\n'
    with pytest.raises(SpecError) as exc:
        parse_spec(base)
    assert exc.value.line == 6
    with pytest.raises(SpecError, match="sum"):
        parse_spec(base.replace("agg = max", "agg = min").replace("gain 3", "gain 2"))


def test_duplicate_section_rejected():
    text = '[system]\nn = 1\n\n[row 1]\nagg = sum\n\n[row 1]\nagg = max\n'
    with pytest.raises(SpecError) as exc:
        parse_spec(text)
    assert exc.value.line == 7
