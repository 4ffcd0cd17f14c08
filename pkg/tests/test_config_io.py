import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bcmtor import io
from bcmtor.config import RunConfig, load_config, parse_config
from bcmtor.errors import ConfigError
from bcmtor.linop import LinOp, Space


# --- config -----------------------------------------------------------------

def test_defaults_are_the_fixture():
    cfg = RunConfig()
    grid = cfg.make_grid()
    q = cfg.potential.build(grid)
    np.testing.assert_allclose(q.values, 2 - 1.5 * np.exp(-20 * (grid.x - 0.4) ** 2))
    assert (grid.n_x, grid.horizon) == (400, 0.45)


def test_parse_full_config():
    cfg = parse_config("""
seed = 7
[grid]
n_x = 200
[potential]
kind = "constant"
value = 1
[pipeline]
ridge = 1e-5
[stability]
levels = 0
""")
    assert cfg.seed == 7 and cfg.grid.n_x == 200
    assert cfg.potential.value == 1.0 and isinstance(cfg.potential.value, float)
    assert cfg.pipeline.ridge == 1e-5
    assert cfg.stability.levels == 0
    assert np.all(cfg.potential.build(cfg.make_grid()).values == 1.0)


@pytest.mark.parametrize("text,key", [
    ("bogus = 1", "bogus"),
    ("[grid]\nnx = 3", "grid.nx"),
    ("[pipeline]\nfloor = 1e-6", "pipeline.floor"),
])
def test_unknown_keys_rejected(text, key):
    with pytest.raises(ConfigError, match=f"unknown key '{key}'"):
        parse_config(text)


def test_missing_kind_names_key():
    with pytest.raises(ConfigError, match="potential.kind"):
        parse_config("[potential]\nvalue = 1.0")


def test_parse_error_has_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("seed = 0\n[grid\n")


@pytest.mark.parametrize("text", [
    '[potential]\nkind = "table"\nx = [0.0, 0.0]\nq = [1.0, 2.0]',
    '[potential]\nkind = "table"\nx = [0.0, 1.0]\nq = [1.0]',
    '[potential]\nkind = "table"\nx = [0.0, "a"]\nq = [1.0, 2.0]',
    '[potential]\nkind = "table"',
])
def test_malformed_table_rejected(text):
    with pytest.raises(ConfigError):
        cfg = parse_config(text)
        cfg.potential.build(cfg.make_grid())


@pytest.mark.parametrize("text", [
    '[potential]\nkind = "wiggly"',
    "[grid]\nn_x = 2.5",
    "[grid]\nhorizon = 0.4512",
    "[stability]\ndecay = 1.5",
    '[forward]\ncontrol = "square"',
    "[lemmas]\ndim = 1",
    "seed = true",
])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text).make_grid()


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.toml")


# --- io ---------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e300, 1e300, allow_nan=False, allow_subnormal=True)))
def test_matrix_round_trip(tmp_path_factory, M):
    path = tmp_path_factory.mktemp("m") / "A.csv"
    A = LinOp(M, Space("d", M.shape[1], 0.0025), Space("c", M.shape[0], 1 / 3))
    io.write_matrix(path, A)
    B = io.read_matrix(path)
    assert np.array_equal(B.matrix, A.matrix)
    assert (B.dom.weight, B.cod.weight) == (A.dom.weight, A.cod.weight)


def test_matrix_header(tmp_path):
    A = LinOp(np.arange(6.0).reshape(2, 3), Space("d", 3, 0.5), Space("c", 2, 0.25))
    io.write_matrix(tmp_path / "A.csv", A)
    lines = (tmp_path / "A.csv").read_text().splitlines()
    assert lines[:2] == ["# dims: 2,3", "# weights: 0.5,0.25"]
    assert len(lines) == 4


def test_read_matrix_rejects_bad_shape(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# dims: 2,2\n# weights: 1,1\n1,2\n")
    with pytest.raises(ValueError):
        io.read_matrix(p)
    p.write_text("1,2\n")
    with pytest.raises(ValueError):
        io.read_matrix(p)


def test_table_and_json(tmp_path):
    io.write_table(tmp_path / "t.csv", {"a": [1.0, np.nan], "b": [0.1, 2.0]}, ["note"])
    assert (tmp_path / "t.csv").read_text() == "# note\na,b\n1,0.10000000000000001\nnan,2\n"
    io.write_json(tmp_path / "r.json", {"z": np.float64(np.inf), "a": np.bool_(True),
                                        "n": [np.int64(3)]})
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": True, "n": [3], "z": None}
    with pytest.raises(TypeError):
        io.write_json(tmp_path / "x.json", {"o": object()})


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write(tmp_path / "sub" / "f.txt", "hello")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


def test_svg_plot_is_wellformed():
    import xml.etree.ElementTree as ET
    x = np.linspace(0, 1, 20)
    svg = io.svg_line_plot([("sin <x>", x, np.sin(x)), ("flat", x, 0 * x)], "t&t", "x", "y")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "sin &lt;x&gt;" in svg
