import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vibroinv import config as cfg
from vibroinv import io
from vibroinv.errors import ConfigError, DataError
from vibroinv.grid import build_grid

BASE = {
    "grid": {"dim": 1, "extents": 1.0, "n": 21, "sigma1": 0.0, "sigma2": 1.0,
             "gamma": 0.7, "roi": [0.2, 0.8]},
    "physics": {"excitations": [{"omega1": 25.0, "omega2": 21.0},
                                {"omega1": 30.0, "omega2": 24.0}]},
}


def test_unknown_key_rejected_with_path():
    doc = json.loads(json.dumps(BASE))
    doc["method"] = {"method": "irgnm", "stepsize": 1.0}
    with pytest.raises(ConfigError, match="method"):
        cfg.validate(doc)


def test_bad_enum_names_field():
    doc = json.loads(json.dumps(BASE))
    doc["method"] = {"kaczmarz": "both"}
    with pytest.raises(ConfigError, match="method/kaczmarz"):
        cfg.validate(doc)


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "grid": {\n    "dim": 1,,\n  }\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        cfg.load(p)


def test_semantic_method_error_is_config_error():
    doc = json.loads(json.dumps(BASE))
    doc["method"] = {"lm_theta_lower": 0.9, "lm_theta_upper": 0.5}
    with pytest.raises(ConfigError):
        cfg.iteration_config(cfg.validate(doc))


def test_instance_ordering_over_receivers_then_excitations():
    doc = json.loads(json.dumps(BASE))
    doc["grid"]["receivers"] = [0.7, 0.4]
    insts = cfg.build_instances(cfg.validate(doc))
    assert [(i.ell, i.m) for i in insts] == [(1, 1), (2, 1), (1, 2), (2, 2)]
    assert insts[2].grid.coords[insts[2].grid.gamma_nodes[0], 0] == pytest.approx(0.4)


def test_field_specs(tmp_path):
    coords = np.array([[0.5, 0.5], [0.75, 0.5], [0.0, 0.0]])
    pyr = cfg.field_values({"type": "pyramid", "center": [0.5, 0.5], "width": 0.5,
                            "amplitude": 2.0}, coords)
    assert np.allclose(pyr, [2.0, 1.0, 0.0])
    gau = cfg.field_values({"type": "gaussian", "center": [0.5, 0.5], "width": 0.1,
                            "amplitude": 1.0}, coords)
    assert gau[0] == 1.0 and gau[2] < 1e-10
    with pytest.raises(ConfigError):
        cfg.field_values({"type": "gaussian", "center": [0.5], "width": 0.1,
                          "amplitude": 1.0}, coords)
    g = build_grid(1, (1.0,), (5,), gamma_spec=0.5)
    io.write_field(tmp_path / "f.csv", g, np.arange(3), [1.0, 2.0, 3.0])
    vals = cfg.field_values({"type": "file", "path": "f.csv"}, np.zeros((3, 1)), str(tmp_path))
    assert vals.tolist() == [1.0, 2.0, 3.0]


@settings(max_examples=30, deadline=None)
@given(arrays(complex, 7, elements=st.complex_numbers(max_magnitude=1e300, allow_nan=False,
                                                       allow_infinity=False)))
def test_complex_csv_round_trip_is_exact(tmp_path_factory, values):
    g = build_grid(1, (1.0,), (9,), gamma_spec=0.5)
    path = tmp_path_factory.mktemp("io") / "d.csv"
    io.write_complex(path, g, np.arange(1, 8), values)
    nodes, back = io.read_complex(path)
    assert nodes.tolist() == list(range(1, 8))
    assert np.array_equal(back, values)


def test_read_errors(tmp_path):
    with pytest.raises(DataError):
        io.read_complex(tmp_path / "missing.csv")
    (tmp_path / "empty.csv").write_text("node_index,x,Re,Im\n")
    with pytest.raises(DataError):
        io.read_complex(tmp_path / "empty.csv")
    (tmp_path / "real.csv").write_text("node_index,x,value\n0,0,1\n")
    with pytest.raises(DataError):
        io.read_complex(tmp_path / "real.csv")


def test_json_handles_numpy(tmp_path):
    io.write_json(tmp_path / "a.json", {"a": np.float64(1.5), "b": np.arange(2), "c": np.int64(3)})
    assert io.read_json(tmp_path / "a.json") == {"a": 1.5, "b": [0, 1], "c": 3}
