import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmafv import csvio
from vmafv.analysis import build_fv_curve
from vmafv.catalog import BUILTIN, ActuatorRecord, builtin_catalog, parse_catalog, read_catalog
from vmafv.csvio import SchemaError
from vmafv.protocol import ProtocolConfig, build_protocol
from vmafv.slse import NormalizedSlse, SlseChain, SlseParams
from vmafv.timesim import ForceTrace, StrainProfile, add_noise, simulate

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=30)
@given(st.lists(st.tuples(finite, finite, finite), min_size=2, max_size=30))
def test_trace_round_trip(rows):
    n = len(rows)
    t = np.cumsum(np.full(n, 0.01)) + 0.1
    a = np.array(rows)
    tr = ForceTrace(t, a[:, 0], a[:, 1], a[:, 2], metadata={"pressure_psi": 20.0, "actuator_id": "Control2"})
    text = csvio.render_trace(tr)
    back = csvio.parse_trace(text)
    for col in ("time", "strain", "extension", "force"):
        assert np.array_equal(getattr(back, col), getattr(tr, col))
    assert back.metadata["actuator_id"] == "Control2"
    assert csvio.render_trace(back) == text


def test_trace_with_pressure_file_round_trip(tmp_path):
    prof = StrainProfile.from_segments([(1.0, 0.0), (0.2, 0.1), (1.0, 0.0)], 0.05)
    tr = add_noise(simulate([SlseParams(1, 10, 0.2)], prof), 1e-3, seed=1)
    tr = tr.copy(pressure=np.linspace(0, 20, len(tr)))
    path = tmp_path / "t.csv"
    csvio.write_trace(path, tr)
    first = path.read_bytes()
    csvio.write_trace(path, csvio.read_trace(path))
    assert path.read_bytes() == first
    assert b"\r" not in first
    assert np.array_equal(csvio.read_trace(path).pressure, tr.pressure)


def test_profile_round_trip(tmp_path):
    prof = build_protocol(ProtocolConfig(repetitions=1))
    path = tmp_path / "p.csv"
    csvio.write_profile(path, prof)
    back = csvio.read_profile(path)
    assert np.array_equal(back.times, prof.times)
    assert np.array_equal(back.strains, prof.strains)
    assert back.dt == prof.dt
    assert csvio.render_profile(back) == path.read_text()


def test_fv_round_trip(tmp_path):
    cfg = ProtocolConfig(repetitions=2, precondition_amplitude=0.0)
    tr = add_noise(simulate([SlseParams(10, 30, 15)], build_protocol(cfg)), 0.01, seed=2)
    curve = build_fv_curve(tr, cfg, {"actuator_id": "Control2"})
    path = tmp_path / "fv.csv"
    csvio.write_fv_curve(path, curve)
    text = path.read_text()
    back = csvio.read_fv(path)
    assert back.eps0 == curve.eps0 and back.d_eps == curve.d_eps
    assert back.metadata["actuator_id"] == "Control2"
    # rewrite from the parsed rows reproduces the file
    meta, header, rows = csvio.fv_rows(path)
    again = csvio.render_table(header, [[csvio.parse_scalar(x) for x in r] for r in rows], meta)
    assert again == text
    raw = tmp_path / "raw.csv"
    csvio.write_fv_curve(raw, curve, raw=True)
    assert len(csvio.read_fv(raw).points) == 20


def test_schema_errors_name_column(tmp_path):
    with pytest.raises(SchemaError, match="force_N"):
        csvio.parse_trace("time_s,extension_mm,strain\n0,0,0\n")
    with pytest.raises(SchemaError, match="strain"):
        csvio.parse_trace("time_s,extension_mm,strain,force_N\n0,0,abc,1\n1,0,0,1\n")
    with pytest.raises(SchemaError, match="direction"):
        csvio.parse_fv("# eps0=0.1\n# d_eps=0.01\n" + ",".join(csvio.FV_COLUMNS) + "\n20,0.1,1.2,0,1,sideways\n")


def test_params_round_trip(tmp_path):
    chain = SlseChain.pair(NormalizedSlse(3.0, 2.0), NormalizedSlse(8.0, 0.5, 0.6))
    doc = csvio.params_document(chain, 0.3, 0.02, {"r2": 0.99}, pressure_psi=20.0)
    path = tmp_path / "params.json"
    csvio.write_params(path, doc)
    back = csvio.read_params(path)
    assert csvio.chain_from_params(back) == chain
    assert back["fit"]["r2"] == 0.99
    dim = {"elements": [{"k1": 2.0, "k2": 20.0, "eta": 0.4}, {"label": "sheath", "k1": 6, "k2": 12, "eta": 2.4}]}
    ch = csvio.chain_from_params(dim)
    assert ch.elements[1].beta == pytest.approx(3.0)
    assert csvio.dimensional_from_params(dim)[1] == SlseParams(6, 12, 2.4)


def test_params_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "elements": [\n    {"kappa": 1,}\n  ]\n}\n')
    with pytest.raises(SchemaError, match=r"bad.json:3"):
        csvio.read_params(bad)
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"elements": []}))
    with pytest.raises(SchemaError):
        csvio.read_params(empty)
    with pytest.raises(SchemaError, match="gamma"):
        csvio.chain_from_params({"elements": [{"kappa": 1.0}]})


def test_atomic_write_leaves_no_temp(tmp_path):
    path = tmp_path / "sub" / "x.txt"
    csvio.atomic_write_text(path, "hello\n")
    assert path.read_text() == "hello\n"
    assert [p.name for p in path.parent.iterdir()] == ["x.txt"]


# -- catalog -------------------------------------------------------------------

def test_builtin_catalog():
    cat = builtin_catalog()
    assert len(cat) == 12
    c2 = cat["Control2"]
    assert (c2.il, c2.ml) == (94.3, 70.3)
    assert c2.rest_length(20.0) == 70.3
    assert c2.rest_length(0.0) == 94.3
    assert read_catalog(BUILTIN) == cat
    assert not c2.has_sheath and cat["Ecoflex1"].has_sheath


def test_catalog_errors():
    head = "sample,mesh_diameter_mm,il_mm,il_std_mm,ml_mm,ml_std_mm,max_contraction_ratio_pct," \
           "sheath_material,sheath_diameter_mm\n"
    with pytest.raises(ValueError, match=":3"):
        parse_catalog(head + "A,10,90,,70,,,N/A,\nA,10,90,,70,,,N/A,\n")
    with pytest.raises(ValueError, match=":2"):
        parse_catalog(head + "A,10,60,,70,,,N/A,\n")
    with pytest.raises(ValueError):
        ActuatorRecord("x", 10, 50, 60)


def test_catalog_tabulated_rest_length():
    head = "sample,mesh_diameter_mm,il_mm,il_std_mm,ml_mm,ml_std_mm,max_contraction_ratio_pct," \
           "sheath_material,sheath_diameter_mm,rest_length_5psi_mm\n"
    cat = parse_catalog(head + "A,10,90,,70,,,N/A,,88.0\n")
    assert cat["A"].rest_length(5.0) == 88.0
    assert cat["A"].rest_length(10.0) == pytest.approx(80.0)
