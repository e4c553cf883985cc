import json
import os
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from appfkit.netmodel import (AsymmetryError, BusId, IndexRangeError, LineRecord, LoadProfile,
                              MissingVoltageError, NetworkError, SchemaError, build_ybus,
                              load_network, reduce_network, save_network)

from conftest import SMALL, fixture_path


def test_two_bus_stamp():
    y = build_ybus([LineRecord(0, 1, 2 - 5j)], None, 2).toarray()
    np.testing.assert_array_equal(y, [[2 - 5j, -2 + 5j], [-2 + 5j, 2 - 5j]])


def test_multiphase_block_and_shunts():
    blk = np.array([[3 - 9j, -1 + 2j], [-1 + 2j, 4 - 8j]])
    shunts = np.array([0, 0, 0.1j, 0.2j])
    y = build_ybus([LineRecord((0, 1), (2, 3), blk)], shunts, 4).toarray()
    np.testing.assert_array_equal(y[:2, :2], blk)
    np.testing.assert_array_equal(y[:2, 2:], -blk)
    np.testing.assert_array_equal(y[2:, 2:], blk + np.diag(shunts[2:]))


def test_zero_shunts_leave_no_stored_entries():
    y = build_ybus([LineRecord(0, 1, 1 - 1j)], np.zeros(2), 2)
    assert y.nnz == 4


@pytest.mark.parametrize("line, err", [
    (LineRecord(1, 1, 1 - 1j), NetworkError),
    (LineRecord(0, 1, 0j), NetworkError),
    (LineRecord(0, 5, 1 - 1j), IndexRangeError),
    (LineRecord(0, 1, complex("nan")), NetworkError),
])
def test_bad_lines_rejected(line, err):
    with pytest.raises(err):
        build_ybus([line], None, 2)


@st.composite
def random_tree(draw):
    n = draw(st.integers(2, 12))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    g = draw(st.lists(st.floats(0.1, 50), min_size=n - 1, max_size=n - 1))
    b = draw(st.lists(st.floats(-50, -0.1), min_size=n - 1, max_size=n - 1))
    lines = [LineRecord(p, i + 1, complex(gg, bb)) for i, (p, gg, bb) in enumerate(zip(parents, g, b))]
    return n, lines


@settings(max_examples=50, deadline=None)
@given(random_tree())
def test_ybus_symmetric_and_rows_sum_to_zero(tree):
    n, lines = tree
    y = build_ybus(lines, None, n)
    assert abs(y - y.T).max() == 0
    np.testing.assert_allclose(np.asarray(y.sum(axis=1)).ravel(), 0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(random_tree(), st.data())
def test_reduction_invariants(tree, data):
    n, lines = tree
    y = build_ybus(lines, None, n)
    sub = data.draw(st.integers(0, n - 1))
    net = reduce_network(y, [sub], [1.0])
    keep = [i for i in range(n) if i != sub]
    dense = y.toarray()
    np.testing.assert_array_equal(net.ybus_reduced.toarray(), dense[np.ix_(keep, keep)])
    np.testing.assert_array_equal(net.sub_coupling.toarray(), dense[np.ix_(keep, [sub])])
    assert abs(net.reembed() - y).max() == 0
    for i, slot in enumerate(keep):
        assert net.reduced_index(slot) == i
        assert net.bus_id(i) == BusId(slot, None)


def test_reduction_errors():
    y = build_ybus([LineRecord(0, 1, 1 - 1j)], None, 3)
    with pytest.raises(NetworkError, match="empty row"):
        reduce_network(y, [0], [1.0])
    with pytest.raises(MissingVoltageError):
        reduce_network(y, [0], None)
    with pytest.raises(MissingVoltageError):
        reduce_network(y, [0, 1], [1.0])
    with pytest.raises(IndexRangeError):
        reduce_network(y, [7], [1.0])
    with pytest.raises(NetworkError):
        reduce_network(y, [0, 0], [1.0, 1.0])


def test_far_substation_voltage_warns():
    y = build_ybus([LineRecord(0, 1, 1 - 1j)], None, 2)
    with pytest.warns(UserWarning, match="per-unitized"):
        reduce_network(y, [0], [7200.0])


def test_reduced_index_rejects_substation():
    net = load_network(fixture_path("2bus"))
    with pytest.raises(IndexRangeError):
        net.reduced_index(0)


def test_load_profile():
    a = LoadProfile([1.0, -2.0], [0.5, 0.0])
    np.testing.assert_array_equal(a.stacked(), [1, -2, 0.5, 0])
    np.testing.assert_array_equal(a.complex, [1 + 0.5j, -2])
    assert LoadProfile.from_stacked(a.stacked()) == a
    assert LoadProfile.from_complex(a.complex) == a
    assert a != LoadProfile([1.0, -2.0], [0.5, 1e-300])
    with pytest.raises(ValueError):
        LoadProfile([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        LoadProfile([np.inf], [0.0])


def test_with_loads():
    net = load_network(fixture_path("feeder3"))
    new = net.with_loads(LoadProfile.zeros(2))
    assert new.nominal_loads == LoadProfile.zeros(2)
    assert new.ybus_reduced is net.ybus_reduced
    with pytest.raises(NetworkError):
        net.with_loads(LoadProfile.zeros(3))


def _same(a, b):
    assert a.n_total == b.n_total
    assert abs(a.ybus_full - b.ybus_full).max() == 0
    np.testing.assert_array_equal(a.substation_slots, b.substation_slots)
    np.testing.assert_array_equal(a.substation_voltage, b.substation_voltage)
    assert a.nominal_loads == b.nominal_loads


@pytest.mark.parametrize("name", SMALL + ["synthetic_feeder"])
def test_json_round_trip(name, tmp_path):
    net = load_network(fixture_path(name))
    path = tmp_path / "net.json"
    save_network(net, path)
    back = load_network(path)
    _same(net, back)
    assert back.phase_labels == net.phase_labels
    if net.shunt_diag is not None:
        np.testing.assert_array_equal(back.shunt_diag, net.shunt_diag)


@pytest.mark.parametrize("name", SMALL)
def test_csv_round_trip(name, tmp_path):
    net = load_network(fixture_path(name))
    path = tmp_path / "ybus.csv"
    save_network(net, path)
    _same(net, load_network(path))


def test_shipped_csv_matches_json():
    a = load_network(fixture_path("feeder3"))
    b = load_network(os.path.join(os.path.dirname(fixture_path("x")), "feeder3_csv", "ybus.csv"))
    _same(a, b)


def test_csv_without_substation_file(tmp_path):
    (tmp_path / "ybus.csv").write_text("row,col,G,B\n1,1,1,-10\n1,2,-1,10\n2,1,-1,10\n2,2,1,-10\n")
    net = load_network(tmp_path / "ybus.csv")
    np.testing.assert_array_equal(net.substation_slots, [0])
    np.testing.assert_array_equal(net.substation_voltage, [1.0])
    assert net.nominal_loads == LoadProfile.zeros(1)


def test_csv_zero_index_rejected(tmp_path):
    (tmp_path / "ybus.csv").write_text("row,col,G,B\n0,0,1,-10\n")
    with pytest.raises(IndexRangeError):
        load_network(tmp_path / "ybus.csv")


def _doc():
    return {"n_total": 2, "substation": {"slots": [0], "voltages": [[1.0, 0.0]]},
            "ybus": {"triplets": [[0, 0, 1, -10], [0, 1, -1, 10], [1, 0, -1, 10], [1, 1, 1, -10]]},
            "loads": [[1, -0.1, -0.05]]}


@pytest.mark.parametrize("mutate, err", [
    (lambda d: d.pop("ybus"), SchemaError),
    (lambda d: d.__setitem__("n_total", "two"), SchemaError),
    (lambda d: d["substation"].__setitem__("voltages", []), MissingVoltageError),
    (lambda d: d["ybus"]["triplets"].__setitem__(1, [0, 1, -1, 11]), AsymmetryError),
    (lambda d: d["ybus"]["triplets"].append([2, 2, 1, 0]), IndexRangeError),
    (lambda d: d.__setitem__("loads", [[5, 0, 0]]), IndexRangeError),
    (lambda d: d.__setitem__("loads", [[0, 0, 0]]), IndexRangeError),
    (lambda d: d.__setitem__("loads", [[1, 0]]), SchemaError),
])
def test_json_schema_errors(tmp_path, mutate, err):
    doc = _doc()
    mutate(doc)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(err):
        load_network(path)


def test_invalid_json_text(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        load_network(path)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_network("/nonexistent/network.json")


def test_duplicate_loads_accumulate(tmp_path):
    doc = _doc()
    doc["loads"] = [[1, -0.1, -0.05], [1, -0.2, 0.0]]
    path = tmp_path / "net.json"
    path.write_text(json.dumps(doc))
    net = load_network(path)
    np.testing.assert_allclose(net.nominal_loads.p, [-0.3])
    np.testing.assert_allclose(net.nominal_loads.q, [-0.05])


def test_network_is_immutable():
    net = load_network(fixture_path("2bus"))
    with pytest.raises(Exception):
        net.n_total = 3
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert isinstance(net.ybus_reduced, sp.csr_matrix)
