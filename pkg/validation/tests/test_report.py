import json

from validation_harness.report import OracleReport


def test_pass_fail_invariant():
    assert OracleReport("c", 1e-10, 1e-9).passed
    assert OracleReport("c", 1e-9, 1e-9).passed
    assert not OracleReport("c", 2e-9, 1e-9).passed


def test_json_roundtrip(tmp_path):
    rep = OracleReport("eikonal-vs-analytic", 0.01, 0.05,
                       artifacts=["a.txt", "b.csv"],
                       max_abs_deviation=0.3, max_rel_deviation=0.01)
    path = tmp_path / "rep.json"
    rep.to_json(str(path))
    data = json.loads(path.read_text())
    assert data["check"] == "eikonal-vs-analytic"
    assert data["passed"] is True
    assert data["artifacts"] == ["a.txt", "b.csv"]
    assert data["max_abs_deviation"] == 0.3
    assert data["max_rel_deviation"] == 0.01


def test_optional_fields_omitted(tmp_path):
    rep = OracleReport("tree", 0.0, 1e-9)
    path = tmp_path / "rep.json"
    rep.to_json(str(path))
    data = json.loads(path.read_text())
    assert "max_abs_deviation" not in data
    assert "max_rel_deviation" not in data


def test_summary_states_verdict():
    assert "PASS" in OracleReport("c", 0.0, 1.0).summary()
    assert "FAIL" in OracleReport("c", 2.0, 1.0).summary()
