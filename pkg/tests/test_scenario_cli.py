import json
from pathlib import Path

import numpy as np
import pytest

from giantcm.cli import main
from giantcm.errors import ScenarioError
from giantcm.geometry import order_points
from giantcm.output import read_csv, read_states, write_states
from giantcm.scenario import parse_scenario, parse_scenario_text, serialize_scenario

SCEN = Path(__file__).resolve().parents[1] / "scenarios"
MINIMAL = {"emitters": [{}], "coupling_points": [{"emitter": 0, "tau": 0.0}]}


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


def test_minimal_defaults():
    sc = parse_scenario_text(json.dumps(MINIMAL))
    assert sc.sim["dt"] == 1e-3
    assert sc.bin_cutoff == 3
    assert sc.layout().gamma == 1.0


def test_gaussian_default_cutoff():
    raw = dict(MINIMAL, field={"N": 0.1})
    assert parse_scenario_text(json.dumps(raw)).bin_cutoff == 4


def test_braided_file_ordering():
    sc = parse_scenario(SCEN / "braided_df.json")
    assert order_points(sc.layout()).J == (0, 1, 0, 1)


def test_admissibility_error_message():
    raw = dict(MINIMAL, field={"N": 1.0, "M": 2.0})
    with pytest.raises(ScenarioError, match=r"\|M\|² ≤ N\(N\+1\)"):
        parse_scenario_text(json.dumps(raw))


def test_unknown_keys_all_listed():
    raw = dict(MINIMAL, bogus=1, simulation={"dtt": 0.1, "stride": 2, "foo": 3})
    with pytest.raises(ScenarioError) as info:
        parse_scenario_text(json.dumps(raw))
    text = " ".join(info.value.problems)
    assert "bogus" in text and "dtt" in text and "foo" in text


def test_json_syntax_error_location():
    with pytest.raises(ScenarioError, match="<string>:2:7"):
        parse_scenario_text('{"emitters": [],\n "x": }')


@pytest.mark.parametrize("path", sorted(SCEN.glob("*.json")), ids=lambda p: p.stem)
def test_round_trip(path):
    sc = parse_scenario(path)
    again = parse_scenario_text(serialize_scenario(sc))
    assert again == sc
    assert serialize_scenario(again) == serialize_scenario(sc)


def test_states_file_round_trip(tmp_path, rng):
    mats = [rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)) for _ in range(3)]
    write_states(tmp_path / "s.bin", [2, 2], [0.0, 0.5, 1.0], mats)
    dims, times, data = read_states(tmp_path / "s.bin")
    assert dims == [2, 2]
    np.testing.assert_array_equal(times, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(data, np.array(mats))
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == b"GCMDM001"


def test_cli_me_csv(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "me", SCEN / "single_qubit_vacuum.json", "--out-dir", tmp_path)
    assert code == 0
    header, rows = read_csv(out["output"])
    assert header[0] == "t"
    assert rows[-1, 0] == pytest.approx(1.0)
    assert rows[-1, header.index("pop[0]")] == pytest.approx(np.exp(-1), abs=1e-6)
    line = Path(out["output"]).read_text().splitlines()[-1]
    assert all(format(float(v), ".17g") == v for v in line.split(","))


def test_cli_collide_flags_override(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "collide", SCEN / "single_qubit_vacuum.json", "--out-dir", tmp_path,
                           "--dt", "0.002", "--stride", "50", "--save-states")
    assert code == 0
    header, rows = read_csv(out["output"])
    assert rows[1, 0] == pytest.approx(0.1)
    assert "leakage" in header
    dims, times, data = read_states(out["states"])
    assert dims == [2] and len(times) == len(rows)


def test_cli_coeffs_braided(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "coeffs", SCEN / "braided_df.json", "--out-dir", tmp_path)
    assert code == 0
    c = out["coefficients"]
    for k, v in c.items():
        if k.startswith(("decay", "heat", "squeeze")):
            assert abs(complex(*v)) <= 1e-12
    assert c["H[0][1]"][0] == pytest.approx(1.0, abs=1e-12)


def test_cli_df_scan_giant(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "df-scan", SCEN / "giant_atom.json", "--out-dir", tmp_path, "--format", "json")
    assert code == 0
    assert out["df_points"] == [[pytest.approx(np.pi)]]
    scan = json.loads(Path(out["output"]).read_text())
    assert len(scan) == 64 and {"phases", "df", "hvac_norm"} <= set(scan[0])


def test_cli_compare_ratios(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "compare", SCEN / "single_qubit_vacuum.json", "--out-dir", tmp_path,
                           "--format", "json")
    assert code == 0
    assert out["dts"] == [4e-3, 2e-3, 1e-3]
    assert all(1.7 <= r <= 2.3 for r in out["ratios"])


def test_cli_traj_deterministic(tmp_path, capsys):
    args = ["traj", SCEN / "coherent_drive.json", "--n-traj", "50", "--seed", "3"]
    code, a, _ = run_cli(capsys, *args, "--out-dir", tmp_path / "a")
    code2, b, _ = run_cli(capsys, *args, "--out-dir", tmp_path / "b", "--threads", "2")
    assert code == code2 == 0
    assert Path(a["output"]).read_bytes() == Path(b["output"]).read_bytes()
    assert Path(a["events"]).read_bytes() == Path(b["events"]).read_bytes()


def test_cli_validation_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(MINIMAL, field={"N": 1.0, "M": 2.0})))
    code, out, err = run_cli(capsys, "me", bad, "--out-dir", tmp_path)
    assert code == 2 and out is None
    assert err["exit_code"] == 2 and "N(N+1)" in err["message"] + " ".join(err.get("problems", []))


def test_cli_traj_rejects_thermal(tmp_path, capsys):
    bad = tmp_path / "th.json"
    bad.write_text(json.dumps(dict(MINIMAL, field={"N": 0.1}, simulation={"T": 0.01})))
    code, _, err = run_cli(capsys, "traj", bad, "--out-dir", tmp_path)
    assert code == 2 and err["error"] == "NonVacuumLeadingError"


def test_cli_numerical_exit_code(tmp_path, capsys, monkeypatch):
    import giantcm.cli as cli
    from giantcm.errors import NumericalError

    def boom(sc, args):
        raise NumericalError("system state lost positivity")

    monkeypatch.setitem(cli.COMMANDS, "me", boom)
    code, _, err = run_cli(capsys, "me", SCEN / "single_qubit_vacuum.json", "--out-dir", tmp_path)
    assert code == 3 and err == {"error": "NumericalError", "message": "system state lost positivity",
                                 "exit_code": 3}
