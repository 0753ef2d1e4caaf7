import json

import numpy as np
import pytest

from quasiuniform.cli import ConfigError, RunConfig, compare_traces, main, run, schedule_csv
from quasiuniform.io import load_design, load_trace
from quasiuniform.metrics import MetricsTrace

GREEDY_2D = ["--alg", "greedy", "--dim", "2", "--grid-k", "3", "--n", "30"]


def csv_rows(text):
    lines = text.strip().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def test_generate_writes_lf_utf8_files(tmp_path):
    design, trace = tmp_path / "d.json", tmp_path / "t.csv"
    assert main(["generate", *GREEDY_2D, "--design", str(design), "--trace", str(trace)]) == 0
    for path in (design, trace):
        raw = path.read_bytes()
        assert b"\r\n" not in raw and raw.endswith(b"\n")
        raw.decode("utf-8")
    meta = json.loads(design.read_text(encoding="utf-8"))["metadata"]
    assert meta["tie_break"] == "lexicographically-smallest-maximizer"
    assert meta["prng"] == "numpy.PCG64"
    assert len(load_trace(trace)) == 29


def test_design_json_round_trip(tmp_path):
    path = tmp_path / "d.json"
    main(["generate", *GREEDY_2D, "--design", str(path)])
    loaded = load_design(path)
    direct = run(RunConfig(alg="greedy", dim=2, grid_k=3, n=30)).design
    assert np.array_equal(loaded.points, direct.points)
    assert loaded.norm is direct.norm
    assert loaded.domain.to_dict() == direct.domain.to_dict()


def test_generate_to_stdout_is_deterministic(capsys):
    main(["generate", *GREEDY_2D])
    first = capsys.readouterr().out
    main(["generate", *GREEDY_2D])
    assert capsys.readouterr().out == first
    assert first.startswith("n,sr,cr_lower,cr_upper,mr_lower,mr_upper\n")


def test_generate_vdc(capsys):
    assert main(["generate", "--alg", "vdc", "--dim", "1", "--n", "256"]) == 0
    header, rows = csv_rows(capsys.readouterr().out)
    assert len(rows) == 255


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"alg": "greedy", "dim": 2, "grid_k": 3, "n": 50}), encoding="utf-8")
    main(["generate", "--config", str(cfg), "--n", "10"])
    _, rows = csv_rows(capsys.readouterr().out)
    assert rows[-1][0] == "10"


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"algo": "greedy"}), encoding="utf-8")
    assert main(["generate", "--config", str(cfg)]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["verify", "--cert", "nonsense"],
        ["generate", "--alg", "greedy", "--dim", "2", "--n", "10"],  # no grid
        ["generate", *GREEDY_2D, "--beta", "4"],
        ["generate", "--alg", "relaxed", "--dim", "2", "--grid-k", "3"],  # no a
        ["generate", *GREEDY_2D, "--seed", "1"],
        ["generate", "--alg", "vdc", "--dim", "2"],
        ["generate", *GREEDY_2D, "--x1", "0.5"],
        ["generate", "--alg", "boundary-phobic", "--dim", "2", "--grid-k", "3", "--beta", "-1"],
        ["schedule", "--dim", "2", "--from", "4", "--to", "4"],
        ["schedule", "--dim", "3", "--from", "5", "--to", "6"],
        ["verify", *GREEDY_2D, "--cert", "schedule4d"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err


def test_verify_pass_exit_0(capsys):
    argv = ["verify", "--alg", "greedy", "--dim", "2", "--grid-k", "5", "--n", "145",
            "--cert", "schedule2d,mr-bound"]
    assert main(argv) == 0
    reports = json.loads(capsys.readouterr().out)
    assert [r["name"] for r in reports] == ["schedule2d", "mr-bound"]
    assert all(r["overall"] for r in reports)
    assert set(reports[0]["rows"][0]) == {"n", "lhs", "rhs", "pass"}


def test_verify_d4_exit_0(tmp_path):
    out = tmp_path / "r.json"
    argv = ["verify", "--alg", "greedy", "--dim", "4", "--grid-k", "2", "--n", "400",
            "--cert", "schedule4d,checkerboard", "--report", str(out)]
    assert main(argv) == 0
    reports = json.loads(out.read_text(encoding="utf-8"))
    assert [r["n"] for r in reports[1]["rows"]] == [41, 313]


def test_verify_failure_exit_1(capsys):
    # the K=7 grid cannot reach the best n=2 point, so the bound 2(1+sqrt2/4) is exceeded
    argv = ["verify", "--alg", "boundary-phobic", "--beta", "4", "--dim", "2", "--grid-k", "7",
            "--eval-k", "7", "--n", "4", "--cert", "mr-bound"]
    assert main(argv) == 1
    assert "mr-bound: fail" in capsys.readouterr().err


def test_verify_vdc_property_certificates(capsys):
    argv = ["verify", "--alg", "vdc", "--dim", "1", "--n", "16", "--cert", "pigeonhole,fill-lower"]
    assert main(argv) == 0


def test_compare_identical_configs_has_zero_differences(capsys):
    flags = "--alg greedy --dim 2 --grid-k 3 --n 30"
    assert main(["compare", "--left", flags, "--right", flags]) == 0
    out = capsys.readouterr().out
    last = out.strip().splitlines()[-1].split(",")
    assert last[0] == "max_abs_diff" and [float(v) for v in last[1:4]] == [0.0, 0.0, 0.0]


def test_compare_boundary_phobic_reduces_fill_distance(capsys):
    left = "--alg greedy --dim 2 --grid-k 7 --eval-k 7 --n 80"
    right = "--alg boundary-phobic --beta 4 --dim 2 --grid-k 7 --eval-k 7 --n 80"
    assert main(["compare", "--left", left, "--right", right]) == 0
    header, rows = csv_rows(capsys.readouterr().out)
    row80 = dict(zip(header, next(r for r in rows if r[0] == "80")))
    assert float(row80["cr_right"]) < float(row80["cr_left"])


def test_compare_mismatched_n(capsys):
    assert main(["compare", "--left", "--alg vdc --dim 1 --n 8",
                 "--right", "--alg vdc --dim 1 --n 9"]) == 2


def test_compare_traces_missing_rows_are_infinite():
    a, b = MetricsTrace(), MetricsTrace()
    a.append(2, 0.5, 1.0, 1.0)
    _, diffs = compare_traces(a, b)
    assert np.all(np.isinf(diffs))


def test_schedule_tables(capsys):
    assert main(["schedule", "--dim", "2", "--from", "5", "--to", "85"]) == 0
    header, rows = csv_rows(capsys.readouterr().out)
    assert header == ["n", "phase", "sr", "cr", "mr"]
    assert {round(float(r[4]), 12) for r in rows} == {round(2**0.5, 12), 2.0}
    table = schedule_csv(4, 17, 42)
    _, rows = csv_rows(table)
    assert [r[1] for r in rows if r[0] in ("40", "41", "42")] == ["phase-i", "checkpoint", "phase-ii"]


def test_schedule_validation():
    with pytest.raises(ConfigError):
        schedule_csv(2, 4, 4)
    with pytest.raises(ConfigError):
        schedule_csv(2, 10, 9)


def test_ball_domain_and_relaxed_ball_selector(capsys):
    argv = ["verify", "--alg", "relaxed", "--a", "0.5", "--selector", "ball", "--seed", "2",
            "--dim", "2", "--domain", "ball", "--grid-k", "4", "--n", "40", "--cert", "pigeonhole"]
    assert main(argv) == 0


def test_domain_file(tmp_path, capsys):
    dom = tmp_path / "dom.json"
    dom.write_text(json.dumps({"type": "finite", "points": [[0, 0], [1, 0], [0, 1], [1, 1],
                                                            [0.5, 0.5]]}), encoding="utf-8")
    argv = ["generate", "--alg", "greedy", "--dim", "2", "--domain", str(dom), "--n", "5"]
    assert main(argv) == 0
    _, rows = csv_rows(capsys.readouterr().out)
    assert rows[-1][2] == "0"
