import csv
import io
import json
import math

import numpy as np
import pytest

from wpmoduli import checkpoint
from wpmoduli.balanced import CloudSections, balanced_metric
from wpmoduli.cli import (
    CSV_COLUMNS,
    MetricResult,
    RunConfig,
    cell_seed,
    emit,
    from_json,
    main,
    parse_grid,
    parse_k_list,
    run_point,
    run_scan,
    to_csv,
    to_json,
)
from wpmoduli.errors import CorruptCheckpoint, VersionMismatch
from wpmoduli.projective import section_basis
from wpmoduli.sampler import sample_cloud


def _strip_wallclock(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r.pop("wallclock_s")
    return rows


def test_parse_k_list():
    assert parse_k_list("1..6") == [1, 2, 3, 4, 5, 6]
    assert parse_k_list("1,3") == [1, 3]
    assert parse_k_list("4") == [4]


def test_parse_grid_respects_fundamental_domain():
    grid = parse_grid(f"0.5,1.5,3,0,{2 * math.pi / 5},4")
    assert len(grid) == 12
    for t in grid:
        assert 0 <= np.angle(t) % (2 * np.pi) < 2 * np.pi / 5
    assert abs(grid[-1]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        parse_grid("0,1,3,0,3.0,4")
    with pytest.raises(ValueError):
        parse_grid("0,1,3")


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(n_points=500).validate()
    with pytest.raises(ValueError):
        RunConfig(method="balanced-only", k_list=[9]).validate()
    with pytest.raises(ValueError):
        RunConfig(method="nonsense").validate()
    cfg = RunConfig(t_grid=[1.0 + 1e-4, 0.5]).validate()
    assert cfg.t_grid == [0.5]


def test_cell_seeds_distinct_and_stable():
    seeds = [cell_seed(7, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [cell_seed(7, i) for i in range(100)]
    assert all(0 <= s < 2**64 for s in seeds)


def test_header_only_csv():
    assert to_csv([]) == ",".join(CSV_COLUMNS) + "\n"


def _example_results():
    return [
        MetricResult("direct", 0.25 + 0.1j, 0, 0.1923, 0.0011, 200000, 123, 1.5, False, {"imag": 1e-6}),
        MetricResult("quantized", 3.0 + 0j, 2, 0.0017, 1e-5, 100000, 99, 0.25, False, {"iterations": 12}),
    ]


def test_json_round_trip():
    res = _example_results()
    text = to_json(res)
    assert to_json(from_json(text)) == text


def test_csv_parses_strictly():
    text = to_csv(_example_results())
    rows = list(csv.reader(io.StringIO(text), strict=True))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 3
    for row in rows[1:]:
        assert len(row) == len(CSV_COLUMNS)
        float(row[1]), float(row[4]), float(row[5])
        assert row[-1] in ("true", "false")
        assert "," not in row[4]


def test_emit_to_file(tmp_path):
    path = tmp_path / "out" / "r.json"
    emit(_example_results(), "json", path)
    assert from_json(path.read_text())[0].value == 0.1923


def test_run_point_deterministic():
    cfg = RunConfig(n_points=2000, seed=5).validate()
    a = to_csv(run_point(cfg, 0.3))
    b = to_csv(run_point(cfg, 0.3))
    assert _strip_wallclock(a) == _strip_wallclock(b)


def test_scan_output_independent_of_threads(monkeypatch):
    grid = [0.2, 0.4 + 0.1j, 0.6j]
    monkeypatch.delenv("WPMODULI_THREADS", raising=False)
    a = run_scan(RunConfig(t_grid=list(grid), n_points=2000, seed=3, threads=1))
    monkeypatch.setenv("WPMODULI_THREADS", "3")
    b = run_scan(RunConfig(t_grid=list(grid), n_points=2000, seed=3, threads=1))
    assert _strip_wallclock(to_csv(a)) == _strip_wallclock(to_csv(b))
    assert [r.t for r in a] == [complex(t) for t in grid]


def test_scan_resume_recomputes_nothing(tmp_path, monkeypatch):
    cfg = RunConfig(t_grid=[0.2, 0.5], n_points=2000, seed=3, checkpoint_dir=str(tmp_path))
    first = run_scan(cfg)
    calls = []
    import wpmoduli.cli as cli

    monkeypatch.setattr(cli, "run_point", lambda *a, **k: calls.append(a) or [])
    again = run_scan(RunConfig(t_grid=[0.2, 0.5], n_points=2000, seed=3, checkpoint_dir=str(tmp_path)))
    assert calls == []
    assert to_csv(again) == to_csv(first)


def test_scan_partial_resume(tmp_path):
    cfg = RunConfig(t_grid=[0.2, 0.5], n_points=2000, seed=3, checkpoint_dir=str(tmp_path))
    full = run_scan(cfg)
    (tmp_path / "cell-0001.json").unlink()
    resumed = run_scan(RunConfig(t_grid=[0.2, 0.5], n_points=2000, seed=3, checkpoint_dir=str(tmp_path)))
    assert _strip_wallclock(to_csv(resumed)) == _strip_wallclock(to_csv(full))


def test_near_singular_cells_flagged():
    cfg = RunConfig(n_points=2000, seed=1).validate()
    row = run_point(cfg, 1.02)[0]
    assert row.near_singular
    assert row.stderr >= 0 and np.isfinite(row.stderr)


def test_main_end_to_end(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["--method", "balanced-only", "--t-re", "0.3", "--k", "1,2", "--points", "3000",
                 "--out", str(out), "--checkpoint", str(tmp_path / "ck")])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["k"]) for r in rows] == [1, 2]
    assert all(float(r["value"]) < 1e-6 for r in rows)
    assert (tmp_path / "ck" / "H-0000-k2.json").exists()
    assert main(["--method", "direct", "--points", "10"]) == 2


def test_main_stdout_json(capsys):
    assert main(["--method", "direct", "--points", "2000", "--format", "json", "--t-im", "0.2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data[0]["method"] == "direct" and data[0]["k"] == 0


# --------------------------------------------------------------------------- checkpoints


@pytest.fixture(scope="module")
def small_cloud():
    return sample_cloud(0.2 + 0.1j, 500, seed=11, t=0.2 + 0.1j)


def test_cloud_checkpoint_round_trip(tmp_path, small_cloud):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    checkpoint.save_cloud(small_cloud, p1)
    loaded = checkpoint.load_cloud(p1)
    checkpoint.save_cloud(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(loaded.Z, small_cloud.Z)
    np.testing.assert_array_equal(loaded.dep, small_cloud.dep)
    np.testing.assert_allclose(loaded.raw_mass, small_cloud.raw_mass, rtol=1e-15)


def test_cloud_checkpoint_rejects_off_variety_points(tmp_path, small_cloud):
    p = tmp_path / "a.json"
    checkpoint.save_cloud(small_cloud, p)
    obj = json.loads(p.read_text())
    obj["points"][0]["Z"][1][0] += 0.01
    p.write_text(json.dumps(obj))
    with pytest.raises(CorruptCheckpoint):
        checkpoint.load_cloud(p)


@pytest.fixture(scope="module")
def balanced_k3():
    cloud = sample_cloud(0.0, 20000, seed=12)
    cs = CloudSections.build(cloud, section_basis(3))
    return balanced_metric(0.0, 3, cs, tol=1e-8), cs


def test_balanced_checkpoint_round_trip(tmp_path, balanced_k3):
    res, _ = balanced_k3
    p1, p2 = tmp_path / "h.json", tmp_path / "h2.json"
    checkpoint.save_balanced(res, p1)
    loaded = checkpoint.load_balanced(p1)
    checkpoint.save_balanced(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(loaded.H_star.matrix, res.H_star.matrix)


def test_balanced_checkpoint_resume_is_stable(tmp_path, balanced_k3):
    res, cs = balanced_k3
    p = tmp_path / "h.json"
    checkpoint.save_balanced(res, p)
    loaded = checkpoint.load_balanced(p)
    resumed = balanced_metric(0.0, 3, cs, tol=1e-8, H0=loaded.H_star)
    assert resumed.iterations == 1
    assert abs(resumed.residual - res.residual) < 1e-8


def test_tampered_h_checkpoint(tmp_path, balanced_k3):
    res, _ = balanced_k3
    p = tmp_path / "h.json"
    checkpoint.save_balanced(res, p)
    obj = json.loads(p.read_text())
    obj["H"][0][1][0] += 0.5
    p.write_text(json.dumps(obj))
    with pytest.raises(CorruptCheckpoint):
        checkpoint.load_balanced(p)
    obj["H"][0][1][0] -= 0.5
    obj["version"] = 99
    p.write_text(json.dumps(obj))
    with pytest.raises(VersionMismatch):
        checkpoint.load_balanced(p)
    p.write_text("{not json")
    with pytest.raises(CorruptCheckpoint):
        checkpoint.load_balanced(p)


def test_compare_rows_agree_at_fermat_point():
    cfg = RunConfig(method="compare", n_points=20000, seed=2, k_list=[1], fit_samples=50,
                    fit_points=20000).validate()
    rows = run_point(cfg, 0.0)
    by = {r.method: r for r in rows}
    assert set(by) == {"direct", "quadratic-fit", "quantized"}
    d, q = by["direct"], by["quadratic-fit"]
    assert abs(d.value - q.value) < 3 * math.hypot(d.stderr, q.stderr)
    assert by["quantized"].value > 0
