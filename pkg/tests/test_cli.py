import csv
import io
import json
import subprocess
import sys

import pytest

from poolkit.cli import RunManifest, run, sha256_file
from poolkit.design import read_design


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])["error"]


def test_optimize_headline(capsys):
    code, out, _ = call(capsys, "optimize", "--n", 33000, "--c", 10, "--fraction", 0.5)
    assert code == 0
    assert out.splitlines()[0] == "v=170 k=10"
    assert "clones_per_pool=1941" in out


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for path in (a, b):
        assert call(capsys, "generate", "--n", 5, "--v", 6, "--k", 2, "--seed", 1, "--out", path)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    d = read_design(a)
    assert (d.n, d.v, d.k) == (5, 6, 2)


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    monkeypatch.setenv("POOLKIT_SEED", "7")
    call(capsys, "generate", "--n", 50, "--v", 20, "--k", 3, "--out", a)
    call(capsys, "generate", "--n", 50, "--v", 20, "--k", 3, "--seed", 7, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("POOLKIT_SEED", "seven")
    code, _, err = call(capsys, "generate", "--n", 5, "--v", 6, "--k", 2)
    assert code == 2 and error_of(err) == "usage"


def test_evaluate_reference_design(tmp_path, capsys):
    path = tmp_path / "d.txt"
    call(capsys, "generate", "--n", 1298, "--v", 47, "--k", 4, "--seed", 3, "--out", path)
    code, out, _ = call(capsys, "evaluate", "--design", path, "--c", 2.5, "--method", "exact")
    assert code == 0
    values = dict(line.split("=") for line in out.split())
    assert abs(float(values["resolved_positives"]) - 1.36) < 0.005


def test_exit_codes(tmp_path, capsys):
    code, _, err = call(capsys, "frobnicate")
    assert code == 2 and error_of(err) == "usage"
    code, _, err = call(capsys)
    assert code == 2
    code, _, err = call(capsys, "optimize", "--n", 1000, "--c", 4, "--fraction", 0.9, "--v-max", 10)
    assert code == 3 and error_of(err) == "infeasible"
    code, _, err = call(capsys, "generate", "--kind", "ksets_packing", "--n", 500, "--v", 8,
                        "--k", 4, "--t", 1, "--max-retries", 20)
    assert code == 3
    code, _, err = call(capsys, "evaluate", "--n", 10, "--v", 5, "--k", 2, "--c", 20)
    assert code == 2
    code, _, err = call(capsys, "evaluate", "--n", 10, "--v", 5, "--k", 2, "--c", 1,
                        "--precision-digits", 3)
    assert code == 2
    missing = tmp_path / "missing.txt"
    code, _, _ = call(capsys, "validate", "--design", missing)
    assert code == 2


def test_validate_reports_failures(tmp_path, capsys):
    path = tmp_path / "d.txt"
    call(capsys, "generate", "--n", 300, "--v", 12, "--k", 4, "--seed", 0, "--out", path)
    # 300 draws from 495 possible 4-sets repeat some sets
    code, out, err = call(capsys, "validate", "--design", path, "--k", 4)
    assert code == 3 and error_of(err) == "validation"
    assert "duplicate" in out and out.rstrip().endswith("ok=false")
    sparse = tmp_path / "e.txt"
    call(capsys, "generate", "--n", 300, "--v", 60, "--k", 4, "--seed", 0, "--out", sparse)
    code, out, _ = call(capsys, "validate", "--design", sparse, "--k", 4)
    assert code == 0 and out.rstrip().endswith("ok=true")
    code, _, _ = call(capsys, "validate", "--design", sparse, "--k", 5)
    assert code == 3


def test_manifest_and_replay(tmp_path, capsys):
    out = tmp_path / "d.txt"
    call(capsys, "generate", "--kind", "ksets_packing", "--n", 40, "--v", 20, "--k", 3, "--t", 1,
         "--seed", 4, "--out", out)
    manifest_path = tmp_path / "d.txt.manifest.json"
    manifest = RunManifest.loads(manifest_path.read_text())
    assert manifest.subcommand == "generate" and manifest.seed == 4
    assert manifest.outputs == {str(out): sha256_file(out)}
    assert call(capsys, "--replay", manifest_path)[0] == 0
    out.write_text(out.read_text().replace("0", "1", 1))
    # the rerun overwrites the tampered output with the recorded bytes
    assert call(capsys, "--replay", manifest_path)[0] == 0
    assert sha256_file(out) == manifest.outputs[str(out)]


def test_replay_detects_changed_inputs(tmp_path, capsys):
    design = tmp_path / "d.txt"
    call(capsys, "generate", "--n", 40, "--v", 10, "--k", 3, "--out", design, "--manifest", "/dev/null")
    out = tmp_path / "s.csv"
    call(capsys, "schedule", "--design", design, "--out", out)
    manifest_path = f"{out}.manifest.json"
    assert call(capsys, "--replay", manifest_path)[0] == 0
    call(capsys, "generate", "--n", 40, "--v", 10, "--k", 3, "--seed", 99, "--out", design,
         "--manifest", "/dev/null")
    code, _, err = call(capsys, "--replay", manifest_path)
    assert code == 3 and error_of(err) == "validation"


def test_full_pipeline(tmp_path, capsys):
    design, assay = tmp_path / "d.txt", tmp_path / "a.txt"
    post, sched = tmp_path / "p.csv", tmp_path / "s.csv"
    assert call(capsys, "generate", "--n", 12, "--v", 8, "--k", 3, "--seed", 2, "--out", design)[0] == 0
    assert call(capsys, "simulate", "--design", design, "--c", 1.5, "--fp", 0.05, "--fn", 0.1,
                "--assay-out", assay, "--positives", "3,7", "--seed", 5)[0] == 0
    assert len(assay.read_text().strip()) == 8
    code, _, _ = call(capsys, "decode", "--design", design, "--assay", assay, "--c", 1.5,
                      "--fp", 0.05, "--fn", 0.1, "--method", "exact", "--out", post)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(post.read_text())))
    assert len(rows) == 12 and list(rows[0]) == ["clone_id", "posterior", "stderr", "rank"]
    code, out, _ = call(capsys, "rank", "--posterior", post, "--budget", 3)
    assert code == 0 and out.splitlines()[0] == "clone_id,posterior,rank" and len(out.split()) == 4
    code, gibbs, _ = call(capsys, "decode", "--design", design, "--assay", assay, "--c", 1.5,
                          "--fp", 0.05, "--fn", 0.1, "--sweeps", 500, "--chains", 2, "--seed", 1)
    assert code == 0 and gibbs.startswith("clone_id,posterior")
    assert call(capsys, "schedule", "--design", design, "--out", sched)[0] == 0
    assert len(sched.read_text().splitlines()) == 1 + 12 * 3
    code, out, _ = call(capsys, "schedule", "--design", design, "--summary")
    assert code == 0 and out
    code, out, _ = call(capsys, "simulate", "--n", 200, "--v", 20, "--k", 3, "--c", 2,
                        "--replicates", 50)
    assert code == 0 and out.startswith("category,mean,stderr")


def test_sweep_csv(capsys):
    code, out, _ = call(capsys, "sweep", "--n-range", 1000, 10000, "--c-range", 1, 4,
                        "--resolution", 2)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4 and all(int(r["v_min"]) > 0 for r in rows)


@pytest.mark.parametrize("kind,extra", [
    ("row_column", ["--lots", 1, "--dishes", 2]),
    ("cubic", ["--n", 300, "--side", 7]),
    ("ksets_packing", ["--n", 200, "--v", 30, "--k", 4, "--t", 2, "--balance", 26, 27]),
])
def test_generate_other_kinds_round_trip(tmp_path, capsys, kind, extra):
    path = tmp_path / "d.txt"
    assert call(capsys, "generate", "--kind", kind, *extra, "--seed", 1, "--out", path)[0] == 0
    d = read_design(path)
    assert call(capsys, "validate", "--design", path)[0] == 0
    again = tmp_path / "e.txt"
    call(capsys, "generate", "--kind", kind, *extra, "--seed", 1, "--out", again)
    assert read_design(again) == d


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "poolkit", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("poolkit ")
