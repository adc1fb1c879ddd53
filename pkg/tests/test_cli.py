import csv
import hashlib
import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinpp.cli import main
from steinpp.experiments import EXPERIMENTS, ConfigError, ExperimentConfig, parse_config, run_experiment


def render(cfg: ExperimentConfig) -> str:
    lines = []
    for key, val in cfg.to_dict().items():
        if val is None:
            continue
        if isinstance(val, list):
            val = ", ".join(repr(v) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


@settings(max_examples=60)
@given(st.sampled_from(EXPERIMENTS), st.integers(2, 4), st.lists(st.integers(3, 10**6), min_size=1, max_size=3),
       st.floats(0.0, 3.0), st.integers(2, 10**5), st.integers(0, 2**63), st.sampled_from(["csv", "json"]),
       st.floats(0.01, 0.49))
def test_config_text_roundtrip(exp, d, ns, b0, reps, seed, fmt, radius):
    cfg = ExperimentConfig(experiment=exp, d=d, k=1, n=tuple(ns), b0=b0, replicates=reps, seed=seed,
                           format=fmt, radius=radius).validate()
    assert parse_config(render(cfg)) == cfg


def test_config_comments_aliases_and_overrides():
    cfg = parse_config("# a comment\nexperiment = knn-poisson  # trailing\nn_list = 1e3, 1e4\nreplicates = 1e4\n",
                       {"seed": 9, "format": None})
    assert cfg.n == (1000, 10000)
    assert cfg.replicates == 10_000
    assert cfg.seed == 9


@pytest.mark.parametrize("text, field", [
    ("experiment = nope\n", "experiment"),
    ("experiment = mecke-check\nreplicates = 1\n", "replicates"),
    ("experiment = knn-poisson\nd = 1\n", "d"),
    ("experiment = critical-points\nk = 3\n", "k"),
    ("experiment = bounds\nb0 = 2\nb = 1\n", "b"),
    ("experiment = mecke-check\ncolour = red\n", "colour"),
    ("experiment = mecke-check\nsurrogates = maybe\n", "surrogates"),
    ("experiment = mecke-check\ndensity = cosine:x\n", "density"),
    ("replicates = 10\n", "experiment"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert any(p.startswith(field) for p in err.value.problems)


def test_cli_bad_config_exits_2(tmp_path, capsys):
    assert main(["mecke-check", "--out", str(tmp_path), "--set", "replicates=0"]) == 2
    assert "replicates" in capsys.readouterr().err
    assert main(["mecke-check", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_writes_results_manifest_and_acceptance(tmp_path):
    out = tmp_path / "run"
    code = main(["mecke-check", "--out", str(out), "--set", "replicates=500", "--seed", "3"])
    assert code == 0
    body = (out / "results.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(body)))
    assert len(rows) == 1 and float(rows[0]["replicates"]) == 500
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["results_sha256"] == hashlib.sha256(body.encode()).hexdigest()
    acc = json.loads((out / "acceptance.json").read_text())
    assert acc["passed"] and acc["complete"]


def test_cli_json_format(tmp_path):
    out = tmp_path / "j"
    main(["mecke-check", "--out", str(out), "--set", "replicates=200", "--format", "json"])
    rows = json.loads((out / "results.json").read_text())
    assert rows[0]["mass"] == 50.0


def test_failed_check_sets_exit_code(tmp_path):
    # a strict ratio tolerance cannot hold for 30 replicates
    code = main(["critical-points", "--out", str(tmp_path), "--set", "n=500", "--set", "replicates=30",
                 "--set", "ratio_tolerance=0"])
    assert code == 1
    assert not json.loads((tmp_path / "acceptance.json").read_text())["passed"]


def test_selftest_and_mutation(tmp_path, capsys):
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    assert "13/13 checks passed" in (tmp_path / "selftest.txt").read_text()
    assert main(["selftest", "--mutate", "circumsphere"]) == 1
    assert "FAIL  circumsphere_examples" in capsys.readouterr().out


def test_bounds_experiment_columns():
    cfg = parse_config("experiment = bounds\nn = 1000\nreplicates = 50\n")
    res = run_experiment(cfg)
    row = res.rows[0]
    for key in ("dtv_lm", "e1", "se_e1", "e4", "total", "bound_replicates"):
        assert key in row
