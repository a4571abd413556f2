import dataclasses

import numpy as np
import pytest

from causal_privacy.cli import main
from causal_privacy.experiment import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentError,
    RunRecord,
    bundled_config,
    load_config,
    parse_config,
    records_from_csv,
    records_to_csv,
    run_experiment,
    summarize,
    write_summary,
)

SMALL = """
[experiment]
network = chain3
sizes = 200
noises = 1.0
models = causal
attacks = learned
seeds = 0

[attacker]
steps = 100
"""

GRID = """
[experiment]
network = chain3
sizes = 200, 300
noises = 0, 2
models = causal, mlp, misspecified(1)
attacks = learned, bounded-loss
seeds = 0, 1

[target_mlp]
hidden = 4
steps = 30

[attacker]
steps = 50
"""


def record(**kw):
    base = dict(
        config_hash="h",
        n_total=100,
        n_train=60,
        noise=0.0,
        model="mlp",
        attack="learned",
        test_dist="P*",
        seed=0,
        train_acc=0.9,
        test_acc=0.8,
        attack_accuracy=0.6,
        advantage=0.2,
        tpr=0.6,
        fpr=0.4,
        n_eval=40,
        adv_stderr=0.1,
    )
    base.update(kw)
    return RunRecord(**base)


def strip_header(text):
    return text.split("\n", 1)[1]


# -- config ------------------------------------------------------------------


def test_bundled_config_parses():
    cfg = load_config(bundled_config("fig3-mini"))
    assert cfg.noises == (0.0, 0.5, 1.0, 2.0)
    assert cfg.models == ("causal", "mlp")
    assert cfg.target_hidden == (128, 512, 128) and cfg.target_mlp.steps == 10_000
    assert cfg.network_path().name == "bench10.net"


@pytest.mark.parametrize(
    "text, fragment",
    [
        (SMALL + "bogus = 1\n", "unknown key"),
        (SMALL + "[extra]\nx = 1\n", "unknown section"),
        (SMALL.replace("models = causal", "models = forest"), "unknown model"),
        (SMALL.replace("attacks = learned", "attacks = shadow"), "unknown attack"),
        (SMALL.replace("network = chain3", "network = nowhere"), "not found"),
        (SMALL.replace("sizes = 200", "sizes = 10"), ">= 20"),
        (SMALL.replace("seeds = 0", "seeds ="), "at least one"),
        (SMALL.replace("sizes = 200", "sizes = many"), "bad value"),
        (SMALL + "[dp]\nscale = 0.1\n[pate]\nteachers = 2\ngamma = 1\n", "at most one"),
        ("[target_mlp]\nsteps = 3\n", "missing \\[experiment\\]"),
    ],
)
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_network_resolved_relative_to_config(tmp_path):
    (tmp_path / "mine.net").write_text("node A 2\nnode Y 2\ncpt A |\n0.5 0.5\ncpt Y | A\n0.9 0.1\n0.1 0.9\noutcome Y\n")
    (tmp_path / "c.ini").write_text(SMALL.replace("chain3", "mine.net"))
    assert load_config(tmp_path / "c.ini").network_path() == tmp_path / "mine.net"


def test_config_hash_stable_and_sensitive():
    a, b = parse_config(SMALL), parse_config(SMALL)
    assert a.hash() == b.hash()
    assert dataclasses.replace(a, workers=4).hash() == a.hash()
    assert parse_config(SMALL.replace("seeds = 0", "seeds = 1")).hash() != a.hash()


# -- runs --------------------------------------------------------------------


def test_single_cell_gives_two_rows():
    records = run_experiment(parse_config(SMALL))
    assert [r.test_dist for r in records] == ["P", "P*"]
    assert all(r.n_total == 200 and r.n_train == 120 for r in records)


def test_grid_completeness_and_determinism():
    cfg = parse_config(GRID)
    first = run_experiment(cfg)
    assert len(first) == 2 * 2 * 3 * 2 * 2 * 2
    again = run_experiment(cfg, workers=2)
    assert strip_header(records_to_csv(first)) == strip_header(records_to_csv(again))
    for r in first:
        assert abs(r.attack_accuracy - (0.5 + r.advantage / 2)) <= 1e-12


def test_seed_offset_moves_seeds():
    records = run_experiment(parse_config(SMALL), seed_offset=5)
    assert {r.seed for r in records} == {5}


def test_cell_errors_carry_context():
    cfg = parse_config(SMALL.replace("models = causal", "models = misspecified(4)"))
    with pytest.raises(ExperimentError, match="size=200, seed=0"):
        run_experiment(cfg)


def test_dp_and_pate_rows_record_epsilon():
    dp_rows = run_experiment(parse_config(SMALL + "[dp]\nscale = 0.5\nsensitivity_trials = 3\n"))
    assert all(r.epsilon is not None and r.adv_bound == pytest.approx(np.expm1(r.epsilon)) for r in dp_rows)
    pate_rows = run_experiment(parse_config(SMALL + "[pate]\nteachers = 3\ngamma = 0.25\n"))
    assert all(r.epsilon == 0.25 for r in pate_rows)


def test_csv_round_trip():
    records = [record(), record(seed=1, epsilon=0.5, adv_bound=float(np.expm1(0.5)))]
    text = records_to_csv(records, timestamp="T")
    lines = text.splitlines()
    assert lines[0].startswith("# causal-privacy results v1") and lines[1] == ",".join(CSV_COLUMNS)
    assert records_from_csv(text) == records


# -- summaries ---------------------------------------------------------------


def test_summary_single_row_echo():
    s = summarize([record()])
    row = s.lookup("mlp", "learned", "P*", 100, 0.0)
    assert (row.attack_median, row.attack_q1, row.attack_q3, row.n_seeds) == (0.6, 0.6, 0.6, 1)
    assert "0.6000" in s.text


def test_summary_two_seed_median_is_midpoint():
    s = summarize([record(attack_accuracy=0.6), record(seed=1, attack_accuracy=0.7)])
    assert s.lookup("mlp", "learned", "P*", 100, 0.0).attack_median == pytest.approx(0.65)


def test_summary_flags_non_monotone_mlp():
    rows = [record(noise=0.0, attack_accuracy=0.6), record(noise=1.0, attack_accuracy=0.55)]
    assert len(summarize(rows).flags) == 1
    rows = [record(noise=0.0, attack_accuracy=0.6), record(noise=1.0, attack_accuracy=0.65)]
    assert summarize(rows).flags == ()
    causal = [record(model="causal", noise=0.0, attack_accuracy=0.6), record(model="causal", noise=1.0, attack_accuracy=0.5)]
    assert summarize(causal).flags == ()


def test_summary_files(tmp_path):
    paths = write_summary(summarize([record(), record(test_dist="P")]), tmp_path)
    assert sorted(p.name for p in paths) == [
        "plot_attack_vs_noise.csv",
        "plot_attack_vs_size.csv",
        "plot_target_accuracy.csv",
        "summary.txt",
    ]
    noise_rows = (tmp_path / "plot_attack_vs_noise.csv").read_text().splitlines()
    assert len(noise_rows) == 2


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])


# -- command line ------------------------------------------------------------


def test_cli_run_and_summarize(tmp_path, capsys):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--workers", "1", "--seed-offset", "2"]) == 0
    first = (out / "results.csv").read_text()
    assert main(["run", str(cfg), "--out", str(tmp_path / "again"), "--seed-offset", "2"]) == 0
    assert strip_header(first) == strip_header((tmp_path / "again" / "results.csv").read_text())
    assert main(["summarize", str(out)]) == 0
    assert "causal" in capsys.readouterr().out
    assert (out / "plot_attack_vs_noise.csv").exists()


def test_cli_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL + "typo = 3\n")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    assert main(["run"]) == 2
    assert main(["launch", "x"]) == 2


def test_cli_data_errors(tmp_path):
    net = tmp_path / "bad.net"
    net.write_text("node A 2\ncpt A |\n0.2 0.2\noutcome A\n")
    assert main(["validate-net", str(net)]) == 3
    assert main(["oracle-joint", str(net)]) == 3
    assert main(["summarize", str(tmp_path / "nothing")]) == 3
    (tmp_path / "results.csv").write_text("a,b\n1,2\n")
    assert main(["summarize", str(tmp_path)]) == 3
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL.replace("models = causal", "models = misspecified(4)"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_cli_validate_and_oracle(tmp_path, capsys):
    path = bundled_config("fig3-mini").parent / "chain3.net"
    assert main(["validate-net", str(path)]) == 0
    assert "order: A B C" in capsys.readouterr().out
    out = tmp_path / "joint.csv"
    assert main(["oracle-joint", str(path), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "A,B,C,probability" and len(lines) == 1 + 12
    assert sum(float(l.rsplit(",", 1)[1]) for l in lines[1:]) == pytest.approx(1.0, abs=1e-12)
