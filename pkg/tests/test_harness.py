import numpy as np
import pytest

from samdp.core import load
from samdp.harness.cli import main
from samdp.harness.config import ConfigError, grid_points, parse_config
from samdp.harness.results import check_worst_consistency, markdown_summary, read_csv, rows_for_run

BASE = """\
[experiment]
name = demo
methods = vanilla, valt-kl
attacks = uniform, mad, optimal
seeds = 0, 1

[environment]
generator = random
n_states = 5
n_actions = 3
neighborhood_size = 3

[method.valt-kl]
improvement_rounds = 4
eval_sweeps_per_round = 10
"""

SWEEP = BASE + "\n[sweep]\nalpha_attk = 0.3, 3\n"


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_defaults():
    cfg = parse_config(BASE)
    assert [m.kind for m in cfg.methods] == ["vanilla", "valt-kl"]
    assert cfg.methods[1].options == {"improvement_rounds": 4, "eval_sweeps_per_round": 10}
    assert cfg.seeds == [0, 1] and cfg.attacks == ["uniform", "mad", "optimal"]
    assert cfg.build_env(0).n_states == 5
    assert cfg.build_env(0).name != cfg.build_env(1).name


def test_named_method_with_kind():
    text = BASE.replace("vanilla, valt-kl", "vanilla, robust").replace("[method.valt-kl]", "[method.robust]\nkind = valt-eps")
    cfg = parse_config(text.replace("eval_sweeps_per_round = 10\n", "") + "kappa_worst = 0.5\n")
    assert cfg.methods[1].options == {"improvement_rounds": 4, "kappa_worst": 0.5}
    assert cfg.methods[1].kind == "valt-eps"


@pytest.mark.parametrize(
    "edit, needle",
    [
        (("uniform, mad", "uniform, pgd"), "line 4"),
        (("uniform, mad", "uniform, pgd"), "'pgd'"),
        (("improvement_rounds = 4", "improvement_round = 4"), "improvement_round"),
        (("improvement_rounds = 4", "improvement_rounds = four"), "line 14"),
        (("n_actions = 3", "n_acts = 3"), "n_acts"),
        (("seeds = 0, 1", "seeds ="), "seeds"),
        (("generator = random", "generator = maze"), "maze"),
        (("vanilla, valt-kl", "vanilla, valt-xx"), "valt-xx"),
    ],
)
def test_config_errors_name_the_key(edit, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(BASE.replace(*edit))


def test_config_structure_errors():
    with pytest.raises(ConfigError, match="missing section"):
        parse_config("[environment]\n")
    with pytest.raises(ConfigError, match="not listed"):
        parse_config(BASE + "[method.atla]\nouter_rounds = 2\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(BASE + "[extra]\n")
    with pytest.raises(ConfigError, match="empty grid"):
        grid_points(parse_config(BASE + "[sweep]\nalpha_attk =\n"))
    with pytest.raises(ConfigError, match="sweep"):
        grid_points(parse_config(BASE))


def test_rows_and_markdown():
    rows = rows_for_run("e", "m", 0, {"clean": 1.0, "a": 0.5, "b": 0.25}, 3)
    rows += rows_for_run("e", "m", 1, {"clean": 0.0, "a": 0.25, "b": 0.75}, 3)
    check_worst_consistency(rows)
    assert [r.attack for r in rows[:3]] == ["a", "b", "worst"]
    md = markdown_summary(rows, "t")
    # means 0.375 and 0.5, rowwise min 0.375 (not the mean of per-seed minima)
    assert "| e | m | 0.5000 | 0.3750 | 0.5000 | 0.3750 |" in md
    bad = [rows[0].__class__(**{**rows[0].__dict__, "worst_J": 0.9})] + rows[1:]
    with pytest.raises(ValueError):
        check_worst_consistency(bad)


def test_train_evaluate_roundtrip(tmp_path, capsys):
    cfg = write(tmp_path, BASE)
    out = tmp_path / "out"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    d = out / "runs" / "valt-kl" / "seed-1"
    for f in ("model.samdp", "pi.txt", "q.txt", "nu.txt", "history.csv", "method.ini", "config.ini"):
        assert (d / f).exists()
    assert load(d / "model.samdp").n_states == 5
    assert np.loadtxt(d / "pi.txt").shape == (5, 3)
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "results.csv")
    assert len(rows) == 2 * 3 * 2 + 2 * 2
    check_worst_consistency(rows)
    md = (out / "summary.md").read_text()
    assert markdown_summary(rows, "demo: attacked returns") == md
    assert md in capsys.readouterr().out
    first = (out / "results.csv").read_bytes()
    other = tmp_path / "again"
    assert main(["train", "--config", cfg, "--out", str(other), "--jobs", "2"]) == 0
    assert main(["evaluate", "--config", cfg, "--out", str(other)]) == 0
    assert (other / "results.csv").read_bytes() == first
    assert (other / "runs/valt-kl/seed-0/pi.txt").read_bytes() == (out / "runs/valt-kl/seed-0/pi.txt").read_bytes()


def test_evaluate_without_artifacts_is_io_error(tmp_path):
    cfg = write(tmp_path, BASE)
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "none")]) == 3


def test_seed_override(tmp_path):
    cfg = write(tmp_path, BASE)
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--out", str(out), "--seed", "7"]) == 0
    assert sorted(p.name for p in (out / "runs" / "vanilla").iterdir()) == ["seed-7"]


def test_sweep(tmp_path):
    cfg = write(tmp_path, SWEEP)
    out = tmp_path / "s"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 2 * 16
    assert {r.grid for r in rows} == {(("alpha_attk", 0.3),), (("alpha_attk", 3.0),)}
    assert (out / "sweep.csv").read_text().startswith("grid_alpha_attk,env_id")
    # vanilla ignores the adversary temperature
    van = {r.grid: r.attacked_J for r in rows if r.method == "vanilla" and r.attack == "optimal" and r.seed == 0}
    assert len(set(van.values())) == 1
    again = tmp_path / "s2"
    assert main(["sweep", "--config", cfg, "--out", str(again)]) == 0
    assert (again / "sweep.csv").read_bytes() == (out / "sweep.csv").read_bytes()


def test_sweep_grid_guard(tmp_path):
    big = BASE + "[sweep]\nalpha_attk = " + ", ".join(str(i + 1) for i in range(101)) + "\nalpha_ent = " + ", ".join(str(0.01 * (i + 1)) for i in range(100)) + "\n"
    assert main(["sweep", "--config", write(tmp_path, big), "--out", str(tmp_path / "g")]) == 2
    assert main(["sweep", "--config", write(tmp_path, BASE + "[sweep]\nalpha_attk =\n"), "--out", str(tmp_path / "g")]) == 2


def test_sweep_plot(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = write(tmp_path, SWEEP.replace("seeds = 0, 1", "seeds = 0"))
    out = tmp_path / "p"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--plot"]) == 0
    assert (out / "sweep.svg").read_text().lstrip().startswith("<?xml")


def test_usage_errors(tmp_path, capsys):
    assert main(["train", "--config", write(tmp_path, BASE.replace("uniform, mad", "uniform, pgd"))]) == 2
    assert "line 4" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_gen(tmp_path):
    out = tmp_path / "m.samdp"
    assert main(["gen", "--env", "random", "--set", "n_states=4", "--set", "n_actions=2", "--set", "neighborhood_size=2", "--seed", "3", "--out", str(out)]) == 0
    m = load(out)
    assert (m.n_states, m.n_actions) == (4, 2)
    assert main(["gen", "--env", "fog_bridges", "--set", "fog_level=0.5", "--out", str(tmp_path / "f.samdp")]) == 0
    assert main(["gen", "--env", "random", "--set", "n_states", "--out", str(out)]) == 2
    assert main(["gen", "--out", str(out)]) == 2
    cfg = write(tmp_path, "[environment]\ngenerator = file\npath = m.samdp\n", "env.ini")
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "copy.samdp")]) == 0
    assert (tmp_path / "copy.samdp").read_bytes() == out.read_bytes()


def test_verify_quick(tmp_path, capsys):
    assert main(["verify", "--scale", "quick", "--out", str(tmp_path)]) == 0
    report = (tmp_path / "verify.txt").read_text()
    assert report.splitlines()[-1].endswith("checks passed")
    assert "FAIL" not in report
    assert main(["verify", "--scale", "quick", "--out", str(tmp_path / "b")]) == 0
    strip = lambda t: [l.rsplit(" [", 1)[0] for l in t.splitlines()]
    assert strip((tmp_path / "b" / "verify.txt").read_text()) == strip(report)


def test_verify_detects_a_broken_discount(capsys):
    assert main(["verify", "--scale", "quick", "--fault-gamma-scale", "1.02"]) == 1
    out = capsys.readouterr().out
    assert any(l.startswith("FAIL") and "contraction" in l for l in out.splitlines())
