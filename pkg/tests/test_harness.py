import csv
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from derlab import harness as H
from derlab.errors import ConfigError, MissingSection, ParseError, UnknownKey
from derlab.operators import policy_iteration

DEMOS = Path(__file__).resolve().parents[1] / "demos" / "configs"

TINY = """\
[defaults]
gamma = 0.9
batch_size = 8
learning_starts = 20
buffer_capacity = 500
polyak_tau = none
target_period = 10
hidden = 8

[env]
name = chain
n = 3

[agent]
variant = fzi
variants = AC, AC+VE

[experiment]
seeds = 0, 1
total_steps = 120
eval_every = 40
eval_episodes = 2
"""


def tiny(**changes):
    return replace(H.parse_config(TINY), **changes)


# config ------------------------------------------------------------------------------


def test_empty_defaults_give_default_config():
    cfg = H.parse_config("[defaults]\n")
    assert cfg.agent.gamma == 0.99 and cfg.agent.batch_size == 256 and cfg.agent.n_atoms == 51
    assert cfg.agent.n_quantiles == 32 and cfg.agent.huber_kappa == 1.0 and cfg.agent.polyak_tau == 5e-3
    assert cfg.agent.lr_critic == 3e-4 and cfg.agent.beta == 0.2
    assert cfg.eval_every == 500 and cfg.eval_episodes == 10


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as info:
        H.parse_config("[defaults]\n# discount\ngamma = 1.5\n")
    assert info.value.line == 3 and "line 3" in str(info.value)
    with pytest.raises(ParseError):
        H.parse_config("[defaults]\nbatch_size = many\n")
    with pytest.raises(ParseError):
        H.parse_config("[defaults]\njust words\n")
    with pytest.raises(ParseError):
        H.parse_config("[defaults]\n[experiment]\nseeds =\n")


def test_unknown_keys_and_sections():
    with pytest.raises(UnknownKey):
        H.parse_config("[defaults]\nlearning_rate = 0.1\n")
    with pytest.raises(UnknownKey):
        H.parse_config("[defaults]\n[extras]\n")
    with pytest.raises(UnknownKey):
        H.parse_config("[defaults]\n[env]\nname = chain\nwidth = 3\n")
    with pytest.raises(MissingSection):
        H.parse_config("[env]\nname = chain\n")
    assert issubclass(UnknownKey, ConfigError) and issubclass(MissingSection, ConfigError)


def test_dump_round_trip():
    for text in (TINY, "[defaults]\n", *(p.read_text() for p in sorted(DEMOS.glob("*.ini")))):
        cfg = H.parse_config(text)
        canonical = H.dump(cfg)
        assert H.parse_config(canonical) == cfg
        assert H.dump(H.parse_config(canonical)) == canonical


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        H.load_config(tmp_path / "absent.ini")


def test_seed_override(monkeypatch):
    cfg = tiny(seeds=(0, 1, 2))
    monkeypatch.setenv(H.SEED_ENV, "40")
    assert cfg.effective_seeds() == (40, 41, 42)
    monkeypatch.setenv(H.SEED_ENV, "x")
    with pytest.raises(ConfigError):
        cfg.effective_seeds()
    monkeypatch.delenv(H.SEED_ENV)
    assert cfg.effective_seeds() == (0, 1, 2)


def test_environments_build():
    for name in ("chain", "risky_chain", "slip_chain", "cliff", "risky_bandit"):
        env = H.ExperimentConfig(env=name).make_env()
        assert env.gamma == 0.99


def test_file_environment(tmp_path):
    from derlab.mdp import make_chain, to_text

    path = tmp_path / "c.mdp"
    path.write_text(to_text(make_chain(3, 0.0, gamma=0.5)))
    cfg = H.parse_config(f"[defaults]\ngamma = 0.8\n[env]\nname = file\npath = {path}\n")
    env = cfg.make_env()
    assert env.n_states == 3 and env.gamma == 0.8


# runs ----------------------------------------------------------------------------------


def test_chain_fqi_reaches_optimal_policy():
    cfg = H.load_config(DEMOS / "chain_fqi.ini")
    pi_star, _ = policy_iteration(cfg.make_env())
    best = int(np.argmax(pi_star[0]))
    results = H.run_experiment(cfg)
    assert len(results) == 5
    assert sum(r.final_policy[0] == best for r in results) >= 4
    for r in results:
        steps = [c[0] for c in r.curve]
        assert steps == sorted(set(steps)) and steps[-1] == cfg.total_steps


def _artifacts(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


def test_runs_are_byte_identical(tmp_path):
    for variant in ("fzi", "derac", "AC+RE+VE"):
        cfg = tiny(variant=variant)
        H.write_runs(H.run_experiment(cfg), tmp_path / f"a-{variant}")
        H.write_runs(H.run_experiment(cfg), tmp_path / f"b-{variant}")
        assert _artifacts(tmp_path / f"a-{variant}") == _artifacts(tmp_path / f"b-{variant}")


def test_worker_pool_matches_serial():
    cfg = tiny()
    serial = H.run_experiment(cfg)
    pooled = H.run_experiment(cfg, workers=2)
    assert [r.curve_csv() for r in serial] == [r.curve_csv() for r in pooled]


def test_zero_steps_gives_empty_curve():
    (r, *_) = H.run_experiment(tiny(total_steps=0))
    assert r.curve == [] and r.episodes == [] and math.isnan(r.auc)
    assert r.curve_csv() == "step,return_mean,return_std,seed,variant\n"
    assert len(r.final_policy) == 3


def test_metadata_sidecar():
    (r, *_) = H.run_experiment(tiny(variant="derac"))
    text = r.metadata_text()
    assert "clipped_decompositions = " in text and "config.lam = 0.5" in text
    assert "wall_time" not in text and r.metadata["wall_time"] >= 0


# sweeps and ablations ----------------------------------------------------------------------


def test_sweep_eps_one_equals_vanilla():
    cfg = tiny(seeds=(3,))
    sweep = H.sweep_epsilon(cfg, [1.0])
    vanilla = H.run_experiment(replace(cfg, agent=cfg.agent.replace(fzi_mode="vanilla_ce")), "fzi")
    assert sweep.results[0].curve == vanilla[0].curve
    assert sweep.results[0].episodes == vanilla[0].episodes


def test_sweep_eps_zero_and_table():
    cfg = tiny()
    table = H.sweep_epsilon(cfg, [0.0, 0.5])
    assert table.auc.shape == (2, 2)
    assert [r.variant for r in table.results] == ["fzi-eps0"] * 2 + ["fzi-eps0.5"] * 2
    rows = list(csv.reader(io.StringIO(table.to_csv())))
    assert rows[0] == ["epsilon", "seed", "auc"] and len(rows) == 5
    assert "spearman" in table.summary()
    with pytest.raises(ConfigError):
        H.sweep_epsilon(cfg, [1.5])


def test_spearman_statistic():
    t = H.SweepTable((0.0, 0.5, 1.0), (0,), np.array([[0.1], [0.3], [0.2]]))
    assert t.spearman == pytest.approx(0.5)
    flat = H.SweepTable((0.0, 1.0), (0,), np.array([[0.2], [0.2]]))
    assert math.isnan(flat.spearman)


def test_ablate_ac_groups_by_variant():
    runs = H.ablate_ac(tiny())
    assert list(runs) == ["AC", "AC+VE"]
    assert all(len(rs) == 2 for rs in runs.values())
    assert runs["AC+VE"][0].metadata["config.entropy_bonus"] == "true"


# export --------------------------------------------------------------------------------------


def fake(variant, seed, values):
    curve = [(100 * (i + 1), float(v), 0.0) for i, v in enumerate(values)]
    return H.RunResult(variant, seed, curve, [], [], {})


def test_csv_export_and_reload(tmp_path):
    results = [fake("AC", 0, [0.1, 0.4]), fake("AC+VE", 1, [0.2, 0.3])]
    paths = H.export_results(results, tmp_path, "csv")
    assert {p.name for p in paths} >= {"AC_seed0.curve.csv", "AC+VE_seed1.curve.csv"}
    header = (tmp_path / "AC_seed0.curve.csv").read_text().splitlines()[0]
    assert header == "step,return_mean,return_std,seed,variant"
    back = {(r.variant, r.seed): r.curve for r in H.load_curves(tmp_path)}
    assert back[("AC", 0)] == results[0].curve


def test_svg_export(tmp_path):
    results = [fake("AC", s, np.linspace(0, 1, 8) + s) for s in range(3)]
    results += [fake("AC+VE", s, np.linspace(1, 0, 8)) for s in range(3)]
    (path,) = H.export_results(results, tmp_path, "svg", title="a < b")
    root = ET.parse(path).getroot()
    ns = {"s": "http://www.w3.org/2000/svg"}
    lines = root.findall("s:polyline", ns)
    assert sorted(l.find("s:title", ns).text for l in lines) == ["AC", "AC+VE"]
    assert len(root.findall("s:polygon", ns)) == 2


def test_single_seed_band_has_zero_width(tmp_path):
    (path,) = H.export_results([fake("AC", 0, [0.0, 1.0, 0.5, 0.7])], tmp_path, "svg")
    ns = {"s": "http://www.w3.org/2000/svg"}
    poly = ET.parse(path).getroot().find("s:polygon", ns).get("points").split()
    upper, lower = poly[: len(poly) // 2], poly[len(poly) // 2:]
    assert upper == lower[::-1]


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        H.export_results([], tmp_path)
    with pytest.raises(ValueError):
        H.export_results([fake("AC", 0, [1.0])], tmp_path, "png")


def test_smoothing_and_aggregate():
    np.testing.assert_allclose(H.smooth([1, 2, 3, 4, 5, 6], 5), [1, 1.5, 2, 2.5, 3, 4])
    steps, mean, std = H.aggregate([fake("AC", 0, [0.0, 1.0]), fake("AC", 1, [1.0, 1.0])])["AC"]
    np.testing.assert_array_equal(steps, [100, 200])
    np.testing.assert_allclose(mean, [0.5, 1.0])
    np.testing.assert_allclose(std, [0.5, 0.0])
