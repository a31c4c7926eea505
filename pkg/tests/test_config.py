import json

import pytest

from swimquad.config import ConfigError, RunConfig, from_dict, load_config, with_seed


def test_defaults_are_valid():
    cfg = from_dict({})
    assert cfg == RunConfig()
    assert len(cfg.synth.grid.grid()) == 1280
    assert cfg.optimize.weights == (1.0, 4.0, 2.0)


def test_seed_flows_into_train_and_optimize():
    cfg = from_dict({"seed": 9, "train": {"max_epochs": 3}})
    assert cfg.train.seed == 9 and cfg.optimize.seed == 9
    assert cfg.train.max_epochs == 3
    again = with_seed(cfg, 4)
    assert (again.seed, again.train.seed, again.optimize.seed) == (4, 4, 4)
    assert again.train.max_epochs == 3


@pytest.mark.parametrize("doc,path", [
    ({"trian": {}}, "trian"),
    ({"train": {"epochs": 3}}, "train.epochs"),
    ({"synth": {"grid": {"phis": [60]}}}, "synth.grid.phis"),
    ({"synth": {"noise": {"amp": 1}}}, "synth.noise.amp"),
    ({"optimize": {"seed": 1}}, "optimize.seed"),
])
def test_unknown_keys_name_their_path(doc, path):
    with pytest.raises(ConfigError) as exc:
        from_dict(doc)
    assert exc.value.path == path
    assert f"'{path}'" in str(exc.value)


@pytest.mark.parametrize("doc,path,bound", [
    ({"synth": {"grid": {"theta_H_min_deg": [10, 20]}}}, "synth.grid.theta_H_min_deg[1]", "[-50.0, 10.0]"),
    ({"synth": {"grid": {"freq": [0.7]}}}, "synth.grid.freq[0]", "[0.3, 0.6]"),
    ({"synth": {"grid": {"phi_deg": [30]}}}, "synth.grid.phi_deg[0]", "[60.0, 300.0]"),
    ({"simulate": {"freq": 0.1}}, "simulate.freq", "[0.2, 0.65]"),
    ({"simulate": {"theta_K_max_deg": 0}}, "simulate.theta_K_max_deg", "[-80.0, -20.0]"),
    ({"simulate": {"alpha_deg": [0, 0, 0, 360]}}, "simulate.alpha_deg[3]", "[0.0, 360.0)"),
])
def test_out_of_range_values_report_bounds(doc, path, bound):
    with pytest.raises(ConfigError) as exc:
        from_dict(doc)
    assert exc.value.path == path
    assert bound in str(exc.value)


@pytest.mark.parametrize("doc", [
    {"seed": -1}, {"seed": 1.5}, {"seed": True},
    {"optimize": {"population": 7}},
    {"train": {"dropout": 1.5}},
    {"body": {"mass": 0}},
    {"simulate": {"alpha_deg": [0, 0, 0]}},
    {"preprocess": {"window": 1}},
    {"synth": {"grid": {"speeds": []}}},
    {"train": []},
])
def test_invalid_documents_rejected(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_load_from_file_with_seed_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 2, "optimize": {"population": 10}}))
    cfg = load_config(p, seed=5)
    assert cfg.seed == 5 and cfg.optimize.seed == 5 and cfg.optimize.population == 10
    assert load_config(None).seed == 0


def test_to_dict_is_json_and_reloads():
    cfg = from_dict({"seed": 3, "synth": {"grid": {"freq": [0.3]}}})
    d = json.loads(json.dumps(cfg.to_dict()))
    d["train"].pop("seed")
    d["optimize"].pop("seed")
    assert from_dict(d) == cfg


def test_simulate_section_builds_gait():
    g = from_dict({"simulate": {"alpha_deg": [0, 90, 180, 270]}}).simulate.gait()
    assert g.alpha[1] == pytest.approx(3.141592653589793 / 2)
    assert g.freq == 0.65
