import pytest
import yaml

from levelk_onramp.config import ConfigError, config_from_dict, load_config, parse_weights


def test_defaults(tmp_path):
    cfg = config_from_dict({}, tmp_path)
    assert cfg.seed == 0 and cfg.output_dir == tmp_path.resolve() / "out"
    assert cfg.bundle_manifest == cfg.output_dir / "policies" / "bundle.txt"
    assert cfg.scenario.sut == "stackelberg" and cfg.scenario.n_steps == 3000


def test_relative_paths_follow_config_file(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "run.yaml").write_text("output_dir: runs/a\nscenario: {bundle: b/bundle.txt}\n")
    cfg = load_config(sub / "run.yaml")
    assert cfg.output_dir == sub.resolve() / "runs" / "a"
    assert cfg.bundle_manifest == sub.resolve() / "b" / "bundle.txt"


@pytest.mark.parametrize("bad, where", [
    ({"colour": 1}, "config"),
    ({"sim": {"dtt": 0.1}}, "sim"),
    ({"curriculum": {"td3_follow": {"gama": 0.9}}}, "curriculum.td3_follow"),
    ({"scenario": {"sut": "idm"}}, "scenario.sut"),
    ({"scenario": {"n_steps": -1}}, "scenario.n_steps"),
    ({"evaluation": {"complexity_k": [1, 2]}}, "complexity_k"),
    ({"curriculum": {"stages": ["level3"]}}, "curriculum.stages"),
    ({"seed": "x"}, "seed"),
    ({"map": "missing.map"}, "map"),
])
def test_rejects_bad_values(tmp_path, bad, where):
    with pytest.raises(ConfigError, match=where.split(".")[0]):
        config_from_dict(bad, tmp_path)


def test_invalid_yaml(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.yaml")


def test_dump_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 7, "sim": {"n_bvs": 12}, "curriculum": {"stages": ["competitive", "car_following"],
                            "td3_follow": {"hidden": [32, 32]}}}, tmp_path)
    assert cfg.curriculum.stages == ("car_following", "competitive")
    again = config_from_dict(yaml.safe_load(cfg.dump()), tmp_path / "elsewhere")
    assert again.dump() == cfg.dump()
    assert again.sim.seed == 7 and again.curriculum.td3_follow.hidden == (32, 32)


def test_shipped_desk_config_loads():
    from pathlib import Path
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk.yaml")
    cc = cfg.curriculum_config()
    assert cc.stages["car_following"].max_steps == 100_000 and cc.stages["cooperative"].max_steps == 60_000
    assert cc.env.n_svs == 6


def test_parse_weights():
    w = parse_weights("is=0.5, ie=0.25, ii=0.25, H=40")
    assert (w.i_s, w.i_e, w.i_i, w.H) == (0.5, 0.25, 0.25, 40)
    for bad in ("is", "zz=1", "is=abc"):
        with pytest.raises(ConfigError):
            parse_weights(bad)
