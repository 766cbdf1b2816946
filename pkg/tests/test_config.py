import json

import pytest

from fltransfer.config import RunConfig, config_hash, load_config, loads_config, parse_config, parse_method
from fltransfer.errors import ArgumentError, ConfigError
from fltransfer.kernels import KernelSpec


class TestParseConfig:

    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.command == "simulate"
        assert cfg.kernel == KernelSpec.eigen_expansion()
        assert cfg.scenario.n0 == 150 and cfg.scenario.nl == 100
        assert cfg.lambda_rule.kind == "theorem1"
        assert (cfg.fit.test_fraction, cfg.fit.replications) == (0.2, 100)

    def test_seed_reaches_scenario(self):
        assert parse_config({"seed": 7}).scenario.seed == 7

    @pytest.mark.parametrize("doc,key", [
        ({"colour": 1}, "colour"),
        ({"scenario": {"n_zero": 3}}, "scenario.n_zero"),
        ({"scenario": {"seed": 3}}, "scenario.seed"),
        ({"fit": {"methd": "oflr"}}, "fit.methd"),
        ({"lambda_rule": {"kind": "cv", "fold": 3}}, "lambda_rule.fold"),
    ])
    def test_unknown_keys(self, doc, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(doc)
        assert key in str(exc.value)

    @pytest.mark.parametrize("doc", [
        {"command": "train"},
        {"seed": -1},
        {"threads": 0},
        {"kernel": {"variant": "matern", "nu": 0.7}},
        {"scenario": {"h": -2}},
        {"experiment": {"kind": "table"}},
        {"fit": {"method": "lasso"}},
        {"fit": {"test_fraction": 1.0}},
        {"lambda_rule": {"kind": "aic"}},
        {"threads": True},
        {"scenario": {"transferable_ids": ["a"]}},
        {"experiment": {"methods": ["atlflr_ew:hot"]}},
        {"experiment": {"methods": ["atlflr_ew:-1"]}},
        {"experiment": {"methods": ["lasso"]}},
        {"experiment": {"reps": "5"}},
        {"lambda_rule": {"pre_grid": ["x"]}},
    ])
    def test_invalid_values(self, doc):
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_method_temperatures(self):
        cfg = parse_config({"experiment": {"methods": ["oflr", "atlflr_ew:0.5"]}})
        assert [parse_method(m, 1.0) for m in cfg.experiment.methods] == [("oflr", 1.0), ("atlflr_ew", 0.5)]
        with pytest.raises(ArgumentError):
            parse_method("tlflr:2", 1.0)

    def test_nested_kernels(self):
        cfg = parse_config({"kernel": {"variant": "gaussian", "rho": 0.3},
                            "scenario": {"target_cov": {"variant": "matern", "nu": 2.5, "rho": 0.5}}})
        assert cfg.kernel == KernelSpec.gaussian(0.3)
        assert cfg.scenario.target_cov == KernelSpec.matern(2.5, 0.5)

    def test_lists_become_tuples(self):
        cfg = parse_config({"experiment": {"kind": "heatmap", "h_values": [1, 2]},
                            "scenario": {"L": 3, "transferable_ids": [3, 1]}})
        assert cfg.experiment.h_values == (1, 2)
        assert cfg.scenario.transferable_ids == (1, 3)

    def test_round_trip_through_dict(self):
        cfg = parse_config({"seed": 5, "scenario": {"L": 4, "transferable_ids": [1, 2], "h": 10.0},
                            "lambda_rule": {"kind": "gcv", "lambda_grid": [0.1, 0.01]}})
        again = parse_config(json.loads(json.dumps(cfg.to_dict())))
        assert config_hash(again) == config_hash(cfg)


class TestHashAndLoading:

    def test_hash_is_canonical(self):
        assert config_hash({"b": 1, "a": [1, 2]}) == config_hash({"a": (1, 2), "b": 1})
        assert len(config_hash({})) == 64

    def test_hash_changes_with_seed(self):
        assert config_hash(RunConfig(seed=1)) != config_hash(RunConfig(seed=2))

    def test_hash_of_config_equals_hash_of_dict(self):
        cfg = RunConfig()
        doc = cfg.to_dict()
        del doc["threads"], doc["output"]
        assert config_hash(cfg) == config_hash(doc)

    def test_hash_ignores_execution_settings(self):
        cfg = RunConfig()
        assert config_hash(cfg.with_overrides(out="elsewhere", threads=4)) == config_hash(cfg)

    def test_overrides(self):
        cfg = RunConfig().with_overrides(seed=9, out="results", threads=3)
        assert (cfg.seed, cfg.scenario.seed, cfg.output.dir, cfg.threads) == (9, 9, "results", 3)
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(threads=0)
        assert RunConfig().with_overrides(replications=7).fit.replications == 7
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(replications=0)

    def test_invalid_json(self):
        with pytest.raises(ConfigError) as exc:
            loads_config("{not json")
        assert "line 1" in str(exc.value)

    def test_load_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"command": "fit", "fit": {"method": "oflr"}}))
        cfg = load_config(str(path))
        assert cfg.command == "fit" and cfg.fit.method == "oflr"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.json"))
