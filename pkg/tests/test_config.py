import json

import pytest

from radiant import config


class TestResolve:
    def test_defaults_explicit(self):
        cfg = config.resolve({})
        assert set(cfg) == set(config.DEFAULTS)
        assert cfg["model"]["delta"] == 1.0 and cfg["model"]["gamma"] == 0.5
        assert all(v is not None for k, v in cfg["model"].items() if k not in ("table", "mass"))

    def test_radiating_profile_defaults(self):
        m = config.resolve({"model": {"id": "radiating"}})["model"]
        assert (m["delta"], m["gamma"], m["amplitude"]) == (0.5, 0.25, 0.1)

    def test_schwarzschild_mass(self):
        assert config.resolve({"model": {"id": "schwarzschild_tail"}})["model"]["mass"] == 1.0

    def test_gamma_not_below_delta(self):
        with pytest.raises(config.ConfigError, match="model.gamma"):
            config.resolve({"model": {"delta": 0.5, "gamma": 0.5}})

    def test_unknown_key_named(self):
        with pytest.raises(config.ConfigError, match="solver.dx"):
            config.resolve({"solver": {"dx": 0.1}})

    def test_bad_type_named(self):
        with pytest.raises(config.ConfigError, match="seed"):
            config.resolve({"seed": "forty"})

    def test_unknown_registry_entry(self):
        with pytest.raises(config.ConfigError, match="registry.ids"):
            config.resolve({"registry": {"ids": ["nope"]}})

    def test_custom_table_needs_path(self):
        with pytest.raises(config.ConfigError, match="model.table"):
            config.resolve({"model": {"id": "custom-table"}})

    def test_decay_window_order(self):
        with pytest.raises(config.ConfigError, match="decay.window"):
            config.resolve({"decay": {"window": [100, 10]}})

    def test_idempotent(self):
        cfg = config.resolve({"model": {"id": "radiating"}, "seed": 3})
        assert config.resolve(cfg) == cfg


class TestHash:
    def test_ignores_out_and_jobs(self):
        a = config.resolve({"out": "a", "jobs": 1})
        b = config.resolve({"out": "b", "jobs": 4})
        assert config.config_hash(a) == config.config_hash(b)

    def test_seed_changes_hash(self):
        assert config.config_hash(config.resolve({"seed": 1})) != config.config_hash(config.resolve({"seed": 2}))


class TestLoad:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 5}))
        assert config.load(p) == {"seed": 5}

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        with pytest.raises(config.ConfigError):
            config.load(p)
