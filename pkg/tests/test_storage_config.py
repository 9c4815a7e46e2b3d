import json
import math

import numpy as np
import pytest

from taskjscc.config import OUTPUT_ROOT_ENV, load_config
from taskjscc.errors import ConfigError
from taskjscc.storage import MAGIC, ContainerError, CsvLog, load_container, read_csv, save_container


class TestContainer:
    def test_round_trip(self, tmp_path):
        arrs = [("w", np.arange(6.0).reshape(2, 3)), ("b", np.array([np.pi]))]
        p = tmp_path / "a.bin"
        save_container(p, "thing", {"x": 1}, arrs)
        kind, meta, out = load_container(p, "thing")
        assert kind == "thing" and meta == {"x": 1}
        assert list(out) == ["w", "b"]
        np.testing.assert_array_equal(out["w"], arrs[0][1])
        assert p.read_bytes()[:8] == MAGIC

    def test_rewrite_is_byte_identical(self, tmp_path):
        arrs = [("w", np.random.default_rng(0).standard_normal(10))]
        save_container(tmp_path / "a", "k", {"b": 2, "a": 1}, arrs)
        save_container(tmp_path / "b", "k", {"a": 1, "b": 2}, arrs)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_rejects_bad_input(self, tmp_path):
        p = tmp_path / "a.bin"
        p.write_bytes(b"nonsense")
        with pytest.raises(ContainerError):
            load_container(p)
        save_container(p, "k", {}, [])
        with pytest.raises(ContainerError):
            load_container(p, "other")
        p.write_bytes(p.read_bytes() + b"x")
        with pytest.raises(ContainerError):
            load_container(p)


def test_csv_format(tmp_path):
    log = CsvLog(tmp_path / "m.csv", ["step", "loss", "tag"])
    log.write([{"step": 1, "loss": 0.1, "tag": "a,b"}, {"step": 2, "loss": math.inf}])
    raw = (tmp_path / "m.csv").read_bytes()
    assert raw == b'step,loss,tag\r\n1,0.1,"a,b"\r\n2,inf,\r\n'
    assert read_csv(tmp_path / "m.csv")[0]["tag"] == "a,b"


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        w = cfg.weights()
        assert (w.beta1_hat, w.beta2_hat, w.beta_q) == (1.0, 8192.0, 10.0)
        assert cfg.seed_tag == "0-1-2"
        assert cfg.train_channel().kind == "awgn"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            load_config({"bogus": 1})
        with pytest.raises(ConfigError):
            load_config({"mc": {"omega": 0}})

    def test_raw_multipliers(self):
        w = load_config({"weights": {"beta1": 2.0, "beta2": 0.75}}).weights()
        assert (w.beta1_hat, w.beta2_hat) == (8.0, 3.0)
        w = load_config({"weights": {"beta1": 5.0, "beta2": 1.0}}).weights()
        assert w.classic_ib and w.alignment_weight == 0.0
        with pytest.raises(ConfigError):
            load_config({"weights": {"beta1": 2.0}})
        # beta2 > 1 flips the sign of both transformed weights
        with pytest.raises(ConfigError):
            load_config({"weights": {"beta1": 1.0, "beta2": 2.0}})

    def test_inf_snr(self):
        cfg = load_config({"channel": {"train_snr_db": "inf"}})
        assert cfg.train_channel().snr_db == math.inf

    def test_dims_consistency(self):
        with pytest.raises(ConfigError):
            load_config({"dims": {"d": 2}})

    def test_bad_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_echo_reloads_identically(self, tmp_path):
        cfg = load_config({"mc": {"omega": 8}})
        p = tmp_path / "echo.json"
        p.write_text(cfg.to_json())
        assert load_config(p).tree == cfg.tree

    def test_output_root_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        assert load_config().output_dir() == tmp_path / "runs" / "default"
        assert load_config({"output": {"dir": "/abs/x"}}).output_dir().as_posix() == "/abs/x"

    def test_schema_is_valid_json(self):
        from taskjscc.config import SCHEMA
        assert SCHEMA["additionalProperties"] is False
        json.dumps(SCHEMA)


def test_schema_documents_csv_columns():
    from taskjscc import experiment as ex
    from taskjscc.config import SCHEMA
    doc = SCHEMA["x-csv-columns"]
    assert doc["metrics.csv"] == ex.METRIC_COLUMNS
    assert doc["evaluation.csv"] == doc["sweep.csv"] == ex.EVAL_COLUMNS
    assert doc["channel_log.csv"] == ex.CHANNEL_LOG_COLUMNS
    assert doc["constellation.csv"] == ex.FIT_COLUMNS
    assert doc["r_sensitivity.csv"] == ex.R_SENS_COLUMNS
