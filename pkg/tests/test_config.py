import json
import logging
from multiprocessing import cpu_count

import pytest

from configs.config import (
    HParams,
    get_config,
    get_hparams_from_file,
    load_study_config,
    log_level_from_env,
    setup_logging,
    threads_from_env,
)


def test_hparams_nest_and_flatten(tmp_path):
    path = tmp_path / "study.json"
    path.write_text(json.dumps({"n_rows": 10, "fit": {"step": "newton"}}), encoding="utf-8")
    hps = get_hparams_from_file(str(path))
    assert hps.n_rows == 10
    assert isinstance(hps.fit, HParams)
    assert hps.fit.step == "newton"
    assert "fit" in hps and hps.get("missing", 3) == 3
    assert hps.to_dict() == {"n_rows": 10, "fit": {"step": "newton"}}
    with pytest.raises(AttributeError):
        hps.missing


def test_study_presets_resolve_by_name():
    hps = load_study_config("setting2")
    assert (hps.n_rows, hps.n_cols) == (10000, 400)


def test_log_level_from_env(monkeypatch):
    monkeypatch.setenv("BITMAT_LOG", "debug")
    assert log_level_from_env() == "DEBUG"
    monkeypatch.setenv("BITMAT_LOG", "chatty")
    assert log_level_from_env() == "INFO"
    monkeypatch.delenv("BITMAT_LOG")
    assert log_level_from_env("WARNING") == "WARNING"
    assert setup_logging("ERROR") == "ERROR"
    assert logging.getLogger().level == logging.ERROR


def test_thread_count_from_env(monkeypatch):
    monkeypatch.setenv("BITMAT_THREADS", "3")
    assert threads_from_env() == 3
    monkeypatch.setenv("BITMAT_THREADS", "0")
    assert threads_from_env() == 1
    monkeypatch.setenv("BITMAT_THREADS", "many")
    assert threads_from_env() == cpu_count()


def test_fit_defaults():
    defaults = get_config().fit_defaults
    assert defaults["step"] == "gradient"
    assert defaults["grad_tol"] == 1e-6
    assert defaults["tol_per_obs"] is None
    assert get_config() is get_config()
