import json
from pathlib import Path

import numpy as np
import pytest

from nlmv.cli import CONFIG_SCHEMA, main, run
from nlmv.frontier import frontier_variance

DOCS = Path(__file__).resolve().parents[1] / "docs"


def _config(**extra):
    cfg = json.loads((DOCS / "model_A.json").read_text())
    cfg["numerics"]["paths"] = 5000
    cfg.update(extra)
    return cfg


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_shipped_schema_matches_code():
    assert json.loads((DOCS / "config_schema.json").read_text()) == CONFIG_SCHEMA


def test_validate_ok(tmp_path, capsys):
    code = main(["validate", "--config", _write(tmp_path, _config()), "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["result"]["valid"] is True
    for key in ("config_hash", "model_hash", "versions", "seed"):
        assert key in rep
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_frontier_csv_rows(tmp_path):
    cfg = _config()
    cfg["frontier"]["K_list"] = [1.05, 1.1, 1.2]
    assert main(["frontier", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    raw = (tmp_path / "frontier.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().strip().split("\n")
    assert lines[0] == "K,d_star,variance,std_dev" and len(lines) == 4
    for line in lines[1:]:
        K, _, var, _ = map(float, line.split(","))
        assert var == pytest.approx(frontier_variance(np.exp(0.02), np.exp(-0.03), 1.0, K),
                                    rel=1e-10)


def test_infeasible_exit_code(tmp_path):
    cfg = _config()
    cfg["model"]["theta_lower"] = [0.0]
    cfg["model"]["theta_upper"] = [0.0]
    assert main(["feasibility", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 3
    rep = json.loads((tmp_path / "feasibility.json").read_text())
    assert rep["reason"] == "infeasible"


def test_invalid_model_exit_code(tmp_path):
    cfg = _config()
    cfg["model"]["theta_lower"] = [0.5]
    assert main(["validate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    assert main(["frontier", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("mutate", [
    lambda c: c["grid"].update(N=0),
    lambda c: c.pop("model"),
    lambda c: c["numerics"].update(seed=-1),
    lambda c: c["numerics"].update(seed=2 ** 64),
    lambda c: c.pop("frontier"),
    lambda c: c["model"].update(r={"kind": "spline"}),
])
def test_schema_errors(tmp_path, mutate):
    cfg = _config()
    mutate(cfg)
    code = main(["frontier", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)])
    assert code == 5
    assert json.loads((tmp_path / "frontier.json").read_text())["reason"] == "schema_error"


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["validate", "--config", str(p), "--out", str(tmp_path)]) == 5


def test_numerical_failure_exit_code(tmp_path):
    cfg = _config()
    cfg["model"] = {"r": 0.0, "theta_lower": [5.0], "theta_upper": [6.0], "sigma": [[1.0]]}
    cfg["grid"]["N"] = 1
    assert main(["riccati", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 4


def test_seed_and_paths_override(tmp_path):
    main(["simulate", "--config", _write(tmp_path, _config()), "--out", str(tmp_path),
          "--seed", str(2 ** 64 - 1), "--paths", "300"])
    rep = json.loads((tmp_path / "simulate.json").read_text())
    assert rep["seed"] == 2 ** 64 - 1 and rep["result"]["paths"] == 300
    lines = (tmp_path / "terminal.csv").read_text().split("\n")
    assert lines[0] == "path_id,X_T" and len(lines) == 302


def test_riccati_and_duality_artifacts(tmp_path):
    cfg = _config()
    assert run(cfg, "riccati", tmp_path)[0] == 0
    sol = json.loads((tmp_path / "riccati_2.json").read_text())
    assert sol["P"][-1] == 1.0 and sol["P"][0] == pytest.approx(np.exp(0.02), abs=1e-9)
    code, rep = run(cfg, "duality-check", tmp_path)
    assert code == 0 and rep["result"]["consistency"]["passed"]
    assert (tmp_path / "duality_residuals.csv").read_text().startswith(
        "t,P2_times_expY_minus_1,lambda_ratio_plus_Z\n")


def test_duality_rejects_multidimensional(tmp_path):
    cfg = _config()
    cfg["model"] = {"r": 0.0, "theta_lower": [0.1, 0.1], "theta_upper": [0.2, 0.2],
                    "sigma": [[1.0, 0.0], [0.0, 1.0]]}
    assert run(cfg, "duality-check", tmp_path)[0] == 5
