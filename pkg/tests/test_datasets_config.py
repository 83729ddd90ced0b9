import numpy as np
import pytest
import yaml

from markowitz_pp.config import ConfigError, convert_params, load_config, parse_config
from markowitz_pp.datasets import (DataError, generate_market, read_dataset, shipped_dataset,
                                   write_dataset)


# ----------------------------------------------------------------- datasets

def test_generator_checksums_are_deterministic(tmp_path):
    a = write_dataset(generate_market(6, 300, seed=5, volumes=True), tmp_path / "a")
    b = write_dataset(generate_market(6, 300, seed=5, volumes=True), tmp_path / "b")
    c = write_dataset(generate_market(6, 300, seed=6, volumes=True), tmp_path / "c")
    assert a == b
    assert a["prices.csv"] != c["prices.csv"]
    assert set(a) == {"prices.csv", "spreads.csv", "rates.csv", "volumes.csv"}


def test_reference_dataset_shape(tmp_path):
    md = shipped_dataset(cache_dir=tmp_path)
    assert md.n == 74 and md.T == 6185
    assert np.all(np.isfinite(md.returns)) and np.all(md.spreads > 0)
    assert md.names[0] == "A000" and md.dates[0] == "2000-01-04"
    # second call is served from the cache with identical values
    again = shipped_dataset(cache_dir=tmp_path)
    assert np.array_equal(again.returns, md.returns)


def test_generated_market_is_plausible():
    md = generate_market(20, 2500, seed=1).market_data()
    vol = md.returns.std(axis=0) * np.sqrt(250)
    assert 0.1 < np.median(vol) < 0.4
    spread_bps = md.spreads.mean(axis=0) * 1e4
    assert spread_bps.min() > 1 and spread_bps.max() < 40
    assert np.all(md.r_rf >= 0) and md.r_rf.mean() * 250 < 0.05


def test_read_dataset_round_trip(tmp_path):
    gen = generate_market(4, 50, seed=2)
    write_dataset(gen, tmp_path)
    md = read_dataset(tmp_path)
    ref = gen.market_data()
    # prices are stored with 10 significant digits
    assert np.allclose(md.returns, ref.returns, rtol=0, atol=1e-9)
    assert md.volumes is None


def test_read_dataset_reports_location(tmp_path):
    write_dataset(generate_market(3, 20, seed=0), tmp_path)
    lines = (tmp_path / "prices.csv").read_text().splitlines()
    cells = lines[4].split(",")
    cells[2] = "abc"
    lines[4] = ",".join(cells)
    (tmp_path / "prices.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=r"line 5 .*'A001'"):
        read_dataset(tmp_path)
    with pytest.raises(DataError, match="not found"):
        read_dataset(tmp_path / "missing")


def test_read_dataset_checks_alignment(tmp_path):
    gen = generate_market(3, 20, seed=0)
    write_dataset(gen, tmp_path)
    sp = gen.spreads.iloc[:-1]
    sp.to_csv(tmp_path / "spreads.csv")
    with pytest.raises(DataError, match="dates"):
        read_dataset(tmp_path)


# ------------------------------------------------------------------ config

def test_params_are_converted_to_daily():
    p = convert_params({"sigma_tar": 0.2, "T_tar": 50, "rho": 0.025, "L_tar": 2.0})
    assert p.sigma_tar == pytest.approx(0.2 / np.sqrt(250), rel=1e-15)
    assert p.T_tar == pytest.approx(0.2, rel=1e-15)
    assert p.rho == pytest.approx(1e-4, rel=1e-15) and p.rho_quantile is None
    assert p.L_tar == 2.0
    assert convert_params({"sigma_tar": None}).sigma_tar == np.inf


def test_params_vector_bounds_and_options():
    p = convert_params({"w_max": [0.1, 0.2], "w_min": [-0.1, 0.0],
                        "concentration": {"k": 3, "cap": 0.4}, "neutral_factors": [0, 2]})
    assert np.array_equal(p.w_max, [0.1, 0.2])
    assert p.concentration == (3, 0.4) and p.neutral_factors == (0, 2)


@pytest.mark.parametrize("doc, where", [
    ({"data": {"dir": "x"}, "params": {"gama_risk": 1.0}}, "gama_risk"),
    ({"data": {"dir": "x"}, "params": {"sigma_tar": "high"}}, "params.sigma_tar"),
    ({"data": {"dir": "x"}, "params": {"soft": ["budget"]}}, "budget"),
    ({"data": {"dir": "x"}, "policy": "yolo"}, "policy"),
    ({"data": {"prices": "p.csv"}}, "data"),
    ({"data": {"dir": "x"}, "extra": 1}, "extra"),
    ({"data": {"dir": "x"}, "forecast": {"ic": 2.0}}, "forecast.ic"),
    ({"data": {"dir": "x"}, "tuning": {"mode": "random"}}, "tuning.mode"),
    ({"data": {"dir": "x"}, "tuning": {"params": ["nope"]}}, "tuning.params"),
    ({"data": {"dir": "x"}, "tuning": {"grid": {"gamma_trade": []}}}, "tuning.grid"),
    ({"data": {"dir": "x"}, "windows": {"warmup": 0}}, "windows.warmup"),
])
def test_config_errors_name_the_field(doc, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(doc)


def test_load_config_yaml_error_has_line(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("data:\n  dir: x\nparams: [unclosed\n")
    with pytest.raises(ConfigError, match=r"line \d+, column \d+"):
        load_config(f)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")


def test_paths_resolve_relative_to_config(tmp_path):
    f = tmp_path / "sub" / "c.yaml"
    f.parent.mkdir()
    f.write_text(yaml.safe_dump({"data": {"dir": "../data"}, "windows": {"warmup": 10}}))
    cfg = load_config(f)
    assert cfg.data_paths()["dir"] == tmp_path / "sub" / "../data"
    assert cfg.warmup == 10 and cfg.init == 1250 and cfg.policy == "markowitz_pp"


def test_example_config_parses():
    from pathlib import Path
    cfg = load_config(Path(__file__).parent.parent / "configs" / "example.yaml")
    assert cfg.params.soft == {"risk", "leverage", "turnover"}
    assert cfg.params.sigma_tar == pytest.approx(0.10 / np.sqrt(250))
