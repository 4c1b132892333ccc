from fractions import Fraction as F

import pytest

from alleletree.config import ConfigError, echo, load_config, load_law_file, parse_base


def test_law_file_yaml(tmp_path):
    p = tmp_path / "law.yaml"
    p.write_text("base_pmf: [[0, 1/2], [2, 1/2]]\nmutation_p: 1/4\n")
    base, mp = load_law_file(p)
    assert base.pmf[2] == F(1, 2) and mp == F(1, 4)


def test_law_file_decimal_json(tmp_path):
    p = tmp_path / "law.json"
    p.write_text('{"base_pmf": [[0, 0.5], [2, 0.5]], "mutation_p": 0.25}')
    base, mp = load_law_file(p)
    assert mp == 0.25 and base.mean() == 1


@pytest.mark.parametrize("text", ["", "base_pmf: []\n", "base_pmf: [[0, 0.4]]\n", "mutation_p: 1/2\n"])
def test_bad_law_files(tmp_path, text):
    p = tmp_path / "law.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_law_file(p)


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("x: 1\nreplicats: 10\n")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert ":2:" in str(err.value) and "replicats" in str(err.value)


def test_bad_value_reports_key(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("alpha: 2\n")
    with pytest.raises(ConfigError, match="alpha"):
        load_config(p)


def test_precedence(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("n: 64\nx: 2\npattern: ['/', '/1']\n")
    cfg = load_config(p, {"n": 128, "c": None}, {"n": 1, "c": 3.0})
    assert cfg["n"] == 128 and cfg["x"] == 2.0 and cfg["c"] == 3.0
    assert cfg["pattern"] == [(), (1,)]
    assert echo(cfg)["pattern"] == ["/", "/1"]


def test_presets():
    assert parse_base("geometric").mean() == 1
    with pytest.raises(ValueError):
        parse_base("poisson")
