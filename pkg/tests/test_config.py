import pytest

from qaprf.config import ConfigError, RunConfig, canonical, parse_config_file, parse_grid, resolve


def write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_three_layer_precedence(tmp_path):
    path = write(tmp_path, "# file layer\nbeta = 0.3\ngamma=0.2  # trailing comment\nM=7\n")
    cfg = resolve(path, {"beta": 0.7, "gamma": None})
    assert cfg.beta == 0.7  # flag beats file
    assert cfg.gamma == 0.2  # file beats default
    assert cfg.feedback_docs == 7
    assert cfg.alpha == RunConfig().alpha == 1.0  # default survives


def test_defaults_without_file():
    cfg = resolve(None, {})
    assert (cfg.feedback_docs, cfg.expansion_terms, cfg.beta, cfg.gamma) == (10, 60, 0.1, 0.5)
    assert cfg.expansion().depth == 1000


def test_short_mode_profile():
    cfg = resolve(None, {"mode": "short"})
    assert cfg.profile == {"depth": 5, "k": 5} and cfg.expansion().depth == 5


def test_aliases_and_dashes():
    assert canonical("N") == "expansion_terms"
    assert canonical("ranker-lr") == "ranker_lr"


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_file(write(tmp_path, "nonsense=1\n"))


def test_missing_equals(tmp_path):
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_file(write(tmp_path, "beta=0.1\njust words\n"))


def test_bad_value(tmp_path):
    with pytest.raises(ConfigError, match="feedback_docs"):
        resolve(write(tmp_path, "M=ten\n"), {})


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        resolve("/nonexistent/run.cfg", {})


def test_invalid_mode():
    with pytest.raises(ConfigError):
        RunConfig(mode="medium")


def test_grid_parsing():
    assert parse_grid(["beta=0,0.1", "gamma=0.5"]) == {"beta": [0.0, 0.1], "gamma": [0.5]}
    assert parse_grid(["N=5,10;M=3"]) == {"expansion_terms": [5, 10], "feedback_docs": [3]}
    with pytest.raises(ConfigError):
        parse_grid(["seed=1,2"])
    with pytest.raises(ConfigError):
        parse_grid(["beta="])
    with pytest.raises(ConfigError):
        parse_grid([])


def test_training_options_follow_config():
    opts = resolve(None, {"seed": 4, "ranker_lr": 0.5, "heads": 2}).training()
    assert (opts.seed, opts.ranker_lr, opts.heads) == (4, 0.5, 2)
