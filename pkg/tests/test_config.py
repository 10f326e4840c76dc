import pytest

from superpart.config import ConfigError, PipelineConfig, parse_pairs


def test_defaults_round_trip_through_text():
    cfg = PipelineConfig()
    assert PipelineConfig.from_text(cfg.to_text()) == cfg


def test_non_default_round_trip():
    cfg = PipelineConfig(k=12, lpe_conv=(8, 16), agglomerative_start=False, weighting="seal",
                         decay_epochs=(), lr=3e-3, norm="group")
    assert PipelineConfig.from_text(cfg.to_text()) == cfg


def test_comments_blank_lines_and_spacing():
    cfg = PipelineConfig.from_text("""
# partition
lambda_tilde=2.5   # stronger
  perturb_pairs =   0

decay_epochs = [5, 9]
agglomerative_start = no
""")
    assert cfg.lambda_tilde == 2.5 and cfg.perturb_pairs == 0
    assert cfg.decay_epochs == (5, 9)
    assert cfg.agglomerative_start is False


def test_coerced_types():
    cfg = PipelineConfig.from_text("k = 7\nlr = 1e-3\nnorm = none\n")
    assert isinstance(cfg.k, int) and cfg.k == 7
    assert isinstance(cfg.lr, float) and cfg.lr == 1e-3
    assert cfg.norm == "none"


@pytest.mark.parametrize("text, needle", [
    ("kk = 3", "line 1: unknown key 'kk'"),
    ("k = 3\nk = 4", "line 2: duplicate key 'k'"),
    ("k = three", "cannot parse"),
    ("agglomerative_start = maybe", "cannot parse"),
    ("just words", "expected 'key = value'"),
    ("k = 0", "k and k_adj"),
    ("norm = layer", "norm"),
    ("weighting = triplet", "weighting"),
])
def test_bad_config_text(text, needle):
    with pytest.raises(ConfigError, match=needle):
        PipelineConfig.from_text(text)


def test_base_config_is_layered():
    base = PipelineConfig(k=9)
    assert PipelineConfig.from_text("lr = 0.5", base).k == 9


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        PipelineConfig.from_file(tmp_path / "nope.cfg")


def test_from_file(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("seed = 42\n")
    assert PipelineConfig.from_file(path).seed == 42


def test_parse_pairs_keeps_line_numbers():
    assert parse_pairs(["", "# c", "a = 1", "b=x=y"]) == [(3, "a", "1"), (4, "b", "x=y")]


def test_component_configs_follow_fields():
    cfg = PipelineConfig(lambda_tilde=3.0, perturb_pairs=5, mu_tilde=2.0, epochs=4,
                         decay_epochs=(2,), m=6)
    assert cfg.gmp_config().lambda_tilde == 3.0 and cfg.gmp_config().perturb_pairs == 5
    tc = cfg.train_config()
    assert tc.epochs == 4 and tc.loss.mu_tilde == 2.0 and tc.gmp.lambda_tilde == 3.0
    assert cfg.embedder_config(d=5).d == 5 and cfg.embedder_config().m == 6
