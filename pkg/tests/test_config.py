import pytest
from hypothesis import given
from hypothesis import strategies as st

from canto_umt.config import ConfigError, ExperimentConfig, build_config, parse_config_text, validate_config


def write(tmp_path, text):
    p = tmp_path / "c.conf"
    p.write_text(text, encoding="utf-8")
    return p


def test_minimal_config_is_valid(tmp_path):
    cfg = validate_config(write(tmp_path, "seed = 3\n"), env={})
    assert cfg.seed == 3 and cfg.beam_size == 1


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.n_layers == 4 and cfg.n_shared_dec_layers == 3 and cfg.embedding_dim == 512
    gru = ExperimentConfig(variant="gru")
    assert gru.n_layers == 2 and gru.n_shared_dec_layers == 0


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError) as err:
        validate_config(write(tmp_path, "beam = 2\n"), env={})
    assert err.value.problems == [("beam", "unknown key")]


def test_beam_size_zero_is_a_range_error(tmp_path):
    with pytest.raises(ConfigError) as err:
        validate_config(write(tmp_path, "beam_size = 0\n"), env={})
    assert err.value.problems == [("beam_size", "must be >= 1")]


def test_all_problems_reported_together(tmp_path):
    with pytest.raises(ConfigError) as err:
        validate_config(write(tmp_path, "steps = -1\nlr = x\nvariant = lstm\n"), env={})
    keys = {k for k, _ in err.value.problems}
    assert {"steps", "lr", "variant"} <= keys


def test_parse_errors():
    with pytest.raises(ConfigError, match="set twice"):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("just words\n")
    assert parse_config_text("# comment\nseed = 2  # trailing\n\n") == {"seed": "2"}


def test_paths_resolved_and_checked(tmp_path):
    (tmp_path / "a.txt").write_text("x\n")
    cfg = validate_config(write(tmp_path, "l1_corpus = a.txt\nl2_corpus = a.txt\n"), env={})
    assert cfg.l1_corpus == str(tmp_path / "a.txt")
    with pytest.raises(ConfigError, match="file not found"):
        validate_config(write(tmp_path, "l1_corpus = missing.txt\nl2_corpus = a.txt\n"), env={})
    with pytest.raises(ConfigError, match="together"):
        validate_config(write(tmp_path, "l1_corpus = a.txt\n"), env={})
    with pytest.raises(ConfigError, match="no files match"):
        validate_config(write(tmp_path, "inputs = nothing*.txt\n"), env={})


def test_env_and_override_precedence(tmp_path):
    path = write(tmp_path, "beam_size = 2\nseed = 1\n")
    cfg = validate_config(path, env={"CANTO_UMT_BEAM_SIZE": "4", "CANTO_UMT_SEED": "5"}, overrides={"seed": 9})
    assert cfg.beam_size == 4 and cfg.seed == 9
    with pytest.raises(ConfigError, match="beam_size"):
        validate_config(path, env={"CANTO_UMT_BEAM_SIZE": "many"})


def test_structural_checks():
    with pytest.raises(ConfigError, match="heads"):
        build_config({"d_model": "10", "heads": "4"}, env={})
    with pytest.raises(ConfigError, match="lexicon"):
        build_config({"scheme": "word"}, env={})
    with pytest.raises(ConfigError, match="exceeds"):
        build_config({"layers": "2", "shared_dec_layers": "3"}, env={})


def test_pairing_warnings():
    assert ExperimentConfig(variant="gru", embed_route="concat").pairing_warnings()
    assert ExperimentConfig(variant="transformer", embed_route="mapping").pairing_warnings()
    assert not ExperimentConfig(variant="gru", embed_route="mapping").pairing_warnings()


@given(st.integers(0, 10**6), st.sampled_from(["char", "word", "bpe"]), st.booleans(), st.integers(1, 9))
def test_dumps_roundtrip(seed, scheme, strip, beam):
    cfg = ExperimentConfig(seed=seed, scheme=scheme, strip_punct=strip, beam_size=beam, lexicon="lex.txt")
    back = build_config(parse_config_text(cfg.dumps()), env={}, check_paths=False)
    assert back == cfg and back.digest() == cfg.digest()
