import pytest
from hypothesis import given, strategies as st

from lc4sv.config import ExperimentConfig, dumps, load_config, loads
from lc4sv.errors import ConfigurationError


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert loads(dumps(cfg)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


@given(seed=st.integers(0, 2**31), lr=st.floats(1e-6, 1.0), steps=st.integers(0, 10_000),
       low=st.floats(-30, 0), width=st.floats(0, 30), work=st.sampled_from(["runs", "a/b c", "/tmp/x"]))
def test_round_trip_is_lossless(seed, lr, steps, low, width, work):
    cfg = ExperimentConfig(seed=seed, pretrain_learning_rate=lr, agent_steps=steps,
                           snr_low_db=low, snr_high_db=low + width, work_dir=work)
    assert loads(dumps(cfg)) == cfg


def test_comments_and_blank_lines():
    cfg = loads("# header\n\nseed = 7   # trailing\nstft_fft_sizes = 64, 128\nstft_hop_sizes = 16,32\n"
                "stft_win_lengths = 32, 64\n")
    assert cfg.seed == 7 and cfg.stft_fft_sizes == (64, 128) and cfg.stft_hop_sizes == (16, 32)


@pytest.mark.parametrize("text", [
    "pretrain_learning_rate = 0", "agent_learning_rate = -1e-3", "agent_steps = -1",
    "snr_low_db = 5\nsnr_high_db = 1", "bogus = 1", "seed = abc", "seed 3", "seed = 1\nseed = 2",
    "num_speakers = 1", "stft_fft_sizes = 512", "stft_win_lengths = 240, 600, 4096",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigurationError):
        loads(text)


def test_hash_ignores_location_but_not_content():
    base = ExperimentConfig()
    assert base.digest() == base.replace(work_dir="elsewhere").digest()
    assert base.digest() != base.replace(seed=1).digest()
    assert base.digest() != base.replace(agent_steps=499).digest()


def test_missing_file_is_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.conf")
