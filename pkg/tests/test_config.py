"""INI run-configuration parsing and validation."""

import numpy as np
import pytest

from csissl.config import (
    DiagnoseSettings,
    RunConfig,
    SynthSettings,
    default_run_config,
    load_run_config,
)
from csissl.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


class TestDefaults:
    def test_empty_file_yields_reference_settings(self, tmp_path):
        config = load_run_config(write(tmp_path, ""))
        assert config.synth.links == 3
        assert config.synth.subcarriers == 30
        assert config.synth.frames == 200
        assert config.synth.classes == 8
        assert config.synth.samples_per_class == 50
        assert config.train.method == "capc"
        assert config.train.epochs == 300
        assert config.train.lr_weights == 0.2
        assert config.train.lam == 0.002
        assert config.train.beta == 50.0
        assert config.eval.shots == (2, 4, 6, 8, 10, 12)
        assert config.eval.seeds == (0, 1, 2)
        assert config.diagnose.jobs == 1

    def test_empty_sections_allowed(self, tmp_path):
        config = load_run_config(write(tmp_path, "[synth]\n[pretrain]\n[eval]\n[diagnose]\n"))
        assert config == default_run_config()

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.cfg")


FULL = """
[synth]
links = 2
subcarriers = 8
frames = 40
classes = 4
samples_per_class = 12
distortion = strong
seed = 3

[pretrain]
method = bt-only
epochs = 5
batch_size = 16
lr_weights = 0.1
warmup_epochs = 2
n_future = 3
frames_per_window = 10
embed_dim = 16
context_dim = 16
projector_dim = 16
conv_channels = 4, 8
augmentations = gaussian_noise(0.2)
standardize = yes
seed = 4

[eval]
batch_size = 64
epochs = 25
classifier_lr = 0.02
encoder_lr = 0.001
shots = 2, 4
seeds = 0, 1

[diagnose]
max_windows = 128
augmentations = dual_view, gaussian_noise
jobs = 2
shots = 3
"""


class TestParsing:
    def test_full_configuration_lands(self, tmp_path):
        config = load_run_config(write(tmp_path, FULL))
        assert config.synth.distortion == "strong"
        assert config.synth.samples_per_class == 12
        assert config.train.method == "bt-only"
        assert config.train.epochs == 5
        assert config.train.conv_channels == (4, 8)
        assert config.train.n_future == 3
        assert config.train.standardize is True
        assert config.train.augmentations.ops[0].sigma == 0.2
        assert config.eval.epochs == 25
        assert config.eval.shots == (2, 4)
        assert config.diagnose.max_windows == 128
        assert config.diagnose.augmentations == ("dual_view", "gaussian_noise")
        assert config.diagnose.jobs == 2

    def test_absent_optional_keys_stay_none(self, tmp_path):
        config = load_run_config(write(tmp_path, "[pretrain]\nmethod = capc\n"))
        assert config.train.n_future is None
        assert config.eval.epochs is None

    def test_inline_whitespace_tolerated(self, tmp_path):
        config = load_run_config(write(tmp_path, "[eval]\nshots =  2 ,4,  6\n"))
        assert config.eval.shots == (2, 4, 6)


class TestRejection:
    def test_unknown_section_named(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[widgets\]"):
            load_run_config(write(tmp_path, "[widgets]\nx = 1\n"))

    def test_unknown_key_reported_with_path(self, tmp_path):
        with pytest.raises(ConfigError, match="synth.widgets"):
            load_run_config(write(tmp_path, "[synth]\nwidgets = 9\n"))
        with pytest.raises(ConfigError, match="pretrain.banana"):
            load_run_config(write(tmp_path, "[pretrain]\nbanana = 1\n"))

    def test_type_errors_reported_with_path(self, tmp_path):
        with pytest.raises(ConfigError, match="pretrain.epochs"):
            load_run_config(write(tmp_path, "[pretrain]\nepochs = soon\n"))
        with pytest.raises(ConfigError, match="eval.shots"):
            load_run_config(write(tmp_path, "[eval]\nshots = \n"))
        with pytest.raises(ConfigError, match="pretrain.standardize"):
            load_run_config(write(tmp_path, "[pretrain]\nstandardize = maybe\n"))

    def test_domain_errors_carry_section(self, tmp_path):
        with pytest.raises(ConfigError, match="synth.distortion"):
            load_run_config(write(tmp_path, "[synth]\ndistortion = wild\n"))
        with pytest.raises(ConfigError, match="pretrain"):
            load_run_config(write(tmp_path, "[pretrain]\nepochs = 0\n"))
        with pytest.raises(ConfigError, match="eval"):
            load_run_config(write(tmp_path, "[eval]\nbatch_size = 0\n"))
        with pytest.raises(ConfigError, match="synth"):
            load_run_config(write(tmp_path, "[synth]\nlinks = 0\n"))

    def test_conv_channels_arity_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="conv_channels"):
            load_run_config(write(tmp_path, "[pretrain]\nconv_channels = 4, 8, 16\n"))

    def test_default_section_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="DEFAULT.x"):
            load_run_config(write(tmp_path, "[DEFAULT]\nx = 1\n[synth]\n"))

    def test_malformed_ini_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(write(tmp_path, "links = 3\n"))


class TestSeedOverride:
    def test_with_seed_pins_every_stream(self, tmp_path):
        config = load_run_config(write(tmp_path, FULL)).with_seed(7)
        assert config.synth.seed == 7
        assert config.train.seed == 7
        assert config.eval.seeds == (7,)
        # grid shape and the rest are untouched
        assert config.eval.shots == (2, 4)
        assert config.diagnose.jobs == 2


class TestSynthSettings:
    def test_identity_distortion_builds_passthrough_profiles(self):
        built = SynthSettings(subcarriers=8, distortion="none").build()
        np.testing.assert_array_equal(built.profile_ab.gain_magnitude, np.ones(8))
        assert built.profile_ab.drift_std == 0.0
        assert built.profile_ab.noise_std == 0.0

    def test_strong_distortion_is_harsher_than_default(self):
        default = SynthSettings(subcarriers=8).build()
        strong = SynthSettings(subcarriers=8, distortion="strong").build()
        assert strong.profile_ab.noise_std > default.profile_ab.noise_std
        assert strong.profile_ab.drift_std > default.profile_ab.drift_std

    def test_class_count_flows_through(self):
        built = SynthSettings(classes=5).build()
        assert len(built.classes) == 5


class TestDiagnoseSettings:
    @pytest.mark.parametrize(
        "kwargs", [dict(max_windows=1), dict(jobs=0), dict(shots=0)]
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            DiagnoseSettings(**kwargs)
