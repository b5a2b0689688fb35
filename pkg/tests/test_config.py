import json

import pytest

import config as config_module
from config import RunConfig, load_run_config
from dcdnn.errors import ConfigurationError


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.setattr(config_module.config, "CONFIG_PATH", None)


class TestDefaults:
    def test_training_defaults(self):
        cfg = RunConfig()
        assert cfg.block_sizes == (4, 8, 16, 32)
        assert cfg.ref_lines == 8 and cfg.depth == 4
        assert cfg.hidden_dims == {4: 128, 8: 256, 16: 256, 32: 512}
        assert cfg.batch_sizes == {4: 128, 8: 128, 16: 64, 32: 64}
        assert (cfg.pretrain_epochs, cfg.pretrain_lr_start, cfg.pretrain_lr_floor, cfg.pretrain_step) == (40, 0.1, 0.0001, 10)
        assert (cfg.recursive_epochs, cfg.recursive_lr_start, cfg.recursive_lr_floor) == (30, 0.01, 0.0001)
        assert cfg.kappa == 0.02 and cfg.rounds == 8 and cfg.stop_threshold == 0.97

    def test_echo_is_plain_json(self):
        echo = RunConfig().echo()
        assert json.loads(json.dumps(echo)) == echo
        assert echo["hidden_dims"]["32"] == 512


class TestValidation:
    @pytest.mark.parametrize("changes", [{"modes": 3}, {"modes": 0}, {"block_sizes": (4, 64)}, {"kappa": -1.0},
                                         {"momentum": 1.0}, {"threads": 0}, {"store_dtype": "float16"}, {"seed": -1},
                                         {"hidden_dims": {4: 8}, "block_sizes": (4, 8)}])
    def test_rejected(self, changes):
        with pytest.raises(ConfigurationError):
            RunConfig(**changes)


class TestLoading:
    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# small run\n"
            "block_sizes = 4, 8\n"
            "hidden_dims = 4:32, 8:64\n"
            "batch_sizes = 4:16,8:16\n"
            "\n"
            "modes = 4   # four networks\n"
            "filter = off\n"
            "min_split_gain = 0.01\n"
            "tiling = 8@0,0\n"
        )
        cfg = load_run_config(str(path), ["modes=8", "lambda_override=none"])
        assert cfg.block_sizes == (4, 8)
        assert cfg.hidden_dims == {4: 32, 8: 64}
        assert cfg.modes == 8 and cfg.filter is False
        assert cfg.min_split_gain == 0.01 and cfg.lambda_override is None
        assert cfg.tiling == "8@0,0"

    def test_no_file_gives_defaults(self):
        assert load_run_config(None, []) == RunConfig()

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("colour = blue\n")
        with pytest.raises(ConfigurationError, match="colour"):
            load_run_config(str(path))

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("modes 2\n")
        with pytest.raises(ConfigurationError, match=":1:"):
            load_run_config(str(path))

    @pytest.mark.parametrize("pair", ["modes=two", "filter=maybe", "hidden_dims=4-8", "seed"])
    def test_bad_overrides(self, pair):
        with pytest.raises(ConfigurationError):
            RunConfig().with_overrides([pair])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(str(tmp_path / "absent.cfg"))


class TestBlockSizes:
    def test_sizes_inside_are_accepted(self):
        RunConfig(block_sizes=(4, 8)).require_block_sizes([8, 4, 4], "tiling")

    def test_sizes_outside_are_named(self):
        with pytest.raises(ConfigurationError, match=r"\[16\]"):
            RunConfig(block_sizes=(4, 8)).require_block_sizes([4, 16], "tiling")
