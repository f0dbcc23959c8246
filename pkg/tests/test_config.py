import pytest

from eaflsim.config import (
    KEYS,
    ConfigError,
    ConfigNotFoundError,
    ConfigSyntaxError,
    ConfigValueError,
    UnknownKeyError,
    parse_config,
)
from eaflsim.engine import TaskConfig
from eaflsim.selection import StrategyKind
from eaflsim.simulator import SimConfig


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParse:
    def test_minimal_file_gets_defaults(self, tmp_path):
        spec = parse_config(write(tmp_path, "strategy = eafl\n"))
        assert spec.strategies == [StrategyKind.EAFL]
        assert spec.seeds == [0]
        assert (spec.base.k_per_round, spec.base.blend_f, spec.base.rounds) == (10, 0.25, 500)
        assert spec.target_accuracy == 0.6

    def test_sections(self, tmp_path):
        spec = parse_config(write(tmp_path, """
[experiment]
strategies = random, oort
seeds = 1 2 3
output_dir = out/here

[simulator]
n_clients = 40
tier_mix = 0.2, 0.5, 0.3

[selection]
blend_f = 0.5

[task]
feature_dim = 16
size_spread = 0.25
"""))
        assert spec.strategies == [StrategyKind.RANDOM, StrategyKind.OORT]
        assert spec.seeds == [1, 2, 3]
        assert spec.base.n_clients == 40 and spec.base.blend_f == 0.5
        assert spec.base.tier_mix == (0.2, 0.5, 0.3)
        assert spec.base.task.feature_dim == 16 and spec.base.task.size_spread == 0.25
        assert len(spec.run_configs()) == 6

    def test_every_field_has_a_key(self):
        skip = {"task", "strategy", "seed"}
        fields = set(SimConfig.__dataclass_fields__) | set(TaskConfig.__dataclass_fields__)
        assert fields - skip <= set(KEYS)

    def test_overrides_win(self, tmp_path):
        p = write(tmp_path, "strategies = random, oort\nseeds = 4, 5\nrounds = 20\n")
        spec = parse_config(p, {"strategy": StrategyKind.EAFL, "seed": 9, "rounds": 3})
        assert spec.strategies == [StrategyKind.EAFL]
        assert spec.seeds == [9]
        assert spec.base.rounds == 3


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigNotFoundError):
            parse_config(tmp_path / "nope.ini")

    def test_blend_out_of_range(self, tmp_path):
        with pytest.raises(ConfigValueError) as err:
            parse_config(write(tmp_path, "strategy = eafl\n\n[selection]\nblend_f = 1.5\n"))
        assert "blend_f" in str(err.value)
        assert err.value.line == 4

    def test_empty_strategies(self, tmp_path):
        with pytest.raises(ConfigValueError, match="strategies"):
            parse_config(write(tmp_path, "[experiment]\nstrategies =\n"))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(UnknownKeyError) as err:
            parse_config(write(tmp_path, "rounds = 5\nbogus = 1\n"))
        assert err.value.line == 2

    def test_wrong_section(self, tmp_path):
        with pytest.raises(UnknownKeyError, match="selection"):
            parse_config(write(tmp_path, "[task]\nblend_f = 0.3\n"))

    def test_syntax(self, tmp_path):
        with pytest.raises(ConfigSyntaxError):
            parse_config(write(tmp_path, "rounds = 5\nthis is not a key value line\n"))

    def test_bad_number(self, tmp_path):
        with pytest.raises(ConfigValueError, match="rounds"):
            parse_config(write(tmp_path, "rounds = many\n"))

    def test_unknown_strategy(self, tmp_path):
        with pytest.raises(ConfigValueError):
            parse_config(write(tmp_path, "strategy = greedy\n"))

    def test_cross_field(self, tmp_path):
        with pytest.raises(ConfigValueError):
            parse_config(write(tmp_path, "[task]\nnum_labels = 3\nlabels_per_client = 4\n"))

    def test_errors_share_a_base(self):
        for cls in (ConfigNotFoundError, ConfigSyntaxError, ConfigValueError, UnknownKeyError):
            assert issubclass(cls, ConfigError)
