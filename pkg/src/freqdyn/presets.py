"""Named model configurations and published-size reference tables.

Reference sizes (in millions of parameters) are what the original result
grids report for each configuration. They are carried as labels to compare
against, never asserted equal: the closed-form counts here land within a
fraction of a percent and the comparison tolerance makes the difference
explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigurationError
from .model import ModelConfig, count_model_params


def _cfg(specs: str = "static", proportion=Fraction(1, 8), scale=Fraction(1),
         pre_conv: bool = False) -> ModelConfig:
    return ModelConfig(layer_specs=specs,
                       branch_proportion=Fraction(proportion),
                       channel_scale=Fraction(scale), pre_conv=pre_conv)


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    ref_params_m: float
    config: ModelConfig


PRESETS: dict[str, Preset] = {}


def _register(name: str, description: str, ref_m: float,
              config: ModelConfig) -> Preset:
    preset = Preset(name, description, ref_m, config)
    PRESETS[name] = preset
    return preset


_register("crnn", "baseline with static convolutions only", 4.428, _cfg())
_register("fdy", "every output channel frequency-dynamic", 11.061,
          _cfg("(1)", proportion=Fraction(1)))
_register("dfd", "fully dynamic with dilated basis kernels", 11.061,
          _cfg("(2,3)", proportion=Fraction(1)))
for _num, _den, _ref in [(1, 32, 4.794), (1, 16, 4.996), (1, 8, 5.401),
                         (2, 8, 6.209), (3, 8, 7.018), (4, 8, 7.827),
                         (5, 8, 8.635), (6, 8, 9.444), (7, 8, 10.253)]:
    _register(f"pfd_{_num}_{_den}",
              f"dynamic branch on {_num}/{_den} of the channels", _ref,
              _cfg("(1)", proportion=Fraction(_num, _den)))
_register("mfd_1_32_x4", "four 1/32-sized dynamic branches", 5.896,
          _cfg("(1)x4", proportion=Fraction(1, 32)))
_register("mfd_1_16_x2", "two 1/16-sized dynamic branches", 5.566,
          _cfg("(1)x2", proportion=Fraction(1, 16)))
for _n, _ref in [(2, 6.374), (3, 7.348), (4, 8.322), (5, 9.296),
                 (6, 10.270), (7, 11.243), (8, 12.217)]:
    _register(f"mfd_1_8_x{_n}", f"{_n} 1/8-sized dynamic branches", _ref,
              _cfg(f"(1)x{_n}"))
_register("mdfd_8_8", "five 1/8 branches, three of them dilated", 9.296,
          _cfg("(1)x2+(2,3)+(2,2,3)+(2,3,3)"))
_register("fdy_11_8", "fully dynamic at 11/8 width with pre-convolution",
          19.317, _cfg("(1)", proportion=Fraction(1), scale=Fraction(11, 8),
                       pre_conv=True))
_register("mdfd_11_8_x8", "eight plain dynamic branches at 11/8 width",
          18.157, _cfg("(1)x8", proportion=Fraction(1, 11),
                       scale=Fraction(11, 8), pre_conv=True))
_register("mdfd_11_8_mixed",
          "eight branches mixing single- and multi-kernel dilations",
          18.157, _cfg("(1)x3+(2)+(3)+(2,3)+(2,2,3)+(2,3,3)",
                       proportion=Fraction(1, 11), scale=Fraction(11, 8),
                       pre_conv=True))
_register("mdfd_11_8_best", "the strongest reported configuration",
          18.157, _cfg("(1)x5+(2,3)+(2,2,3)+(2,3,3)",
                       proportion=Fraction(1, 11), scale=Fraction(11, 8),
                       pre_conv=True))
_register("mdfd_11_8_wide", "nine branches at 11/8 width", 19.582,
          _cfg("(1)x6+(2,3)+(2,2,3)+(2,3,3)", proportion=Fraction(1, 11),
               scale=Fraction(11, 8), pre_conv=True))
_register("mdfd_13_8", "ten branches at 13/8 width", 26.191,
          _cfg("(1)x5+(2,2)+(3,3)+(2,3)+(2,2,3)+(2,3,3)",
               proportion=Fraction(1, 13), scale=Fraction(13, 8),
               pre_conv=True))
_register("mdfd_14_8", "eleven branches at 14/8 width", 30.894,
          _cfg("(1)x5+(2,2)+(3,3)+(2,2,3,3)+(2,3)+(2,2,3)+(2,3,3)",
               proportion=Fraction(1, 14), scale=Fraction(14, 8),
               pre_conv=True))


def get_preset(name: str) -> Preset:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: "
            + ", ".join(sorted(PRESETS)))
    return PRESETS[name]


# -- reference tables ----------------------------------------------------------

TABLES: dict[str, tuple[str, ...]] = {
    "I": ("crnn", "pfd_1_32", "pfd_1_16", "pfd_1_8", "pfd_2_8", "pfd_3_8",
          "pfd_4_8", "pfd_5_8", "pfd_6_8", "pfd_7_8", "fdy"),
    "II": ("fdy", "pfd_1_8", "mfd_1_32_x4", "mfd_1_16_x2", "mfd_1_8_x2",
           "mfd_1_8_x3", "mfd_1_8_x4", "mfd_1_8_x5", "mfd_1_8_x6",
           "mfd_1_8_x7", "mfd_1_8_x8"),
    "IV": ("fdy", "dfd", "pfd_1_8", "mfd_1_8_x5", "mdfd_8_8", "fdy_11_8",
           "mdfd_11_8_x8", "mdfd_11_8_mixed", "mdfd_11_8_best",
           "mdfd_11_8_wide", "mdfd_13_8", "mdfd_14_8"),
}


@dataclass(frozen=True)
class TableRow:
    name: str
    params: int
    params_m: float
    ref_params_m: float
    delta_pct: float


def table_rows(table_id: str) -> list[TableRow]:
    if table_id not in TABLES:
        raise ConfigurationError(
            f"unknown table {table_id!r}; available: "
            + ", ".join(sorted(TABLES)))
    rows = []
    for name in TABLES[table_id]:
        preset = PRESETS[name]
        params = count_model_params(preset.config)
        params_m = params / 1e6
        delta = 100.0 * (params_m - preset.ref_params_m) \
            / preset.ref_params_m
        rows.append(TableRow(name, params, params_m, preset.ref_params_m,
                             delta))
    return rows


def format_table(table_id: str) -> str:
    rows = table_rows(table_id)
    lines = [f"table {table_id}",
             f"{'name':<18} {'params':>10} {'params(M)':>10} "
             f"{'ref(M)':>8} {'delta%':>8}"]
    for r in rows:
        lines.append(f"{r.name:<18} {r.params:>10d} {r.params_m:>10.3f} "
                     f"{r.ref_params_m:>8.3f} {r.delta_pct:>+8.3f}")
    return "\n".join(lines)
