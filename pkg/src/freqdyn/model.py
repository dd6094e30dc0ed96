"""CRNN sound event detector built on frequency-dynamic conv blocks.

Seven conv blocks (conv or MDFD conv, batch norm, channel context gate,
average pooling, dropout) feed a bidirectional GRU and two heads: a sigmoid
frame-level (strong) head and a softmax-over-time attention pooling (weak)
head. Frequency is pooled down to an extent of 2 before the last conv layer
and averaged out before the recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dynamic import (AttentionHeadConfig, BranchSpec, DilationSpec,
                      MDFDConv, MDFDLayerConfig, attention_param_count,
                      fan_in_uniform, layer_param_count, parse_branch_specs,
                      validate_config)
from .errors import ConfigurationError

BASE_WIDTHS = (32, 64, 128, 256, 256, 256, 256)


@dataclass(frozen=True)
class ModelConfig:
    """Static description of one detector; everything needed to rebuild it."""

    n_mels: int = 128
    n_classes: int = 10
    class_names: tuple[str, ...] | None = None
    channel_scale: Fraction = Fraction(1)
    base_widths: tuple[int, ...] = BASE_WIDTHS
    layer_specs: str = "static"
    branch_proportion: Fraction = Fraction(1, 8)
    basis_kernels: int = 4
    kernel: tuple[int, int] = (3, 3)
    attention: AttentionHeadConfig = field(default_factory=AttentionHeadConfig)
    pre_conv: bool = False
    pre_channels: int = 16
    pool_time: tuple[int, ...] = (2, 2, 1, 1, 1, 1, 1)
    pool_freq: tuple[int, ...] = (2, 2, 2, 2, 2, 2, 1)
    rnn_hidden: int = 256
    rnn_layers: int = 2
    dropout: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channel_scale",
                           Fraction(self.channel_scale))
        object.__setattr__(self, "branch_proportion",
                           Fraction(self.branch_proportion))
        if len(self.pool_time) != len(self.base_widths) or \
                len(self.pool_freq) != len(self.base_widths):
            raise ConfigurationError(
                f"pool schedules must list one entry per conv layer "
                f"({len(self.base_widths)}), got {self.pool_time} and "
                f"{self.pool_freq}")
        if self.class_names is not None and \
                len(self.class_names) != self.n_classes:
            raise ConfigurationError(
                f"{len(self.class_names)} class names for n_classes="
                f"{self.n_classes}")
        for w in self.widths:
            pass  # raises inside the property when non-integral

    @property
    def widths(self) -> tuple[int, ...]:
        out = []
        for w in self.base_widths:
            scaled = w * self.channel_scale
            if scaled.denominator != 1 or scaled <= 0:
                raise ConfigurationError(
                    f"channel scale {self.channel_scale} of base width {w} "
                    f"is not a positive integer")
            out.append(int(scaled))
        return tuple(out)

    @property
    def branch_template(self) -> tuple[BranchSpec, ...]:
        if self.layer_specs.strip() in ("", "static"):
            return ()
        specs = parse_branch_specs(self.layer_specs, k=self.basis_kernels)
        return tuple(BranchSpec(self.branch_proportion, s) for s in specs)

    @property
    def time_factor(self) -> int:
        return int(np.prod(self.pool_time))

    def names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return self.class_names
        return tuple(f"class_{i}" for i in range(self.n_classes))


class PlainConv:
    """Ordinary same-padding conv with bias."""

    def __init__(self, c_in: int, c_out: int, kernel, rng, dtype):
        k_t, k_f = kernel
        fan_in = c_in * k_t * k_f
        self.weight = fan_in_uniform(rng, (c_out, c_in, k_t, k_f), fan_in,
                                     dtype)
        self.bias = fan_in_uniform(rng, (c_out,), fan_in, dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias)

    def parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def buffers(self):
        return iter(())


class ConvBlock:
    """conv/MDFD -> batch norm -> context gate -> pool -> dropout."""

    def __init__(self, conv, c_out: int, pool: tuple[int, int],
                 dropout: float, rng, dtype):
        self.conv = conv
        self.pool = pool
        self.dropout = dropout
        self.bn_gamma = Tensor(np.ones(c_out, dtype=dtype), requires_grad=True)
        self.bn_beta = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.bn_mean = np.zeros(c_out, dtype=dtype)
        self.bn_var = np.ones(c_out, dtype=dtype)
        self.gate_w = fan_in_uniform(rng, (c_out, c_out), c_out, dtype)
        self.gate_b = fan_in_uniform(rng, (c_out,), c_out, dtype)

    def forward(self, x: Tensor, training: bool,
                rng: np.random.Generator | None) -> Tensor:
        y = self.conv.forward(x, training=training)
        y = ad.batch_norm2d(y, self.bn_gamma, self.bn_beta,
                            running_mean=self.bn_mean,
                            running_var=self.bn_var, training=training)
        y = ad.context_gate(y, self.gate_w, self.gate_b)
        if self.pool != (1, 1):
            y = ad.avg_pool2d(y, self.pool)
        if training and self.dropout > 0:
            y = ad.dropout(y, self.dropout, rng, training=True)
        return y

    def parameters(self):
        for name, p in self.conv.parameters():
            yield f"conv.{name}", p
        yield "bn.gamma", self.bn_gamma
        yield "bn.beta", self.bn_beta
        yield "gate.weight", self.gate_w
        yield "gate.bias", self.gate_b

    def buffers(self):
        for name, b in self.conv.buffers():
            yield f"conv.{name}", b
        yield "bn.running_mean", self.bn_mean
        yield "bn.running_var", self.bn_var


class GRUDirection:
    """One direction of one GRU layer, gates ordered (reset, update, new)."""

    def __init__(self, input_size: int, hidden: int, rng, dtype):
        self.hidden = hidden
        self.w_ih = fan_in_uniform(rng, (3 * hidden, input_size), hidden,
                                   dtype)
        self.w_hh = fan_in_uniform(rng, (3 * hidden, hidden), hidden, dtype)
        self.b_ih = fan_in_uniform(rng, (3 * hidden,), hidden, dtype)
        self.b_hh = fan_in_uniform(rng, (3 * hidden,), hidden, dtype)

    def forward(self, x: Tensor, reverse: bool) -> Tensor:
        b_n, t_len, _ = x.shape
        h_size = self.hidden
        pre = ad.matmul(x, self.w_ih.transpose(1, 0)) + self.b_ih
        h = Tensor(np.zeros((b_n, h_size), dtype=x.data.dtype))
        steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
        outs: list[Tensor | None] = [None] * t_len
        for t in steps:
            hx = ad.matmul(h, self.w_hh.transpose(1, 0)) + self.b_hh
            px = pre[:, t]
            r = ad.sigmoid(px[:, :h_size] + hx[:, :h_size])
            z = ad.sigmoid(px[:, h_size:2 * h_size] +
                           hx[:, h_size:2 * h_size])
            n = ad.tanh(px[:, 2 * h_size:] + r * hx[:, 2 * h_size:])
            h = (1.0 - z) * n + z * h
            outs[t] = h.reshape(b_n, 1, h_size)
        return ad.concat(outs, axis=1)

    def parameters(self):
        yield "w_ih", self.w_ih
        yield "w_hh", self.w_hh
        yield "b_ih", self.b_ih
        yield "b_hh", self.b_hh


class BiGRU:
    """Stack of bidirectional GRU layers; outputs concatenate both directions."""

    def __init__(self, input_size: int, hidden: int, layers: int, rng, dtype):
        self.layers = []
        for i in range(layers):
            size = input_size if i == 0 else 2 * hidden
            self.layers.append((GRUDirection(size, hidden, rng, dtype),
                                GRUDirection(size, hidden, rng, dtype)))

    def forward(self, x: Tensor) -> Tensor:
        for fw, bw in self.layers:
            x = ad.concat([fw.forward(x, reverse=False),
                           bw.forward(x, reverse=True)], axis=2)
        return x

    def parameters(self):
        for i, (fw, bw) in enumerate(self.layers):
            for name, p in fw.parameters():
                yield f"l{i}.fw.{name}", p
            for name, p in bw.parameters():
                yield f"l{i}.bw.{name}", p


class SEDModel:
    """The assembled detector; build with `build_model` for seeded init."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.build_warnings: list[str] = []
        widths = config.widths
        template = config.branch_template

        freq = config.n_mels
        freq_at_layer = []
        for l in range(len(widths)):
            freq_at_layer.append(freq)
            if freq % config.pool_freq[l]:
                raise ConfigurationError(
                    f"frequency extent {freq} at layer {l + 1} is not "
                    f"divisible by pool {config.pool_freq[l]}")
            freq //= config.pool_freq[l]
        if freq_at_layer[-1] != 2:
            raise ConfigurationError(
                f"frequency extent before the last conv layer must be 2, "
                f"got {freq_at_layer[-1]} (n_mels={config.n_mels}, "
                f"pool_freq={config.pool_freq})")

        def dyn_conv(c_in, c_out, layer_idx, f_in):
            cfg = MDFDLayerConfig(c_in=c_in, c_out=c_out, branches=template,
                                  kernel=config.kernel,
                                  attention=config.attention)
            cfg, warns = validate_config(cfg, f_in)
            self.build_warnings += [f"layer {layer_idx}: {w}" for w in warns]
            return MDFDConv(cfg, rng, dtype)

        self.pre = None
        c_in = 1
        if config.pre_conv:
            conv = PlainConv(1, config.pre_channels, config.kernel, rng,
                             dtype)
            self.pre = ConvBlock(conv, config.pre_channels, (1, 1),
                                 config.dropout, rng, dtype)
            c_in = config.pre_channels

        self.blocks: list[ConvBlock] = []
        for l, c_out in enumerate(widths):
            dynamic = template and (l > 0 or config.pre_conv)
            if dynamic:
                conv = dyn_conv(c_in, c_out, l + 1, freq_at_layer[l])
            else:
                conv = PlainConv(c_in, c_out, config.kernel, rng, dtype)
            pool = (config.pool_time[l], config.pool_freq[l])
            self.blocks.append(ConvBlock(conv, c_out, pool, config.dropout,
                                         rng, dtype))
            c_in = c_out

        self.rnn = BiGRU(widths[-1], config.rnn_hidden, config.rnn_layers,
                         rng, dtype)
        head_in = 2 * config.rnn_hidden
        self.strong_w = fan_in_uniform(rng, (config.n_classes, head_in),
                                       head_in, dtype)
        self.strong_b = fan_in_uniform(rng, (config.n_classes,), head_in,
                                       dtype)
        self.att_w = fan_in_uniform(rng, (config.n_classes, head_in),
                                    head_in, dtype)
        self.att_b = fan_in_uniform(rng, (config.n_classes,), head_in, dtype)

    def forward(self, features, training: bool = False,
                rng: np.random.Generator | None = None
                ) -> tuple[Tensor, Tensor]:
        """Run the detector; returns (strong [B,C,T'], weak [B,C])."""
        x = features if isinstance(features, Tensor) else Tensor(
            np.asarray(features, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[3] != self.config.n_mels:
            raise ConfigurationError(
                f"expected features [B, 1, T, {self.config.n_mels}], got "
                f"{x.shape}")
        if x.shape[2] % self.config.time_factor:
            raise ConfigurationError(
                f"frame count {x.shape[2]} is not divisible by the pooled "
                f"time factor {self.config.time_factor}")
        if training and self.config.dropout > 0 and rng is None:
            raise ConfigurationError(
                "training-mode forward needs an rng for dropout")
        if self.pre is not None:
            x = self.pre.forward(x, training, rng)
        for block in self.blocks:
            x = block.forward(x, training, rng)
        x = x.mean(axis=3)                     # [B, C, T']
        x = x.transpose(0, 2, 1)               # [B, T', C]
        if training and self.config.dropout > 0:
            x = ad.dropout(x, self.config.dropout, rng, training=True)
        x = self.rnn.forward(x)                # [B, T', 2H]
        if training and self.config.dropout > 0:
            x = ad.dropout(x, self.config.dropout, rng, training=True)
        strong_logits = ad.matmul(x, self.strong_w.transpose(1, 0)) + \
            self.strong_b
        strong = ad.sigmoid(strong_logits)     # [B, T', C]
        att_logits = ad.matmul(x, self.att_w.transpose(1, 0)) + self.att_b
        att = ad.softmax(att_logits, axis=1)   # softmax over time
        weak = (att * strong).sum(axis=1)      # [B, C]
        return strong.transpose(0, 2, 1), weak

    def parameters(self):
        if self.pre is not None:
            for name, p in self.pre.parameters():
                yield f"pre.{name}", p
        for i, block in enumerate(self.blocks):
            for name, p in block.parameters():
                yield f"layer{i + 1}.{name}", p
        for name, p in self.rnn.parameters():
            yield f"rnn.{name}", p
        yield "head.strong.weight", self.strong_w
        yield "head.strong.bias", self.strong_b
        yield "head.att.weight", self.att_w
        yield "head.att.bias", self.att_b

    def buffers(self):
        if self.pre is not None:
            for name, b in self.pre.buffers():
                yield f"pre.{name}", b
        for i, block in enumerate(self.blocks):
            for name, b in block.buffers():
                yield f"layer{i + 1}.{name}", b

    def state_arrays(self):
        """All named arrays persisted in checkpoints: params then buffers."""
        for name, p in self.parameters():
            yield name, p.data, "param"
        for name, b in self.buffers():
            yield name, b, "buffer"


def build_model(config: ModelConfig, seed: int,
                dtype=np.float32) -> SEDModel:
    """Deterministically initialize a detector from a seed."""
    return SEDModel(config, np.random.default_rng(seed), dtype=dtype)


# -- parameter accounting -----------------------------------------------------

def _categorize(name: str) -> str:
    if name.startswith("rnn."):
        return "rnn"
    if name.startswith("head."):
        return "head"
    if ".att." in name:
        return "attention"
    if ".branch" in name:
        return "dynamic"
    if ".bn." in name or ".gate." in name:
        return "norm_gate"
    return "static"


def _layer_of(name: str) -> str:
    return name.split(".", 1)[0]


@dataclass
class ParamCountReport:
    rows: list[tuple[str, str, int]]        # (layer, category, count)
    by_category: dict[str, int]
    by_layer: dict[str, int]
    total: int

    def format_text(self) -> str:
        lines = [f"{'layer':<10} {'category':<10} {'params':>10}"]
        for layer, cat, n in self.rows:
            lines.append(f"{layer:<10} {cat:<10} {n:>10}")
        lines.append(f"{'total':<10} {'':<10} {self.total:>10}")
        return "\n".join(lines)


def count_parameters(model: SEDModel) -> ParamCountReport:
    """Itemized trainable-parameter counts from the live parameter list."""
    cells: dict[tuple[str, str], int] = {}
    for name, p in model.parameters():
        key = (_layer_of(name), _categorize(name))
        cells[key] = cells.get(key, 0) + p.data.size
    rows = sorted((layer, cat, n) for (layer, cat), n in cells.items())
    by_category: dict[str, int] = {}
    by_layer: dict[str, int] = {}
    for layer, cat, n in rows:
        by_category[cat] = by_category.get(cat, 0) + n
        by_layer[layer] = by_layer.get(layer, 0) + n
    return ParamCountReport(rows, by_category, by_layer,
                            sum(by_category.values()))


def count_model_params(config: ModelConfig) -> int:
    """Closed-form total trainable parameters; no tensors are allocated.

    Must equal `count_parameters(build_model(config, seed)).total`, which the
    tests enforce across the preset grid.
    """
    widths = config.widths
    template = config.branch_template
    k_t, k_f = config.kernel
    total = 0

    def block_extras(c_out: int) -> int:
        return 2 * c_out + c_out * c_out + c_out   # bn affine + gate

    freq = config.n_mels
    c_in = 1
    if config.pre_conv:
        c = config.pre_channels
        total += c * 1 * k_t * k_f + c + block_extras(c)
        c_in = c
    for l, c_out in enumerate(widths):
        dynamic = template and (l > 0 or config.pre_conv)
        if dynamic:
            cfg = MDFDLayerConfig(c_in=c_in, c_out=c_out, branches=template,
                                  kernel=config.kernel,
                                  attention=config.attention)
            cfg, _ = validate_config(cfg, freq)
            total += layer_param_count(cfg)["total"]
        else:
            total += c_out * c_in * k_t * k_f + c_out
        total += block_extras(c_out)
        freq //= config.pool_freq[l]
        c_in = c_out
    hidden = config.rnn_hidden
    size = widths[-1]
    for i in range(config.rnn_layers):
        total += 2 * (3 * hidden * (size + hidden) + 6 * hidden)
        size = 2 * hidden
    total += 2 * (config.n_classes * 2 * hidden + config.n_classes)
    return total
