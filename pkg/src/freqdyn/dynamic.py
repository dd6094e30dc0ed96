"""Frequency-dynamic convolution layers and their configuration algebra.

A frequency-dynamic (FDY) branch holds K basis kernels and blends their
outputs per frequency bin with content-dependent softmax attention, which
deliberately breaks translational equivariance along frequency. Variants are
expressed by one layer type:

  * partial (PFD): a dynamic branch covers only a fraction of the output
    channels, the rest come from a plain static conv;
  * multi (MFD): several dynamic branches side by side;
  * dilated (DFD): basis kernels spread along frequency by per-kernel
    dilation factors;
  * multi-dilated (MDFD): all of the above at once.

Branch shapes are written `(1)x5+(2,3)+(2,2,3)`: each parenthesized group is
one branch, `(1)` meaning no dilated kernels, other entries being the
dilation factors of the trailing basis kernels. With K basis kernels and
dilated sizes (d1..dm), the first K-m kernels use dilation 1 and the rest
use d1..dm in order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


# -- configuration types ------------------------------------------------------

@dataclass(frozen=True)
class DilationSpec:
    """Frequency dilations of one branch's basis kernels."""

    dilated: tuple[int, ...] = ()
    k: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"basis kernel count must be >= 1, "
                                     f"got {self.k}")
        if len(self.dilated) > self.k:
            raise ConfigurationError(
                f"{len(self.dilated)} dilated sizes exceed K={self.k} basis "
                f"kernels: {self.dilated}")
        for d in self.dilated:
            if d < 2:
                raise ConfigurationError(
                    f"dilated sizes must be >= 2, got {d} in {self.dilated}")

    def expand(self) -> list[int]:
        """Per-kernel dilation factors: leading ones, then the dilated sizes."""
        return [1] * (self.k - len(self.dilated)) + list(self.dilated)


@dataclass(frozen=True)
class BranchSpec:
    """One dynamic branch: its share of output channels and its dilations."""

    proportion: Fraction
    dilation: DilationSpec = field(default_factory=DilationSpec)

    def __post_init__(self):
        p = Fraction(self.proportion)
        object.__setattr__(self, "proportion", p)
        if not 0 < p <= 1:
            raise ConfigurationError(
                f"branch proportion must be in (0, 1], got {p}")


@dataclass(frozen=True)
class AttentionHeadConfig:
    """Shape of the per-branch frequency attention head."""

    squeeze_ratio: int = 4
    kernel: int = 3
    min_hidden: int = 4
    temperature: float = 31.0

    def hidden(self, c_in: int) -> int:
        return max(c_in // self.squeeze_ratio, self.min_hidden)


@dataclass(frozen=True)
class MDFDLayerConfig:
    """Channel split and branch shapes of one multi-dilated dynamic layer."""

    c_in: int
    c_out: int
    branches: tuple[BranchSpec, ...] = ()
    kernel: tuple[int, int] = (3, 3)
    attention: AttentionHeadConfig = field(default_factory=AttentionHeadConfig)

    def __post_init__(self):
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigurationError(
                f"channel counts must be positive, got {self.c_in}->"
                f"{self.c_out}")
        total = sum((b.proportion for b in self.branches), Fraction(0))
        if total > 1:
            raise ConfigurationError(
                f"branch proportions sum to {total} > 1")
        for i, b in enumerate(self.branches):
            share = self.c_out * b.proportion
            if share.denominator != 1 or share == 0:
                raise ConfigurationError(
                    f"branch {i} proportion {b.proportion} of C_out="
                    f"{self.c_out} is not a positive whole channel count")

    @property
    def static_proportion(self) -> Fraction:
        return 1 - sum((b.proportion for b in self.branches), Fraction(0))

    @property
    def static_channels(self) -> int:
        return self.c_out - sum(self.branch_channels)

    @property
    def branch_channels(self) -> tuple[int, ...]:
        return tuple(int(self.c_out * b.proportion) for b in self.branches)


def validate_config(config: MDFDLayerConfig,
                    input_f: int) -> tuple[MDFDLayerConfig, list[str]]:
    """Force dilations whose receptive field exceeds the frequency extent to 1.

    Returns the (possibly adjusted) config and a list of warning strings,
    one per adjusted branch. Geometry is settled here, never at forward time.
    """
    k_f = config.kernel[1]
    warnings: list[str] = []
    new_branches = []
    for i, branch in enumerate(config.branches):
        kept = tuple(d for d in branch.dilation.dilated
                     if 1 + (k_f - 1) * d <= input_f)
        if kept != branch.dilation.dilated:
            warnings.append(
                f"branch {i}: dilations {branch.dilation.dilated} exceed "
                f"frequency extent {input_f}; offending factors forced to 1")
            branch = replace(branch, dilation=DilationSpec(
                kept, branch.dilation.k))
        new_branches.append(branch)
    if not warnings:
        return config, []
    return replace(config, branches=tuple(new_branches)), warnings


# -- branch-shape strings -----------------------------------------------------

_BRANCH_RE = re.compile(r"^\((?P<body>[0-9, ]+)\)(?:x(?P<rep>[0-9]+))?$")


def parse_branch_specs(text: str, k: int = 4) -> tuple[DilationSpec, ...]:
    """Parse a branch-shape string like "(1)x5+(2,3)" into dilation specs."""
    specs: list[DilationSpec] = []
    if not text.strip():
        raise ConfigurationError("empty branch-shape string")
    for token in text.split("+"):
        token = token.strip().replace(" ", "")
        m = _BRANCH_RE.match(token)
        if m is None:
            raise ConfigurationError(
                f"malformed branch token {token!r} in {text!r}")
        body = [int(v) for v in m.group("body").replace(" ", "").split(",")
                if v != ""]
        if not body:
            raise ConfigurationError(
                f"empty dilation list in token {token!r}")
        if body == [1]:
            spec = DilationSpec((), k)
        elif any(v < 2 for v in body):
            raise ConfigurationError(
                f"dilation sizes must be 1 alone or all >= 2, got {token!r}")
        else:
            spec = DilationSpec(tuple(body), k)
        reps = int(m.group("rep") or 1)
        if reps < 1:
            raise ConfigurationError(f"repeat count must be >= 1 in {token!r}")
        specs.extend([spec] * reps)
    return tuple(specs)


def format_branch_specs(specs) -> str:
    """Canonical branch-shape string; consecutive equal branches collapse."""
    parts: list[str] = []
    i = 0
    specs = list(specs)
    while i < len(specs):
        j = i
        while j < len(specs) and specs[j].dilated == specs[i].dilated:
            j += 1
        body = ",".join(str(d) for d in specs[i].dilated) or "1"
        reps = j - i
        parts.append(f"({body})" + (f"x{reps}" if reps > 1 else ""))
        i = j
    return "+".join(parts)


# -- parameter initialization -------------------------------------------------

def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int,
                   dtype=np.float32) -> Tensor:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) trainable parameter."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


# -- attention head -----------------------------------------------------------

class FreqAttention:
    """Per-frequency softmax weights over K basis kernels.

    Time-averaged input -> 1-D frequency conv to a squeezed width -> batch
    norm -> relu -> 1-D frequency conv to K logits -> temperature softmax
    over the kernel axis. Output is [B, K, F].
    """

    def __init__(self, c_in: int, k: int, config: AttentionHeadConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.k = k
        self.config = config
        hidden = config.hidden(c_in)
        kern = config.kernel
        self.conv1_w = fan_in_uniform(rng, (hidden, c_in, 1, kern),
                                      c_in * kern, dtype)
        self.conv1_b = fan_in_uniform(rng, (hidden,), c_in * kern, dtype)
        self.bn_gamma = Tensor(np.ones(hidden, dtype=dtype),
                               requires_grad=True)
        self.bn_beta = Tensor(np.zeros(hidden, dtype=dtype),
                              requires_grad=True)
        self.bn_mean = np.zeros(hidden, dtype=dtype)
        self.bn_var = np.ones(hidden, dtype=dtype)
        self.conv2_w = fan_in_uniform(rng, (k, hidden, 1, kern),
                                      hidden * kern, dtype)
        self.conv2_b = fan_in_uniform(rng, (k,), hidden * kern, dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        pooled = x.mean(axis=2, keepdims=True)          # [B, C, 1, F]
        h = ad.conv2d(pooled, self.conv1_w, self.conv1_b)
        h = ad.batch_norm2d(h, self.bn_gamma, self.bn_beta,
                            running_mean=self.bn_mean,
                            running_var=self.bn_var, training=training)
        h = ad.relu(h)
        logits = ad.conv2d(h, self.conv2_w, self.conv2_b)  # [B, K, 1, F]
        weights = ad.softmax(logits, axis=1, tau=self.config.temperature)
        return weights[:, :, 0, :]                       # [B, K, F]

    def parameters(self):
        yield "conv1.weight", self.conv1_w
        yield "conv1.bias", self.conv1_b
        yield "bn.gamma", self.bn_gamma
        yield "bn.beta", self.bn_beta
        yield "conv2.weight", self.conv2_w
        yield "conv2.bias", self.conv2_b

    def buffers(self):
        yield "bn.running_mean", self.bn_mean
        yield "bn.running_var", self.bn_var


def attention_weights(x: Tensor, head: FreqAttention,
                      training: bool = False) -> Tensor:
    """Functional form of the attention head; see FreqAttention.forward."""
    return head.forward(x, training=training)


# -- dynamic branch and full layer --------------------------------------------

def _dilation_groups(dilations) -> list[tuple[int, int, int]]:
    """Contiguous runs of equal dilation as (start, stop, dilation)."""
    groups = []
    start = 0
    for i in range(1, len(dilations) + 1):
        if i == len(dilations) or dilations[i] != dilations[start]:
            groups.append((start, i, dilations[start]))
            start = i
    return groups


def fdy_branch_forward(x: Tensor, kernels: Tensor, dilations,
                       bias: Tensor | None, attn: Tensor) -> Tensor:
    """Attention-blended sum of per-kernel convolutions.

    out = sum_k attn[:, k, f] * conv2d(x, kernels[k], dilation=(1, d_k)),
    the attention broadcast over channels and time and indexed by output
    frequency bin (stride 1, same padding, so output F equals input F).
    Kernels sharing a dilation are folded into one convolution.
    """
    k_count, c_b, c_in, k_t, k_f = kernels.shape
    dilations = list(dilations)
    if len(dilations) != k_count:
        raise ConfigurationError(
            f"{k_count} basis kernels but {len(dilations)} dilations")
    b_n, _, t_in, f_in = x.shape
    if attn.shape != (b_n, k_count, f_in):
        raise ConfigurationError(
            f"attention shape {attn.shape} does not match batch {b_n}, "
            f"K {k_count}, frequency extent {f_in}")
    out = None
    for start, stop, d in _dilation_groups(dilations):
        g = stop - start
        w = kernels[start:stop].reshape(g * c_b, c_in, k_t, k_f)
        y = ad.conv2d(x, w, dilation=(1, d))           # [B, g*Cb, T, F]
        y = y.reshape(b_n, g, c_b, t_in, f_in)
        a = attn[:, start:stop].reshape(b_n, g, 1, 1, f_in)
        part = (y * a).sum(axis=1)                     # [B, Cb, T, F]
        out = part if out is None else out + part
    if bias is not None:
        out = out + bias.reshape(1, c_b, 1, 1)
    return out


class DynamicBranch:
    """K basis kernels, one shared bias, and a frequency attention head."""

    def __init__(self, c_in: int, c_branch: int, spec: BranchSpec,
                 attention: AttentionHeadConfig, kernel: tuple[int, int],
                 rng: np.random.Generator, dtype=np.float32):
        k = spec.dilation.k
        k_t, k_f = kernel
        fan_in = c_in * k_t * k_f
        self.dilations = spec.dilation.expand()
        self.kernels = fan_in_uniform(rng, (k, c_branch, c_in, k_t, k_f),
                                      fan_in, dtype)
        self.bias = fan_in_uniform(rng, (c_branch,), fan_in, dtype)
        self.attention = FreqAttention(c_in, k, attention, rng, dtype)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        attn = self.attention.forward(x, training=training)
        return fdy_branch_forward(x, self.kernels, self.dilations,
                                  self.bias, attn)

    def parameters(self):
        yield "kernels", self.kernels
        yield "bias", self.bias
        for name, p in self.attention.parameters():
            yield f"att.{name}", p

    def buffers(self):
        for name, b in self.attention.buffers():
            yield f"att.{name}", b


class MDFDConv:
    """Multi-dilated frequency-dynamic conv: dynamic branches plus a static rest.

    Output channels are the concatenation of each branch's output followed by
    the static convolution's output, in declaration order.
    """

    def __init__(self, config: MDFDLayerConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.config = config
        k_t, k_f = config.kernel
        fan_in = config.c_in * k_t * k_f
        self.branches = [
            DynamicBranch(config.c_in, c_b, spec, config.attention,
                          config.kernel, rng, dtype)
            for spec, c_b in zip(config.branches, config.branch_channels)]
        static_c = config.static_channels
        if static_c > 0:
            self.static_w = fan_in_uniform(
                rng, (static_c, config.c_in, k_t, k_f), fan_in, dtype)
            self.static_b = fan_in_uniform(rng, (static_c,), fan_in, dtype)
        else:
            self.static_w = None
            self.static_b = None

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        parts = [b.forward(x, training=training) for b in self.branches]
        if self.static_w is not None:
            parts.append(ad.conv2d(x, self.static_w, self.static_b))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    def parameters(self):
        for i, branch in enumerate(self.branches):
            for name, p in branch.parameters():
                yield f"branch{i}.{name}", p
        if self.static_w is not None:
            yield "static.weight", self.static_w
            yield "static.bias", self.static_b

    def buffers(self):
        for i, branch in enumerate(self.branches):
            for name, b in branch.buffers():
                yield f"branch{i}.{name}", b


def mdfd_forward(x: Tensor, layer: MDFDConv,
                 training: bool = False) -> Tensor:
    """Functional form of MDFDConv.forward."""
    return layer.forward(x, training=training)


# -- parameter accounting -----------------------------------------------------

def attention_param_count(c_in: int, k: int,
                          config: AttentionHeadConfig) -> int:
    hidden = config.hidden(c_in)
    kern = config.kernel
    conv1 = hidden * c_in * kern + hidden
    bn = 2 * hidden
    conv2 = k * hidden * kern + k
    return conv1 + bn + conv2


def layer_param_count(config: MDFDLayerConfig) -> dict:
    """Itemized trainable-parameter count of one MDFD layer.

    Weights: static C_in*C_static*kT*kF plus, per branch, K*C_in*C_branch*
    kT*kF basis-kernel weights and the attention head. Biases are counted
    once per output channel regardless of which part owns them.
    """
    k_t, k_f = config.kernel
    static_w = config.c_in * config.static_channels * k_t * k_f
    branch_kernels = []
    branch_attention = []
    for spec, c_b in zip(config.branches, config.branch_channels):
        branch_kernels.append(spec.dilation.k * config.c_in * c_b * k_t * k_f)
        branch_attention.append(attention_param_count(
            config.c_in, spec.dilation.k, config.attention))
    counts = {
        "static_weights": static_w,
        "branch_kernels": branch_kernels,
        "branch_attention": branch_attention,
        "biases": config.c_out,
    }
    counts["total"] = (static_w + sum(branch_kernels) +
                       sum(branch_attention) + config.c_out)
    return counts
