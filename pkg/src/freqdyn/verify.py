"""Runtime self-verification suites behind the `verify` command.

Three suites, all on fixed seeds and 64-bit tensors so output is identical
run to run:

  * equivalence: layer identities of the dynamic convolution (full-share
    dynamic layer vs per-kernel definition, K=1 and identical-kernel and
    static-only collapses to a plain conv, grouped forward vs per-bin
    kernel assembly) at 1e-10;
  * gradcheck: central finite differences against every differentiable
    operation and one 2-branch dilated dynamic layer at 1e-4;
  * psds: evaluation metrics against direct-definition references, exact
    endpoints, and the median filter against a sliding reference.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from . import reference
from .autodiff import Tensor
from .config import EvalConfig
from .dynamic import (AttentionHeadConfig, BranchSpec, DilationSpec,
                      MDFDConv, MDFDLayerConfig, fdy_branch_forward)
from .errors import ConfigurationError
from .evaluation import median_filter_posteriors, psds1
from .events import Event
from .gradcheck import finite_diff_check

EQUIVALENCE_TOL = 1e-10
GRAD_TOL = 1e-4
PSDS_TOL = 1e-9
SUITE_NAMES = ("equivalence", "gradcheck", "psds")


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one named check within a suite."""

    suite: str
    name: str
    passed: bool
    detail: str


def _result(suite, name, passed, detail):
    return CheckResult(suite, name, bool(passed), detail)


# -- equivalence suite --------------------------------------------------------

def _attention_config():
    return AttentionHeadConfig(squeeze_ratio=2, min_hidden=4)


def _single_branch_layer(rng, proportion, dilation):
    config = MDFDLayerConfig(
        c_in=3, c_out=4, branches=(BranchSpec(proportion, dilation),),
        attention=_attention_config())
    return MDFDConv(config, rng, dtype=np.float64)


def _input(rng, f_bins=12):
    return Tensor(rng.normal(size=(2, 3, 5, f_bins)))


def _max_diff(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def equivalence_suite(n_seeds: int = 20) -> list[CheckResult]:
    """Layer identities that must hold to EQUIVALENCE_TOL in 64-bit."""
    errs = {"full_share_vs_per_kernel": 0.0, "k1_vs_plain_conv": 0.0,
            "identical_kernels_vs_plain_conv": 0.0,
            "static_only_vs_plain_conv": 0.0,
            "grouped_vs_assembled_per_bin": 0.0}
    min_shift_gap = np.inf
    for seed in range(n_seeds):
        rng = np.random.default_rng([97, seed])
        x = _input(rng)

        # A dynamic layer covering 8/8 of the output channels has no
        # static remainder; its output must match the bare per-kernel
        # definition of frequency-dynamic convolution.
        layer = _single_branch_layer(rng, Fraction(8, 8),
                                     DilationSpec((2, 3), k=4))
        branch = layer.branches[0]
        attn = branch.attention.forward(x).data
        want = reference.per_kernel_dynamic_conv(
            x.data, branch.kernels.data, branch.dilations,
            attn, branch.bias.data)
        errs["full_share_vs_per_kernel"] = max(
            errs["full_share_vs_per_kernel"],
            _max_diff(layer.forward(x).data, want))

        # One basis kernel: attention softmax over a single logit is
        # exactly one, so the layer degenerates to a plain convolution.
        layer1 = _single_branch_layer(rng, Fraction(1), DilationSpec((), k=1))
        plain = ad.conv2d(x, layer1.branches[0].kernels[0],
                          layer1.branches[0].bias).data
        errs["k1_vs_plain_conv"] = max(
            errs["k1_vs_plain_conv"], _max_diff(layer1.forward(x).data, plain))

        # Equal basis kernels at dilation 1: the attention weights sum to
        # one per bin, so the blend reproduces a plain convolution.
        layer_eq = _single_branch_layer(rng, Fraction(1),
                                        DilationSpec((), k=4))
        k0 = layer_eq.branches[0].kernels.data[0].copy()
        layer_eq.branches[0].kernels.data[:] = k0
        plain = ad.conv2d(x, Tensor(k0), layer_eq.branches[0].bias).data
        errs["identical_kernels_vs_plain_conv"] = max(
            errs["identical_kernels_vs_plain_conv"],
            _max_diff(layer_eq.forward(x).data, plain))

        # No branches at all: the layer is exactly its static convolution.
        static = MDFDConv(MDFDLayerConfig(c_in=3, c_out=4, branches=()),
                          rng, dtype=np.float64)
        plain = ad.conv2d(x, static.static_w, static.static_b).data
        errs["static_only_vs_plain_conv"] = max(
            errs["static_only_vs_plain_conv"],
            _max_diff(static.forward(x).data, plain))

        # Grouped-convolution forward vs literally assembling a blended
        # dense kernel at every frequency bin.
        kernels = rng.normal(size=(4, 2, 3, 3, 3))
        bias = rng.normal(size=2)
        logits = rng.normal(size=(2, 4, x.shape[3]))
        attn = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        dilations = (1, 1, 2, 3)
        got = fdy_branch_forward(x, Tensor(kernels), dilations, Tensor(bias),
                                 Tensor(attn)).data
        want = reference.assembled_dynamic_conv(x.data, kernels, dilations,
                                                attn, bias)
        errs["grouped_vs_assembled_per_bin"] = max(
            errs["grouped_vs_assembled_per_bin"], _max_diff(got, want))

        # Attention depends on content per frequency bin, so shifting the
        # input along frequency must not merely shift the output.
        rolled = Tensor(np.roll(x.data, 2, axis=3))
        gap = _max_diff(layer.forward(rolled).data,
                        np.roll(layer.forward(x).data, 2, axis=3))
        min_shift_gap = min(min_shift_gap, gap)

    results = [
        _result("equivalence", name, err <= EQUIVALENCE_TOL,
                f"max_abs_diff={err:.3e} tol={EQUIVALENCE_TOL:.0e} "
                f"seeds={n_seeds}")
        for name, err in errs.items()]
    results.append(_result(
        "equivalence", "frequency_shift_changes_output",
        min_shift_gap > 1e-6,
        f"min_shift_gap={min_shift_gap:.3e} must exceed 1e-06 "
        f"seeds={n_seeds}"))
    return results


# -- gradient-check suite -----------------------------------------------------

def _weighted_loss(coeff):
    """Loss with value-dependent gradients; catches transposed or scaled
    outputs that a bare .sum() would let through."""
    c = Tensor(coeff)

    def loss(out):
        return ((out * c) ** 2.0).sum() + (out * c).sum()

    return loss


def _op_cases(rng):
    """(name, flat point, f) triples covering every differentiable op."""
    coeff = rng.normal(size=(3, 4))
    loss = _weighted_loss(coeff)
    other = Tensor(rng.normal(size=(4,)))
    numer = Tensor(rng.normal(size=(3, 4)))
    point = rng.normal(size=(3, 4))
    signs = np.where(rng.random((3, 4)) < 0.5, -1.0, 1.0)
    away_from_zero = signs * rng.uniform(0.2, 0.7, size=(3, 4))
    positive = rng.uniform(0.5, 2.0, size=(3, 4))

    t3 = rng.normal(size=(2, 3, 4))
    coeff3 = rng.normal(size=(3, 2, 4))
    b_mat = Tensor(rng.normal(size=(4, 2)))
    a_mat = Tensor(rng.normal(size=(3, 4)))
    coeff_mm = rng.normal(size=(3, 2))

    x4 = rng.normal(size=(1, 2, 4, 6))
    w4 = Tensor(rng.normal(size=(3, 2, 3, 3)))
    b4 = Tensor(rng.normal(size=3))
    coeff_conv = rng.normal(size=(1, 3, 4, 6))
    coeff_pool = rng.normal(size=(1, 2, 4, 3))
    gamma = Tensor(np.abs(rng.normal(size=2)) + 0.5, requires_grad=True)
    beta = Tensor(rng.normal(size=2), requires_grad=True)
    coeff_bn = rng.normal(size=(1, 2, 4, 6))
    gate_w = Tensor(rng.normal(size=(2, 2)))
    gate_b = Tensor(rng.normal(size=2))
    drop_seed = int(rng.integers(1 << 30))

    def conv(t):
        return ad.conv2d(t.reshape(1, 2, 4, 6), w4, b4, dilation=(1, 2))

    def bn_train(t, g=gamma, b=beta):
        mean = np.zeros(2)
        var = np.ones(2)
        return ad.batch_norm2d(t.reshape(1, 2, 4, 6), g, b,
                               running_mean=mean, running_var=var,
                               training=True)

    cases = [
        ("add", point, lambda t: loss(t + other)),
        ("mul", point, lambda t: loss(t * other)),
        ("power", positive, lambda t: loss(t ** 1.7)),
        ("div", positive, lambda t: loss(numer / t)),
        ("exp", point, lambda t: loss(ad.exp(t * 0.5))),
        ("log", positive, lambda t: loss(ad.log(t))),
        ("tanh", point, lambda t: loss(ad.tanh(t))),
        ("sigmoid", point, lambda t: loss(ad.sigmoid(t))),
        ("relu", away_from_zero, lambda t: loss(ad.relu(t))),
        ("clip", away_from_zero, lambda t: loss(ad.clip(t, -0.75, 0.75))),
        ("softmax", point,
         lambda t: loss(ad.softmax(t, axis=1, tau=31.0))),
        ("mean", point,
         lambda t: (t.mean(axis=0, keepdims=True) * Tensor(coeff)).sum()),
        ("sum_keepdims", point,
         lambda t: (t.sum(axis=1, keepdims=True) * Tensor(coeff)).sum()),
        ("getitem", point,
         lambda t: ((t[1:, ::2] * Tensor(coeff[1:, ::2])) ** 2.0).sum()),
        ("transpose", t3.ravel(),
         lambda t: ((ad.transpose(t.reshape(2, 3, 4), (1, 0, 2))
                     * Tensor(coeff3)) ** 2.0).sum()),
        ("reshape", point, lambda t: loss(t.reshape(4, 3).reshape(3, 4))),
        ("concat", point,
         lambda t: ((ad.concat([t, t * 0.5], axis=0)
                     * Tensor(np.vstack([coeff, coeff]))) ** 2.0).sum()),
        ("matmul_left", point,
         lambda t: ((ad.matmul(t, b_mat) * Tensor(coeff_mm)) ** 2.0).sum()),
        ("matmul_right", rng.normal(size=(4, 2)).ravel(),
         lambda t: ((ad.matmul(a_mat, t.reshape(4, 2))
                     * Tensor(coeff_mm)) ** 2.0).sum()),
        ("conv2d_input", x4.ravel(),
         lambda t: ((conv(t) * Tensor(coeff_conv)) ** 2.0).sum()),
        ("conv2d_weight", w4.data.ravel().copy(),
         lambda t: ((ad.conv2d(Tensor(x4), t.reshape(3, 2, 3, 3), b4,
                               dilation=(1, 2))
                     * Tensor(coeff_conv)) ** 2.0).sum()),
        ("conv2d_bias", b4.data.copy(),
         lambda t: ((ad.conv2d(Tensor(x4), w4, t, dilation=(1, 2))
                     * Tensor(coeff_conv)) ** 2.0).sum()),
        ("avg_pool", x4.ravel(),
         lambda t: ((ad.avg_pool2d(t.reshape(1, 2, 4, 6), (1, 2))
                     * Tensor(coeff_pool)) ** 2.0).sum()),
        ("batch_norm_train_input", x4.ravel(),
         lambda t: ((bn_train(t) * Tensor(coeff_bn)) ** 2.0).sum()
         + (bn_train(t) * Tensor(coeff_bn)).sum()),
        ("batch_norm_gamma", np.abs(rng.normal(size=2)) + 0.5,
         lambda t: ((bn_train(Tensor(x4.ravel()), g=t)
                     * Tensor(coeff_bn)) ** 2.0).sum()),
        ("batch_norm_beta", rng.normal(size=2),
         lambda t: ((bn_train(Tensor(x4.ravel()), b=t)
                     * Tensor(coeff_bn)) ** 2.0).sum()),
        ("batch_norm_eval", x4.ravel(),
         lambda t: ((ad.batch_norm2d(t.reshape(1, 2, 4, 6), gamma, beta,
                                     running_mean=np.full(2, 0.3),
                                     running_var=np.full(2, 1.7),
                                     training=False)
                     * Tensor(coeff_bn)) ** 2.0).sum()),
        ("dropout", x4.ravel(),
         lambda t: ((ad.dropout(t.reshape(1, 2, 4, 6), 0.4,
                                np.random.default_rng(drop_seed))
                     * Tensor(coeff_bn)) ** 2.0).sum()),
        ("context_gate_input", x4.ravel(),
         lambda t: ((ad.context_gate(t.reshape(1, 2, 4, 6), gate_w, gate_b)
                     * Tensor(coeff_bn)) ** 2.0).sum()),
        ("context_gate_weight", rng.normal(size=(2, 2)).ravel(),
         lambda t: ((ad.context_gate(Tensor(x4), t.reshape(2, 2), gate_b)
                     * Tensor(coeff_bn)) ** 2.0).sum()),
    ]
    return cases


def _layer_cases(rng):
    """Gradient checks through a 2-branch dilated dynamic layer."""
    config = MDFDLayerConfig(
        c_in=2, c_out=4,
        branches=(BranchSpec(Fraction(1, 2), DilationSpec((2,), k=2)),
                  BranchSpec(Fraction(1, 4), DilationSpec((2, 3), k=2))),
        attention=_attention_config())
    layer = MDFDConv(config, rng, dtype=np.float64)
    x_shape = (1, 2, 4, 10)
    x0 = rng.normal(size=x_shape)
    coeff = Tensor(rng.normal(size=(1, 4, 4, 10)))
    branch = layer.branches[0]

    def layer_loss(t):
        out = layer.forward(t.reshape(x_shape))
        return ((out * coeff) ** 2.0).sum() + (out * coeff).sum()

    def kernel_loss(t):
        attn = branch.attention.forward(Tensor(x0))
        out = fdy_branch_forward(Tensor(x0),
                                 t.reshape(branch.kernels.shape),
                                 branch.dilations, branch.bias, attn)
        part = Tensor(coeff.data[:, :2])
        return ((out * part) ** 2.0).sum() + (out * part).sum()

    return [
        ("mdfd_layer_input", x0.ravel(), layer_loss),
        ("mdfd_layer_kernels", branch.kernels.data.ravel().copy(),
         kernel_loss),
    ]


def gradcheck_suite(n_seeds: int = 10) -> list[CheckResult]:
    """Finite-difference checks; worst relative error over all seeds."""
    worst: dict[str, float] = {}
    for seed in range(n_seeds):
        rng = np.random.default_rng([193, seed])
        for name, point, f in _op_cases(rng) + _layer_cases(rng):
            err = finite_diff_check(f, np.asarray(point, dtype=np.float64))
            worst[name] = max(worst.get(name, 0.0), err)
    return [
        _result("gradcheck", name, err < GRAD_TOL,
                f"max_rel_err={err:.3e} tol={GRAD_TOL:.0e} seeds={n_seeds}")
        for name, err in worst.items()]


# -- psds and post-processing suite --------------------------------------------

def _eval_config():
    return EvalConfig()


def _random_micro_dataset(rng):
    """A few clips with a few events each, plus random detection sets."""
    classes = [f"c{i}" for i in range(int(rng.integers(1, 4)))]
    files = [f"f{i}" for i in range(int(rng.integers(1, 6)))]
    durations = {f: float(rng.uniform(30, 120)) for f in files}
    gts = []
    for f in files:
        for _ in range(int(rng.integers(0, 5))):
            onset = float(rng.uniform(0, 20))
            gts.append(Event(f, onset, onset + float(rng.uniform(0.5, 8)),
                             classes[int(rng.integers(len(classes)))]))
    per_thr = []
    for _ in range(int(rng.integers(2, 6))):
        dets = []
        for f in files:
            for _ in range(int(rng.integers(0, 5))):
                onset = float(rng.uniform(0, 25))
                dets.append(Event(f, onset,
                                  onset + float(rng.uniform(0.3, 6)),
                                  classes[int(rng.integers(len(classes)))]))
        per_thr.append(dets)
    return durations, gts, per_thr


def psds_suite(n_datasets: int = 120) -> list[CheckResult]:
    """Metric endpoints, reference agreement, and median-filter checks."""
    results = []
    cfg = _eval_config()

    gt = [Event("clip0", 1.0, 3.0, "dog"), Event("clip0", 5.0, 6.5, "cat"),
          Event("clip1", 0.5, 4.0, "dog"), Event("clip2", 2.0, 2.8, "cat")]
    durations = {"clip0": 10.0, "clip1": 10.0, "clip2": 10.0}
    perfect = [list(gt) for _ in range(10)]
    value = psds1(perfect, gt, durations, cfg).value
    results.append(_result(
        "psds", "perfect_detections_score_one", value == 1.0,
        f"value={value!r} must equal 1.0 exactly"))

    value = psds1([[] for _ in range(10)], gt, durations, cfg).value
    results.append(_result(
        "psds", "empty_detections_score_zero", value == 0.0,
        f"value={value!r} must equal 0.0 exactly"))

    rng = np.random.default_rng(20240917)
    worst = 0.0
    for _ in range(n_datasets):
        durs, gts, per_thr = _random_micro_dataset(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = psds1(per_thr, gts, durs, cfg).value
        counts = [reference.intersection_counts_reference(
            d, gts, cfg.dtc, cfg.gtc) for d in per_thr]
        n_gt: dict[str, int] = {}
        for g in gts:
            n_gt[g.label] = n_gt.get(g.label, 0) + 1
        want = reference.psds1_reference(counts, n_gt,
                                         sum(durs.values()) / 3600.0,
                                         cfg.alpha_st, cfg.e_max)
        worst = max(worst, abs(got - want))
    results.append(_result(
        "psds", "reference_agreement", worst <= PSDS_TOL,
        f"max_abs_diff={worst:.3e} tol={PSDS_TOL:.0e} "
        f"datasets={n_datasets}"))

    width = 7
    worst_median = 0.0
    spikes_removed = True
    for bits in itertools.product((0.0, 1.0), repeat=12):
        row = np.array(bits)
        got = median_filter_posteriors(row[np.newaxis, :], width)[0]
        want = reference.median_filter_reference(row, width)
        worst_median = max(worst_median, _max_diff(got, want))
    # Runs touching a boundary are extended by edge replication, so only
    # interior runs count as isolated.
    for run in range(1, 4):
        for start in range(1, 11 - run):
            row = np.zeros(12)
            row[start:start + run] = 1.0
            if median_filter_posteriors(row[np.newaxis, :], width)[0].any():
                spikes_removed = False
            row = 1.0 - row
            filtered = median_filter_posteriors(row[np.newaxis, :], width)[0]
            if not filtered.all():
                spikes_removed = False
    results.append(_result(
        "psds", "median_filter_matches_sliding_reference",
        worst_median == 0.0,
        f"max_abs_diff={worst_median:.3e} over all 4096 binary signals "
        f"of length 12, width {width}"))
    results.append(_result(
        "psds", "median_filter_removes_short_runs", spikes_removed,
        f"interior runs and gaps of length <= 3 erased at width {width}"))
    return results


# -- suite driver ---------------------------------------------------------------

_SUITES = {"equivalence": equivalence_suite, "gradcheck": gradcheck_suite,
           "psds": psds_suite}


def run_suites(which: str = "all") -> list[CheckResult]:
    """Run one named suite or all of them, in declaration order."""
    if which == "all":
        names = SUITE_NAMES
    elif which in _SUITES:
        names = (which,)
    else:
        raise ConfigurationError(
            f"unknown suite {which!r}; choose from "
            f"{', '.join(SUITE_NAMES)} or all")
    results: list[CheckResult] = []
    for name in names:
        results.extend(_SUITES[name]())
    return results


def format_results(results: list[CheckResult]) -> str:
    """Fixed-layout report; no timestamps, stable float formatting."""
    lines = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"[{r.suite}] {r.name}: {status} ({r.detail})")
    n_pass = sum(r.passed for r in results)
    lines.append(f"checks passed: {n_pass}/{len(results)}")
    return "\n".join(lines) + "\n"
