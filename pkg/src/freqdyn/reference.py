"""Slow direct-definition reference routes for the verification suites.

Everything here recomputes a result along a different algorithmic path from
the library code: per-frequency-bin kernel assembly instead of
convolve-then-blend, per-kernel loops instead of grouped convolutions,
linear scans instead of sorted envelopes. Agreement between the two paths
is therefore evidence of correctness rather than a tautology.
"""

from __future__ import annotations

import numpy as np

from .events import Event


def assembled_dynamic_conv(x: np.ndarray, kernels: np.ndarray, dilations,
                           attn: np.ndarray,
                           bias: np.ndarray | None = None) -> np.ndarray:
    """Frequency-dynamic conv by literal per-bin kernel assembly.

    For every output bin f, embed each basis kernel at its own dilation
    into a dense kernel of the widest receptive field, blend the dense
    kernels with the attention weights at f, and apply the blended kernel
    at that bin alone.
    """
    b_n, c_in, t_in, f_in = x.shape
    k_count, c_out, c_w, k_t, k_f = kernels.shape
    assert c_w == c_in and attn.shape == (b_n, k_count, f_in)
    d_max = max(dilations)
    ext_f = (k_f - 1) * d_max + 1
    center = ext_f // 2
    pad_t = ((k_t - 1) // 2, (k_t - 1) - (k_t - 1) // 2)
    pad_f = ((ext_f - 1) // 2, (ext_f - 1) - (ext_f - 1) // 2)
    xp = np.pad(x, ((0, 0), (0, 0), pad_t, pad_f))
    dense = np.zeros((k_count, c_out, c_in, k_t, ext_f), dtype=x.dtype)
    for k, d in enumerate(dilations):
        for j in range(k_f):
            dense[k, :, :, :, center + (j - k_f // 2) * d] = \
                kernels[k, :, :, :, j]
    out = np.zeros((b_n, c_out, t_in, f_in), dtype=x.dtype)
    for b in range(b_n):
        for f in range(f_in):
            blended = np.tensordot(attn[b, :, f], dense, axes=(0, 0))
            for t in range(t_in):
                window = xp[b, :, t:t + k_t, f:f + ext_f]
                out[b, :, t, f] = np.tensordot(
                    blended, window, axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out


def per_kernel_dynamic_conv(x, kernels, dilations, attn, bias=None):
    """Dynamic conv as the definition reads: one convolution per basis
    kernel, blended afterwards by the per-bin attention weights. Returns a
    numpy array given numpy inputs run through the library convolution."""
    from .autodiff import Tensor, conv2d
    k_count = kernels.shape[0]
    out = None
    for k in range(k_count):
        y = conv2d(Tensor(x), Tensor(kernels[k]),
                   dilation=(1, int(dilations[k]))).data
        part = attn[:, k][:, np.newaxis, np.newaxis, :] * y
        out = part if out is None else out + part
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def median_filter_reference(row: np.ndarray, width: int) -> np.ndarray:
    """Sliding-window median with edge replication, one value at a time."""
    assert width % 2 == 1
    half = width // 2
    padded = np.concatenate([np.repeat(row[:1], half), row,
                             np.repeat(row[-1:], half)])
    return np.array([np.median(padded[i:i + width])
                     for i in range(row.size)], dtype=row.dtype)


def intersection_counts_reference(detections: list[Event],
                                  ground_truth: list[Event], dtc: float,
                                  gtc: float) -> dict[str, tuple[int, int]]:
    """Per-class (tp, fp) by flat scans over the event lists."""
    counts = {}
    labels = sorted({e.label for e in detections} |
                    {e.label for e in ground_truth})
    for label in labels:
        tp = fp = 0
        dets = [d for d in detections if d.label == label]
        gts = [g for g in ground_truth if g.label == label]
        passing = []
        for d in dets:
            inter = sum(max(0.0, min(d.offset, g.offset)
                            - max(d.onset, g.onset))
                        for g in gts if g.filename == d.filename)
            if inter >= dtc * (d.offset - d.onset):
                passing.append(d)
            else:
                fp += 1
        for g in gts:
            cover = sum(max(0.0, min(d.offset, g.offset)
                            - max(d.onset, g.onset))
                        for d in passing if d.filename == g.filename)
            if cover >= gtc * (g.offset - g.onset):
                tp += 1
        counts[label] = (tp, fp)
    return counts


def psds1_reference(per_threshold_counts, n_gt: dict[str, int],
                    duration_hours: float, alpha_st: float = 1.0,
                    e_max: float = 100.0) -> float:
    """Area score from the raw definition, scanning every breakpoint."""
    classes = sorted(c for c, n in n_gt.items() if n > 0)
    if not classes:
        return 0.0
    points = {c: [] for c in classes}
    for counts in per_threshold_counts:
        for c in classes:
            tp, fp = counts.get(c, (0, 0))
            points[c].append((fp / duration_hours, tp / n_gt[c]))

    def tpr_at(c: str, e: float) -> float:
        best = 0.0
        for efpr, tpr in points[c]:
            if efpr <= e and tpr > best:
                best = tpr
        return best

    breaks = sorted({0.0, e_max} | {
        efpr for c in classes for efpr, _ in points[c] if efpr < e_max})
    area = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        tprs = np.array([tpr_at(c, lo) for c in classes])
        eff = tprs.mean() - alpha_st * tprs.std()
        area += max(eff, 0.0) * (hi - lo)
    return area / e_max
