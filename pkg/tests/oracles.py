"""Independent reference implementations used to verify the production code.

Everything here is written the slow, obvious way (explicit loops, direct
definitions) so that agreement with the vectorized library routines is
meaningful evidence of correctness rather than a tautology.
"""

from __future__ import annotations

import numpy as np


def conv2d_naive(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None,
                 stride=(1, 1), dilation=(1, 1), padding="same") -> np.ndarray:
    """Nested-loop 2-D cross-correlation over [B, C, T, F]."""
    b_n, c_in, t_in, f_in = x.shape
    c_out, c_w, k_t, k_f = w.shape
    assert c_w == c_in
    s_t, s_f = stride
    d_t, d_f = dilation
    if padding == "same":
        tot_t = (k_t - 1) * d_t
        tot_f = (k_f - 1) * d_f
        pads = ((tot_t // 2, tot_t - tot_t // 2),
                (tot_f // 2, tot_f - tot_f // 2))
    elif isinstance(padding, int):
        pads = ((padding, padding), (padding, padding))
    else:
        pads = padding
    xp = np.pad(x, ((0, 0), (0, 0), pads[0], pads[1]))
    t_out = (xp.shape[2] - ((k_t - 1) * d_t + 1)) // s_t + 1
    f_out = (xp.shape[3] - ((k_f - 1) * d_f + 1)) // s_f + 1
    out = np.zeros((b_n, c_out, t_out, f_out), dtype=x.dtype)
    for b in range(b_n):
        for o in range(c_out):
            for t in range(t_out):
                for f in range(f_out):
                    acc = 0.0
                    for c in range(c_in):
                        for i in range(k_t):
                            for j in range(k_f):
                                acc += (w[o, c, i, j] *
                                        xp[b, c, t * s_t + i * d_t,
                                           f * s_f + j * d_f])
                    out[b, o, t, f] = acc
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out


def assembled_kernel_conv(x: np.ndarray, kernels: np.ndarray,
                          dilations, attn: np.ndarray,
                          bias: np.ndarray | None = None) -> np.ndarray:
    """Frequency-dynamic conv by literal per-bin kernel assembly.

    For every output frequency bin f the basis kernels are blended with the
    attention weights at that bin, each basis kernel first being embedded at
    its own dilation into a dense kernel of the widest receptive field, and
    the blended kernel is applied at that bin alone. This is a different
    computational route from "convolve each basis kernel, then blend".
    """
    b_n, c_in, t_in, f_in = x.shape
    k_count, c_out, c_w, k_t, k_f = kernels.shape
    assert c_w == c_in and attn.shape == (b_n, k_count, f_in)
    d_max = max(dilations)
    ext_f = (k_f - 1) * d_max + 1
    center = ext_f // 2
    tot_t = k_t - 1
    pad_t = (tot_t // 2, tot_t - tot_t // 2)
    pad_f = ((ext_f - 1) // 2, (ext_f - 1) - (ext_f - 1) // 2)
    xp = np.pad(x, ((0, 0), (0, 0), pad_t, pad_f))
    dense = np.zeros((k_count, c_out, c_in, k_t, ext_f), dtype=x.dtype)
    for k, d in enumerate(dilations):
        for j in range(k_f):
            dense[k, :, :, :, center + (j - (k_f // 2)) * d] = \
                kernels[k, :, :, :, j]
    out = np.zeros((b_n, c_out, t_in, f_in), dtype=x.dtype)
    for b in range(b_n):
        for f in range(f_in):
            blended = np.zeros((c_out, c_in, k_t, ext_f), dtype=x.dtype)
            for k in range(k_count):
                blended += attn[b, k, f] * dense[k]
            for o in range(c_out):
                for t in range(t_in):
                    acc = 0.0
                    for c in range(c_in):
                        for i in range(k_t):
                            for jj in range(ext_f):
                                acc += blended[o, c, i, jj] * xp[b, c, t + i,
                                                                 f + jj]
                    out[b, o, t, f] = acc
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out


def median_filter_naive(row: np.ndarray, width: int) -> np.ndarray:
    """Sliding-window median with edge replication, one value at a time."""
    assert width % 2 == 1
    half = width // 2
    padded = np.concatenate([np.repeat(row[:1], half), row,
                             np.repeat(row[-1:], half)])
    return np.array([np.median(np.sort(padded[i:i + width]))
                     for i in range(row.size)], dtype=row.dtype)


def rasterize_naive(events, label: str, n_frames: int, hop: float) -> np.ndarray:
    """Frame grid activation by the half-frame overlap rule, frame by frame."""
    row = np.zeros(n_frames, dtype=np.float32)
    for ev_label, onset, offset in events:
        if ev_label != label:
            continue
        for i in range(n_frames):
            lo = i * hop
            hi = (i + 1) * hop
            overlap = min(hi, offset) - max(lo, onset)
            if overlap >= hop / 2.0:
                row[i] = 1.0
    return row


def psds1_naive(per_threshold_counts, n_gt: dict[str, int],
                duration_hours: float, alpha_st: float = 1.0,
                e_max: float = 100.0) -> float:
    """PSDS from the raw definition, scanning operating points per breakpoint.

    `per_threshold_counts` is a list (one entry per threshold) of dicts
    mapping class name to (tp, fp). Classes without ground truth are skipped.
    """
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
