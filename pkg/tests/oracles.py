"""Independent reference implementations used only to derive expected test
values.  Deliberately written with different machinery than the package
(explicit loops, Fractions, scalar arithmetic) so they cannot share bugs
with the code under test."""

from fractions import Fraction
from math import exp, log, tanh


def bleu_oracle(hypotheses, reference_sets, max_order=4):
    """Corpus BLEU from first principles with exact rational counts."""
    match = [0] * (max_order + 1)
    total = [0] * (max_order + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        hyp = list(hyp)
        hyp_len += len(hyp)
        best = None
        for ref in refs:
            d = abs(len(ref) - len(hyp))
            if best is None or d < best[0] or (d == best[0] and len(ref) < best[1]):
                best = (d, len(ref))
        ref_len += best[1]
        for n in range(1, max_order + 1):
            grams = {}
            for i in range(len(hyp) - n + 1):
                g = tuple(hyp[i : i + n])
                grams[g] = grams.get(g, 0) + 1
            for g, c in grams.items():
                total[n] += c
                cap = 0
                for ref in refs:
                    rc = 0
                    for i in range(len(ref) - n + 1):
                        if tuple(ref[i : i + n]) == g:
                            rc += 1
                    cap = max(cap, rc)
                match[n] += min(c, cap)
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else exp(1.0 - ref_len / hyp_len)
    orders = [n for n in range(1, max_order + 1) if total[n] > 0]
    if not orders or any(match[n] == 0 for n in orders):
        return 0.0
    precisions = [Fraction(match[n], total[n]) for n in orders]
    mean = exp(sum(log(p) for p in precisions) / len(orders))
    return 100.0 * bp * mean


def sigmoid(x):
    return 1.0 / (1.0 + exp(-x))


def lstm_step_oracle(wx, wh, b, x, c, h):
    """One LSTM step in plain scalar arithmetic.

    wx: 4m x d nested lists, wh: 4m x m, b: 4m; gate order i, f, g, o.
    Returns (c', h') as lists.
    """
    m = len(c)
    gates = []
    for row in range(4 * m):
        acc = b[row]
        for j, xv in enumerate(x):
            acc += wx[row][j] * xv
        for j, hv in enumerate(h):
            acc += wh[row][j] * hv
        gates.append(acc)
    i = [sigmoid(gates[j]) for j in range(m)]
    f = [sigmoid(gates[m + j]) for j in range(m)]
    g = [tanh(gates[2 * m + j]) for j in range(m)]
    o = [sigmoid(gates[3 * m + j]) for j in range(m)]
    c_new = [f[j] * c[j] + i[j] * g[j] for j in range(m)]
    h_new = [o[j] * tanh(c_new[j]) for j in range(m)]
    return c_new, h_new


def frame_count_oracle(n_samples, window, hop):
    """Count frames by explicitly walking the signal."""
    count = 0
    start = 0
    while start + window <= n_samples:
        count += 1
        start += hop
    return count


def pyramid_length_oracle(length, subsample_layers=2):
    """Length after repeatedly keeping indices 0, 2, 4, ..."""
    idx = list(range(length))
    for _ in range(subsample_layers):
        idx = idx[::2]
    return len(idx)


def text_forward_oracle(values, m, src_ids, dec_in_ids):
    """End-to-end scalar/numpy evaluation of the text model: bidirectional
    encoder, state init, two decoder LSTM layers, additive attention,
    projection and softmax.  ``values`` maps parameter names to arrays.

    Returns the list of per-step output distributions.
    """
    import numpy as np

    def lstm(prefix, x, c, h):
        return lstm_step_oracle(values[prefix + ".wx"].tolist(),
                                values[prefix + ".wh"].tolist(),
                                values[prefix + ".b"].tolist(),
                                list(x), list(c), list(h))

    # encoder: two stacked bidirectional layers, outputs summed
    seq = [values["src_embed"][:, i] for i in src_ids]
    final = None
    for layer in range(2):
        fwd_out = []
        c = [0.0] * m
        h = [0.0] * m
        for x in seq:
            c, h = lstm(f"enc.{layer}.fwd", x, c, h)
            fwd_out.append(h)
        final = list(c) + list(h)
        bwd_out = []
        c = [0.0] * m
        h = [0.0] * m
        for x in reversed(seq):
            c, h = lstm(f"enc.{layer}.bwd", x, c, h)
            bwd_out.append(h)
        bwd_out.reverse()
        seq = [np.array(f) + np.array(b) for f, b in zip(fwd_out, bwd_out)]

    import numpy as np
    s0 = np.tanh(values["dec.init_w"] @ np.array(final))
    states = [([0.0] * m, [0.0] * m), (list(s0[:m]), list(s0[m:]))]

    dists = []
    for prev in dec_in_ids:
        x = values["dec.embed"][:, prev]
        new_states = []
        for layer in range(2):
            c, h = states[layer]
            c, h = lstm(f"dec.{layer}", x, c, h)
            new_states.append((c, h))
            x = np.array(h)
        states = new_states
        top_c, top_h = states[1]
        s_t = np.array(list(top_c) + list(top_h))
        scores = []
        for h_i in seq:
            inner = values["attn.enc_w"] @ h_i + values["attn.state_w"] @ s_t + values["attn.bias"]
            scores.append(float(values["attn.score_v"] @ np.tanh(inner)))
        scores = np.array(scores)
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        context = sum(w * h_i for w, h_i in zip(weights, seq))
        merged = values["dec.merge_w"] @ np.concatenate([top_h, context]) + values["dec.merge_b"]
        logits = values["dec.vocab_w"] @ merged + values["dec.vocab_b"]
        e = np.exp(logits - logits.max())
        dists.append(e / e.sum())
    return dists
