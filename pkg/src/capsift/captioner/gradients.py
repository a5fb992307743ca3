"""Teacher-forced loss and exact reverse-mode gradients.

The loss is the mean over predicted tokens of -log p(token); every sequence
predicts its content tokens followed by <end>. Backpropagation runs through
the output layer, the LSTM, the attention net and the init nets; feature
maps are inputs (the encoder is frozen) so no gradient flows into them.

Dropout is applied to the hidden state entering the output layer only
(inverted scaling, seed-deterministic); the returned gradients are exact for
the sampled masks.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from ..text import END_ID, START_ID
from .model import GATES, ModelWeights
from .network import sigmoid, validate_feature_map


def _frame(content_ids: tuple[int, ...]) -> tuple[list[int], list[int]]:
    y_in = [START_ID, *content_ids]
    y_out = [*content_ids, END_ID]
    return y_in, y_out


def loss_and_gradients(
    batch,
    weights: ModelWeights,
    dropout_rate: float = 0.0,
    seed: int = 0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-token cross-entropy and its gradient for every tensor.

    batch: list of (feature_map (L, D), content token ids). Returns
    (loss, grads) with grads keyed exactly like the weight tensors.
    """
    if not batch:
        raise ParameterError("batch must be non-empty")
    if not 0.0 <= dropout_rate < 1.0:
        raise ParameterError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    cfg = weights.config
    total_tokens = 0
    prepared = []
    for a, content_ids in batch:
        content_ids = tuple(int(i) for i in content_ids)
        if len(content_ids) > cfg.max_caption_len:
            raise ParameterError(
                f"caption length {len(content_ids)} exceeds maximum {cfg.max_caption_len}"
            )
        for i in content_ids:
            if not 0 <= i < cfg.vocab_size:
                raise ParameterError(f"token id {i} out of range")
        prepared.append((validate_feature_map(a, weights), content_ids))
        total_tokens += len(content_ids) + 1

    rng = np.random.default_rng(seed)
    scale = 1.0 / total_tokens
    grads = weights.zero_grads()
    loss = 0.0
    for a, content_ids in prepared:
        loss += _sample_backward(a, content_ids, weights, grads, dropout_rate, rng, scale)
    return loss * scale, grads


def _sample_backward(a, content_ids, weights, grads, dropout_rate, rng, scale):
    """Forward + backward for one sequence; accumulates into grads, returns
    the sequence's summed negative log-likelihood."""
    w = weights.tensors
    cfg = weights.config
    use_prev_hidden = cfg.output_uses_prev_hidden
    y_in, y_out = _frame(content_ids)
    steps = len(y_out)
    hidden_dim = cfg.hidden_dim

    mean_a = a.mean(axis=0)

    # --- init nets forward ---
    z1_h = w["init_h_w1"] @ mean_a + w["init_h_b1"]
    t1_h = np.tanh(z1_h)
    h0 = np.tanh(w["init_h_w2"] @ t1_h + w["init_h_b2"])
    z1_c = w["init_c_w1"] @ mean_a + w["init_c_b1"]
    t1_c = np.tanh(z1_c)
    c0 = np.tanh(w["init_c_w2"] @ t1_c + w["init_c_b2"])

    # --- per-step forward, caching everything the backward pass needs ---
    cache = []
    nll = 0.0
    h_prev, c_prev = h0, c0
    for t in range(steps):
        z1 = a @ w["att_w1"][:, : cfg.feature_dim].T + h_prev @ w["att_w1"][:, cfg.feature_dim :].T + w["att_b1"]
        t1 = np.tanh(z1)
        e = t1 @ w["att_w2"] + w["att_b2"]
        e_shift = e - e.max()
        exp_e = np.exp(e_shift)
        alpha = exp_e / exp_e.sum()
        z_ctx = alpha @ a

        x = w["embedding"][:, y_in[t]]
        pre = {}
        for g in GATES:
            pre[g] = w[f"lstm_W{g}"] @ x + w[f"lstm_U{g}"] @ h_prev + w[f"lstm_Z{g}"] @ z_ctx + w[f"lstm_b{g}"]
        i_t = sigmoid(pre["i"])
        f_t = sigmoid(pre["f"])
        o_t = sigmoid(pre["o"])
        g_t = np.tanh(pre["c"])
        c_t = f_t * c_prev + i_t * g_t
        tc_t = np.tanh(c_t)
        h_t = o_t * tc_t

        out_h_src = h_prev if use_prev_hidden else h_t
        if dropout_rate > 0.0:
            mask = (rng.random(hidden_dim) >= dropout_rate) / (1.0 - dropout_rate)
        else:
            mask = None
        h_drop = out_h_src * mask if mask is not None else out_h_src

        s = x + w["out_h"] @ h_drop + w["out_z"] @ z_ctx
        logits = w["out_w"] @ s
        shifted = logits - logits.max()
        log_norm = np.log(np.sum(np.exp(shifted)))
        log_p = shifted - log_norm
        nll -= log_p[y_out[t]]

        cache.append(
            dict(
                t1=t1, alpha=alpha, z_ctx=z_ctx, x=x,
                i=i_t, f=f_t, o=o_t, g=g_t,
                c=c_t, tc=tc_t, h=h_t, h_prev=h_prev, c_prev=c_prev,
                mask=mask, h_drop=h_drop, s=s, p=np.exp(log_p),
            )
        )
        h_prev, c_prev = h_t, c_t

    # --- backward through time ---
    dh_next = np.zeros(hidden_dim)
    dc_next = np.zeros(hidden_dim)
    d_feat = cfg.feature_dim
    for t in range(steps - 1, -1, -1):
        cc = cache[t]
        dlogits = cc["p"].copy()
        dlogits[y_out[t]] -= 1.0
        dlogits *= scale

        grads["out_w"] += np.outer(dlogits, cc["s"])
        ds = w["out_w"].T @ dlogits
        grads["embedding"][:, y_in[t]] += ds
        grads["out_h"] += np.outer(ds, cc["h_drop"])
        dh_drop = w["out_h"].T @ ds
        grads["out_z"] += np.outer(ds, cc["z_ctx"])
        dz_ctx = w["out_z"].T @ ds

        d_out_src = dh_drop * cc["mask"] if cc["mask"] is not None else dh_drop

        dh_prev_extra = np.zeros(hidden_dim)
        if use_prev_hidden:
            dh_t = dh_next.copy()
            dh_prev_extra += d_out_src
        else:
            dh_t = d_out_src + dh_next

        do = dh_t * cc["tc"]
        dc_t = dh_t * cc["o"] * (1.0 - cc["tc"] ** 2) + dc_next
        df = dc_t * cc["c_prev"]
        dc_prev = dc_t * cc["f"]
        di = dc_t * cc["g"]
        dg = dc_t * cc["i"]

        dpre = {
            "i": di * cc["i"] * (1.0 - cc["i"]),
            "f": df * cc["f"] * (1.0 - cc["f"]),
            "o": do * cc["o"] * (1.0 - cc["o"]),
            "c": dg * (1.0 - cc["g"] ** 2),
        }
        dx = np.zeros_like(cc["x"])
        dh_prev = dh_prev_extra
        for g in GATES:
            grads[f"lstm_W{g}"] += np.outer(dpre[g], cc["x"])
            grads[f"lstm_U{g}"] += np.outer(dpre[g], cc["h_prev"])
            grads[f"lstm_Z{g}"] += np.outer(dpre[g], cc["z_ctx"])
            grads[f"lstm_b{g}"] += dpre[g]
            dx += w[f"lstm_W{g}"].T @ dpre[g]
            dh_prev = dh_prev + w[f"lstm_U{g}"].T @ dpre[g]
            dz_ctx = dz_ctx + w[f"lstm_Z{g}"].T @ dpre[g]
        grads["embedding"][:, y_in[t]] += dx

        # attention backward
        alpha, t1 = cc["alpha"], cc["t1"]
        dalpha = a @ dz_ctx
        de = alpha * (dalpha - alpha @ dalpha)
        grads["att_w2"] += t1.T @ de
        grads["att_b2"] += de.sum()
        dz1 = np.outer(de, w["att_w2"]) * (1.0 - t1**2)
        dz1_sum = dz1.sum(axis=0)
        grads["att_w1"][:, :d_feat] += dz1.T @ a
        grads["att_w1"][:, d_feat:] += np.outer(dz1_sum, cc["h_prev"])
        grads["att_b1"] += dz1_sum
        dh_prev = dh_prev + dz1_sum @ w["att_w1"][:, d_feat:]

        dh_next = dh_prev
        dc_next = dc_prev

    # --- init nets backward ---
    dz2_h = dh_next * (1.0 - h0**2)
    grads["init_h_w2"] += np.outer(dz2_h, t1_h)
    grads["init_h_b2"] += dz2_h
    dz1_h = (w["init_h_w2"].T @ dz2_h) * (1.0 - t1_h**2)
    grads["init_h_w1"] += np.outer(dz1_h, mean_a)
    grads["init_h_b1"] += dz1_h

    dz2_c = dc_next * (1.0 - c0**2)
    grads["init_c_w2"] += np.outer(dz2_c, t1_c)
    grads["init_c_b2"] += dz2_c
    dz1_c = (w["init_c_w2"].T @ dz2_c) * (1.0 - t1_c**2)
    grads["init_c_w1"] += np.outer(dz1_c, mean_a)
    grads["init_c_b1"] += dz1_c

    return nll
