"""Forward pass of the attention captioner and caption generation.

Per decode step: the previous hidden state attends over the L feature
locations to produce a context vector, the LSTM consumes (previous word
embedding, previous hidden, context), and the output layer turns the new
hidden state plus context into a word distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..text import END_ID, NUM_SPECIALS, PAD_ID, START_ID
from .model import ModelWeights


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    ex = np.exp(shifted)
    return ex / np.sum(ex)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


@dataclass
class AttentionState:
    logits: np.ndarray   # (L,)
    weights: np.ndarray  # (L,), sums to 1
    context: np.ndarray  # (D,)


@dataclass
class LstmState:
    hidden: np.ndarray        # (H,)
    memory: np.ndarray        # (H,)
    input_gate: np.ndarray    # (H,)
    forget_gate: np.ndarray   # (H,)
    output_gate: np.ndarray   # (H,)


def validate_feature_map(a: np.ndarray, weights: ModelWeights) -> np.ndarray:
    cfg = weights.config
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (cfg.num_locations, cfg.feature_dim):
        raise ParameterError(
            f"feature map shape {a.shape} does not match model "
            f"({cfg.num_locations}, {cfg.feature_dim})"
        )
    if not np.all(np.isfinite(a)):
        raise ParameterError("feature map contains non-finite values")
    return a


def attend(a: np.ndarray, h_prev: np.ndarray, weights: ModelWeights) -> AttentionState:
    """Score each feature location against the hidden state and mix a context."""
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(h_prev))):
        raise ParameterError("attention inputs must be finite")
    joint = np.concatenate([a, np.broadcast_to(h_prev, (a.shape[0], h_prev.shape[0]))], axis=1)
    hidden = np.tanh(joint @ weights["att_w1"].T + weights["att_b1"])
    logits = hidden @ weights["att_w2"] + weights["att_b2"]
    alpha = softmax(logits)
    return AttentionState(logits=logits, weights=alpha, context=alpha @ a)


def init_state(a: np.ndarray, weights: ModelWeights) -> tuple[np.ndarray, np.ndarray]:
    """Initial LSTM state predicted from the mean annotation vector."""
    mean = a.mean(axis=0)
    h0 = np.tanh(weights["init_h_w2"] @ np.tanh(weights["init_h_w1"] @ mean + weights["init_h_b1"]) + weights["init_h_b2"])
    c0 = np.tanh(weights["init_c_w2"] @ np.tanh(weights["init_c_w1"] @ mean + weights["init_c_b1"]) + weights["init_c_b2"])
    return h0, c0


def lstm_step(
    y_prev: int,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
    context: np.ndarray,
    weights: ModelWeights,
) -> LstmState:
    """One gate update. The embedding lookup is a column read, never a dense product."""
    if not 0 <= y_prev < weights.config.vocab_size:
        raise ParameterError(f"token id {y_prev} out of range")
    x = weights["embedding"][:, y_prev]
    i_t = sigmoid(weights["lstm_Wi"] @ x + weights["lstm_Ui"] @ h_prev + weights["lstm_Zi"] @ context + weights["lstm_bi"])
    f_t = sigmoid(weights["lstm_Wf"] @ x + weights["lstm_Uf"] @ h_prev + weights["lstm_Zf"] @ context + weights["lstm_bf"])
    g_t = np.tanh(weights["lstm_Wc"] @ x + weights["lstm_Uc"] @ h_prev + weights["lstm_Zc"] @ context + weights["lstm_bc"])
    c_t = f_t * c_prev + i_t * g_t
    o_t = sigmoid(weights["lstm_Wo"] @ x + weights["lstm_Uo"] @ h_prev + weights["lstm_Zo"] @ context + weights["lstm_bo"])
    h_t = o_t * np.tanh(c_t)
    return LstmState(hidden=h_t, memory=c_t, input_gate=i_t, forget_gate=f_t, output_gate=o_t)


def word_logits(
    y_prev: int, h: np.ndarray, context: np.ndarray, weights: ModelWeights
) -> np.ndarray:
    x = weights["embedding"][:, y_prev]
    return weights["out_w"] @ (x + weights["out_h"] @ h + weights["out_z"] @ context)


def word_distribution(
    y_prev: int, h: np.ndarray, context: np.ndarray, weights: ModelWeights
) -> np.ndarray:
    """Softmax-normalized next-word distribution over the vocabulary."""
    return softmax(word_logits(y_prev, h, context, weights))


@dataclass
class GenerationResult:
    ids: tuple[int, ...]          # emitted token ids: no <start>/<pad>/<end>, may hold <unk>
    alphas: np.ndarray            # (steps, L) attention weights per decode step
    log_prob: float               # total log-probability of the emitted sequence
    degenerate: bool              # True when no content (non-special) token was produced

    @property
    def content_ids(self) -> tuple[int, ...]:
        return tuple(i for i in self.ids if i >= NUM_SPECIALS)

    @property
    def content_length(self) -> int:
        return len(self.content_ids)


def _masked_log_probs(logits: np.ndarray) -> np.ndarray:
    """Log-probabilities with <start> and <pad> barred from selection."""
    logp = log_softmax(logits)
    logp[START_ID] = -np.inf
    logp[PAD_ID] = -np.inf
    return logp


def generate(
    a: np.ndarray,
    weights: ModelWeights,
    mode: str = "greedy",
    beam_width: int = 3,
    max_len: int | None = None,
) -> GenerationResult:
    """Decode a caption from a feature map.

    Greedy takes the argmax at each step (ties resolve to the lowest index);
    beam search keeps the `beam_width` best partial sequences with ties
    broken lexicographically. Decoding stops at <end> or max_len.
    """
    a = validate_feature_map(a, weights)
    limit = weights.config.max_caption_len if max_len is None else max_len
    if limit < 1:
        raise ParameterError("max_len must be >= 1")
    if mode == "greedy":
        return _generate_greedy(a, weights, limit)
    if mode == "beam":
        if beam_width < 1:
            raise ParameterError("beam_width must be >= 1")
        return _generate_beam(a, weights, beam_width, limit)
    raise ParameterError(f"unknown decode mode {mode!r}")


def _generate_greedy(a: np.ndarray, weights: ModelWeights, limit: int) -> GenerationResult:
    use_prev_hidden = weights.config.output_uses_prev_hidden
    h, c = init_state(a, weights)
    y_prev = START_ID
    ids: list[int] = []
    alphas = []
    total_logp = 0.0
    for _ in range(limit):
        att = attend(a, h, weights)
        state = lstm_step(y_prev, h, c, att.context, weights)
        out_h = h if use_prev_hidden else state.hidden
        step_logp = _masked_log_probs(word_logits(y_prev, out_h, att.context, weights))
        token = int(np.argmax(step_logp))  # argmax resolves ties to the lowest index
        alphas.append(att.weights)
        total_logp += step_logp[token]
        h, c = state.hidden, state.memory
        if token == END_ID:
            break
        ids.append(token)
        y_prev = token
    alphas_arr = np.array(alphas) if alphas else np.zeros((0, a.shape[0]))
    out = tuple(ids)
    return GenerationResult(
        ids=out, alphas=alphas_arr, log_prob=total_logp,
        degenerate=not any(i >= NUM_SPECIALS for i in out),
    )


def _generate_beam(
    a: np.ndarray, weights: ModelWeights, width: int, limit: int
) -> GenerationResult:
    use_prev_hidden = weights.config.output_uses_prev_hidden
    h0, c0 = init_state(a, weights)
    # beam entries: (ids, log_prob, h, c, alphas, finished)
    beams = [((), 0.0, h0, c0, [], False)]
    for _ in range(limit):
        if all(entry[5] for entry in beams):
            break
        candidates = []
        for ids, logp, h, c, alphas, finished in beams:
            if finished:
                candidates.append((ids, logp, h, c, alphas, True))
                continue
            y_prev = ids[-1] if ids else START_ID
            att = attend(a, h, weights)
            state = lstm_step(y_prev, h, c, att.context, weights)
            out_h = h if use_prev_hidden else state.hidden
            logits = word_logits(y_prev, out_h, att.context, weights)
            step_logp = _masked_log_probs(logits)
            order = np.argsort(-step_logp, kind="stable")[: max(width, 1)]
            new_alphas = alphas + [att.weights]
            for token in order:
                token = int(token)
                if step_logp[token] == -np.inf:
                    continue
                if token == END_ID:
                    candidates.append((ids, logp + step_logp[token], state.hidden, state.memory, new_alphas, True))
                else:
                    candidates.append((ids + (token,), logp + step_logp[token], state.hidden, state.memory, new_alphas, False))
        candidates.sort(key=lambda e: (-e[1], e[0]))
        beams = candidates[:width]
    best = min(beams, key=lambda e: (-e[1], e[0]))
    ids, logp, _, _, alphas, _ = best
    alphas_arr = np.array(alphas) if alphas else np.zeros((0, a.shape[0]))
    return GenerationResult(
        ids=ids, alphas=alphas_arr, log_prob=logp,
        degenerate=not any(i >= NUM_SPECIALS for i in ids),
    )
