"""LSTM encoder-decoder forward/backward passes in plain numpy.

Layout conventions: sequences are (T, B) int arrays of token ids; hidden
states are (B, H). Gate blocks along the 4H axis are ordered [i, f, g, o].
The decoder's initial state per layer is the encoder's state at each
sequence's last position (sequences are end-padded inside a batch).

Everything here is deterministic; the gradient of every parameter is computed
analytically and is checked against central finite differences in the tests.
"""
from __future__ import annotations

import numpy as np


def init_params(
    vocab_size: int,
    embed_size: int,
    hidden_size: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform input weights, orthogonal recurrent blocks
    (keeps gradients alive across long pad-heavy inputs), forget bias 1."""
    H, E, V = hidden_size, embed_size, vocab_size

    def uniform(rows, cols):
        scale = 1.0 / np.sqrt(rows)
        return rng.uniform(-scale, scale, size=(rows, cols)).astype(dtype)

    def orthogonal_gates():
        blocks = []
        for _ in range(4):
            a = rng.standard_normal((H, H))
            q, r = np.linalg.qr(a)
            q *= np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
            blocks.append(q)
        return np.concatenate(blocks, axis=1).astype(dtype)

    params: dict[str, np.ndarray] = {"emb": uniform(V, E)}
    for name, in_dim in (("enc1", E), ("enc2", H), ("dec1", E), ("dec2", H)):
        params[f"{name}_Wx"] = uniform(in_dim, 4 * H)
        params[f"{name}_Wh"] = orthogonal_gates()
        b = np.zeros(4 * H, dtype=dtype)
        b[H : 2 * H] = 1.0
        params[f"{name}_b"] = b
    params["out_W"] = uniform(H, V)
    params["out_b"] = np.zeros(V, dtype=dtype)
    return params


PARAM_ORDER = (
    "emb",
    "enc1_Wx", "enc1_Wh", "enc1_b",
    "enc2_Wx", "enc2_Wh", "enc2_b",
    "dec1_Wx", "dec1_Wh", "dec1_b",
    "dec2_Wx", "dec2_Wh", "dec2_b",
    "out_W", "out_b",
)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(X, h0, c0, Wx, Wh, b):
    """Run one LSTM layer over X (T, B, D). Returns (H_all, C_all, cache)."""
    T, B, _ = X.shape
    Hn = h0.shape[1]
    Zx = X.reshape(T * B, -1) @ Wx
    Zx = Zx.reshape(T, B, 4 * Hn) + b
    I = np.empty((T, B, Hn), dtype=X.dtype)
    F = np.empty_like(I)
    G = np.empty_like(I)
    O = np.empty_like(I)
    C = np.empty_like(I)
    TC = np.empty_like(I)
    H_all = np.empty_like(I)
    h, c = h0, c0
    for t in range(T):
        z = Zx[t] + h @ Wh
        i = _sigmoid(z[:, :Hn])
        f = _sigmoid(z[:, Hn : 2 * Hn])
        g = np.tanh(z[:, 2 * Hn : 3 * Hn])
        o = _sigmoid(z[:, 3 * Hn :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        I[t], F[t], G[t], O[t], C[t], TC[t], H_all[t] = i, f, g, o, c, tc, h
    cache = (X, h0, c0, Wx, Wh, I, F, G, O, C, TC, H_all)
    return H_all, C, cache


def lstm_backward(cache, dH, dC_inj=None):
    """Backprop one layer. dH is the gradient on every h_t output; dC_inj,
    when given, adds gradient directly on c_t (used for the state handoff to
    the decoder at gathered positions). Returns (dX, dWx, dWh, db, dh0, dc0).
    """
    X, h0, c0, Wx, Wh, I, F, G, O, C, TC, H_all = cache
    T, B, Hn = I.shape
    dA = np.empty((T, B, 4 * Hn), dtype=X.dtype)
    dh = np.zeros((B, Hn), dtype=X.dtype)
    dc = np.zeros((B, Hn), dtype=X.dtype)
    dWh = np.zeros_like(Wh)
    for t in range(T - 1, -1, -1):
        dh_total = dH[t] + dh
        dc_total = dc + dh_total * O[t] * (1.0 - TC[t] ** 2)
        if dC_inj is not None:
            dc_total = dc_total + dC_inj[t]
        c_prev = C[t - 1] if t > 0 else c0
        da_i = dc_total * G[t] * I[t] * (1.0 - I[t])
        da_f = dc_total * c_prev * F[t] * (1.0 - F[t])
        da_g = dc_total * I[t] * (1.0 - G[t] ** 2)
        da_o = dh_total * TC[t] * O[t] * (1.0 - O[t])
        da = np.concatenate([da_i, da_f, da_g, da_o], axis=1)
        dA[t] = da
        h_prev = H_all[t - 1] if t > 0 else h0
        dWh += h_prev.T @ da
        dh = da @ Wh.T
        dc = dc_total * F[t]
    dA_flat = dA.reshape(T * B, 4 * Hn)
    dX = (dA_flat @ Wx.T).reshape(X.shape)
    dWx = X.reshape(T * B, -1).T @ dA_flat
    db = dA_flat.sum(axis=0)
    return dX, dWx, dWh, db, dh, dc


def encoder_forward(params, enc_ids, enc_lens):
    """Two stacked layers; returns per-layer (h, c) gathered at each
    sequence's final position, plus caches for backward."""
    T, B = enc_ids.shape
    dtype = params["emb"].dtype
    Hn = params["enc1_Wh"].shape[0]
    X = params["emb"][enc_ids]  # (T, B, E)
    zeros = np.zeros((B, Hn), dtype=dtype)
    H1, C1, cache1 = lstm_forward(X, zeros, zeros, params["enc1_Wx"], params["enc1_Wh"], params["enc1_b"])
    H2, C2, cache2 = lstm_forward(H1, zeros, zeros, params["enc2_Wx"], params["enc2_Wh"], params["enc2_b"])
    last = enc_lens - 1
    cols = np.arange(B)
    finals = (
        (H1[last, cols], C1[last, cols]),
        (H2[last, cols], C2[last, cols]),
    )
    return finals, (cache1, cache2, enc_ids, enc_lens)


def encoder_backward(params, enc_cache, d_finals):
    """d_finals: per-layer (dh_final, dc_final) from the decoder's initial
    state. Returns parameter gradients including the embedding rows."""
    cache1, cache2, enc_ids, enc_lens = enc_cache
    T, B = enc_ids.shape
    Hn = d_finals[0][0].shape[1]
    dtype = d_finals[0][0].dtype
    last = enc_lens - 1
    cols = np.arange(B)

    dH2 = np.zeros((T, B, Hn), dtype=dtype)
    dC2 = np.zeros((T, B, Hn), dtype=dtype)
    dH2[last, cols] = d_finals[1][0]
    dC2[last, cols] = d_finals[1][1]
    dX2, dWx2, dWh2, db2, _, _ = lstm_backward(cache2, dH2, dC2)

    dH1 = dX2
    dH1[last, cols] += d_finals[0][0]
    dC1 = np.zeros((T, B, Hn), dtype=dtype)
    dC1[last, cols] = d_finals[0][1]
    dX1, dWx1, dWh1, db1, _, _ = lstm_backward(cache1, dH1, dC1)

    grads = {
        "enc1_Wx": dWx1, "enc1_Wh": dWh1, "enc1_b": db1,
        "enc2_Wx": dWx2, "enc2_Wh": dWh2, "enc2_b": db2,
    }
    demb = np.zeros_like(params["emb"])
    np.add.at(demb, enc_ids.reshape(-1), dX1.reshape(T * B, -1))
    return grads, demb


def loss_and_grads(params, batch):
    """Teacher-forced cross-entropy over the batch and gradients for every
    parameter. The loss is averaged over non-pad target positions.

    batch keys: enc_ids (T_e,B), enc_lens (B), dec_in (T_d,B),
    dec_target (T_d,B), mask (T_d,B) float 0/1.
    """
    enc_ids, enc_lens = batch["enc_ids"], batch["enc_lens"]
    dec_in, dec_target, mask = batch["dec_in"], batch["dec_target"], batch["mask"]
    T_d, B = dec_in.shape
    V = params["emb"].shape[0]

    finals, enc_cache = encoder_forward(params, enc_ids, enc_lens)
    Xd = params["emb"][dec_in]
    D1, _, dcache1 = lstm_forward(Xd, finals[0][0], finals[0][1], params["dec1_Wx"], params["dec1_Wh"], params["dec1_b"])
    D2, _, dcache2 = lstm_forward(D1, finals[1][0], finals[1][1], params["dec2_Wx"], params["dec2_Wh"], params["dec2_b"])

    flat = D2.reshape(T_d * B, -1)
    logits = flat @ params["out_W"] + params["out_b"]
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    targets = dec_target.reshape(-1)
    mask_flat = mask.reshape(-1)
    n_valid = mask_flat.sum()
    logp = np.log(probs[np.arange(T_d * B), targets] + 1e-12)
    loss = -(logp * mask_flat).sum() / n_valid

    dlogits = probs
    dlogits[np.arange(T_d * B), targets] -= 1.0
    dlogits *= (mask_flat / n_valid)[:, None]

    grads = {
        "out_W": flat.T @ dlogits,
        "out_b": dlogits.sum(axis=0),
    }
    dD2 = (dlogits @ params["out_W"].T).reshape(T_d, B, -1)
    dD1, dWx, dWh, db, dh0_2, dc0_2 = lstm_backward(dcache2, dD2)
    grads.update({"dec2_Wx": dWx, "dec2_Wh": dWh, "dec2_b": db})
    dXd, dWx, dWh, db, dh0_1, dc0_1 = lstm_backward(dcache1, dD1)
    grads.update({"dec1_Wx": dWx, "dec1_Wh": dWh, "dec1_b": db})

    enc_grads, demb = encoder_backward(
        params, enc_cache, ((dh0_1, dc0_1), (dh0_2, dc0_2))
    )
    grads.update(enc_grads)
    np.add.at(demb, dec_in.reshape(-1), dXd.reshape(T_d * B, -1))
    grads["emb"] = demb
    return float(loss), grads


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def sgd_step(params, grads, lr: float) -> None:
    for name, g in grads.items():
        params[name] -= (lr * g).astype(params[name].dtype)


class AdamState:
    """Per-parameter first/second moment accumulators (Adam, bias-corrected)."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(
        self,
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.t += 1
        bias1 = 1.0 - beta1 ** self.t
        bias2 = 1.0 - beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            update = (lr / bias1) * m / (np.sqrt(v / bias2) + eps)
            params[name] -= update.astype(params[name].dtype)
