"""Forward and backward passes of the MoE decoder.

Everything is float64 numpy. The backward pass is hand-derived and checked
coordinate-wise against central finite differences in the test suite, so any
change here must keep that contract.

Token input = patch projection of masked values + calendar projection +
frequency embedding (+ optional learned positions). Each block applies
pre-norm causal self-attention and a pre-norm mixture-of-experts feed-forward
with top-k softmax gating, renormalized over the selected experts. A final
layer norm feeds per-scale linear heads emitting raw (nu, mu, sigma) triples
for the next patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Frequency
from ..errors import NonFiniteActivationError
from .config import ModelConfig
from .losses import StudentTParams, chain_to_raw, constrain, nll_grads, nll_loss
from .params import Parameters, param_shapes
from .tokenizer import PatchToken, stack_tokens

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


@dataclass
class TrainingExample:
    """One teacher-forcing sequence: token i predicts the values of token i+1."""

    tokens: list[PatchToken]
    freq: Frequency


def gelu(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3 * _GELU_A * x ** 2)


def _layer_norm(x, g, b):
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


def _split_heads(x, n_heads):
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _check(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivationError(where)


def _forward_batch(params: Parameters, batch: dict) -> dict:
    cfg = params.config
    p_len = batch["patch_len"]
    values, mask, cal = batch["values"], batch["mask"], batch["cal"]
    freq_idx = batch["freq_idx"]
    bsz, n_tok, _ = values.shape

    masked_values = values * mask
    x = (masked_values @ params[f"patch_w_{p_len}"] + params[f"patch_b_{p_len}"]
         + cal @ params["cal_w"] + params["cal_b"]
         + params["freq_emb"][freq_idx][:, None, :])
    if cfg.use_positional_embedding:
        x = x + params["pos_emb"][None, :n_tok, :]
    _check(x, "embedding")

    causal = np.tril(np.ones((n_tok, n_tok), dtype=bool))
    scale = 1.0 / np.sqrt(cfg.head_dim)
    h = x
    layers = []
    for i in range(cfg.n_layers):
        a, ln1_cache = _layer_norm(h, params[f"l{i}.ln1_g"], params[f"l{i}.ln1_b"])
        q = _split_heads(a @ params[f"l{i}.attn_wq"], cfg.n_heads)
        k = _split_heads(a @ params[f"l{i}.attn_wk"], cfg.n_heads)
        v = _split_heads(a @ params[f"l{i}.attn_wv"], cfg.n_heads)
        scores = np.einsum("bhid,bhjd->bhij", q, k) * scale
        scores = np.where(causal[None, None], scores, -np.inf)
        smax = scores.max(axis=-1, keepdims=True)
        expd = np.exp(scores - smax)
        p_attn = expd / expd.sum(axis=-1, keepdims=True)
        o = _merge_heads(np.einsum("bhij,bhjd->bhid", p_attn, v))
        attn_out = o @ params[f"l{i}.attn_wo"]
        h_mid = h + attn_out
        _check(h_mid, f"layer {i} attention")

        m, ln2_cache = _layer_norm(h_mid, params[f"l{i}.ln2_g"], params[f"l{i}.ln2_b"])
        logits = m @ params[f"l{i}.gate_w"]
        lmax = logits.max(axis=-1, keepdims=True)
        le = np.exp(logits - lmax)
        gprobs = le / le.sum(axis=-1, keepdims=True)
        # deterministic top-k: stable sort on descending prob, ties to the
        # lower expert index
        order = np.argsort(-gprobs, axis=-1, kind="stable")
        sel = order[..., : cfg.top_k_experts]
        sel_mask = np.zeros_like(gprobs, dtype=bool)
        np.put_along_axis(sel_mask, sel, True, axis=-1)
        sel_sum = np.where(sel_mask, gprobs, 0.0).sum(axis=-1, keepdims=True)
        routed = np.where(sel_mask, gprobs, 0.0) / sel_sum
        experts = []
        moe_out = np.zeros_like(m)
        for e in range(cfg.n_experts):
            z1 = m @ params[f"l{i}.e{e}.w1"] + params[f"l{i}.e{e}.b1"]
            u = gelu(z1)
            f_e = u @ params[f"l{i}.e{e}.w2"] + params[f"l{i}.e{e}.b2"]
            moe_out += routed[..., e:e + 1] * f_e
            experts.append({"z1": z1, "u": u, "f": f_e})
        h_out = h_mid + moe_out
        _check(h_out, f"layer {i} moe")

        layers.append({
            "h_in": h, "a": a, "ln1": ln1_cache, "q": q, "k": k, "v": v,
            "p_attn": p_attn, "o": o, "h_mid": h_mid, "m": m, "ln2": ln2_cache,
            "gprobs": gprobs, "sel_mask": sel_mask, "sel_sum": sel_sum,
            "routed": routed, "experts": experts,
        })
        h = h_out

    hf, lnf_cache = _layer_norm(h, params["lnf_g"], params["lnf_b"])
    raw = hf @ params[f"head_w_{p_len}"] + params[f"head_b_{p_len}"]
    _check(raw, "output head")
    raw_nu, raw_mu, raw_sigma = raw[..., :p_len], raw[..., p_len:2 * p_len], raw[..., 2 * p_len:]
    pred = constrain(raw_nu, raw_mu, raw_sigma)
    return {
        "batch": batch, "x": x, "masked_values": masked_values, "layers": layers,
        "h_final": h, "hf": hf, "lnf": lnf_cache, "raw": raw, "pred": pred,
        "n_tok": n_tok, "bsz": bsz, "p_len": p_len, "scale": scale, "causal": causal,
    }


def _zero_grads(params: Parameters) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_shapes(params.config).items()}


def _backward_batch(params: Parameters, cache: dict, draw: np.ndarray,
                    grads: dict[str, np.ndarray], dgate_extra: np.ndarray | None = None):
    """Accumulate gradients into ``grads`` given d(loss)/d(raw head outputs).

    ``dgate_extra`` optionally carries d(loss)/d(gate probabilities) per layer
    (shape (n_layers, B, N, E)) for the auxiliary balance loss.
    """
    cfg = params.config
    p_len = cache["p_len"]
    batch = cache["batch"]

    dhf = draw @ params[f"head_w_{p_len}"].T
    grads[f"head_w_{p_len}"] += np.einsum("bnd,bnk->dk", cache["hf"], draw)
    grads[f"head_b_{p_len}"] += draw.sum(axis=(0, 1))
    dh, dg, db = _layer_norm_backward(dhf, params["lnf_g"], cache["lnf"])
    grads["lnf_g"] += dg
    grads["lnf_b"] += db

    for i in reversed(range(cfg.n_layers)):
        lc = cache["layers"][i]
        m, routed, sel_mask = lc["m"], lc["routed"], lc["sel_mask"]
        dmoe = dh  # gradient of the residual branch output
        dm = np.zeros_like(m)
        d_routed = np.zeros_like(routed)
        for e in range(cfg.n_experts):
            ec = lc["experts"][e]
            d_routed[..., e] = (dmoe * ec["f"]).sum(axis=-1)
            df = routed[..., e:e + 1] * dmoe
            grads[f"l{i}.e{e}.w2"] += np.einsum("bnf,bnd->fd", ec["u"], df)
            grads[f"l{i}.e{e}.b2"] += df.sum(axis=(0, 1))
            du = df @ params[f"l{i}.e{e}.w2"].T
            dz1 = du * gelu_grad(ec["z1"])
            grads[f"l{i}.e{e}.w1"] += np.einsum("bnd,bnf->df", m, dz1)
            grads[f"l{i}.e{e}.b1"] += dz1.sum(axis=(0, 1))
            dm += dz1 @ params[f"l{i}.e{e}.w1"].T
        # renormalized top-k gate: routed_e = g_e / S over selected experts
        d_routed = np.where(sel_mask, d_routed, 0.0)
        inner = (d_routed * routed).sum(axis=-1, keepdims=True)
        dgprobs = np.where(sel_mask, (d_routed - inner) / lc["sel_sum"], 0.0)
        if dgate_extra is not None:
            dgprobs = dgprobs + dgate_extra[i]
        gp = lc["gprobs"]
        dlogits = gp * (dgprobs - (dgprobs * gp).sum(axis=-1, keepdims=True))
        grads[f"l{i}.gate_w"] += np.einsum("bnd,bne->de", m, dlogits)
        dm += dlogits @ params[f"l{i}.gate_w"].T
        dh_mid, dg2, db2 = _layer_norm_backward(dm, params[f"l{i}.ln2_g"], lc["ln2"])
        grads[f"l{i}.ln2_g"] += dg2
        grads[f"l{i}.ln2_b"] += db2
        dh_mid = dh_mid + dh  # residual connection

        dattn = dh_mid
        grads[f"l{i}.attn_wo"] += np.einsum("bnd,bne->de", lc["o"], dattn)
        do = _split_heads(dattn @ params[f"l{i}.attn_wo"].T, cfg.n_heads)
        p_attn, q, k, v = lc["p_attn"], lc["q"], lc["k"], lc["v"]
        dp = np.einsum("bhid,bhjd->bhij", do, v)
        dv = np.einsum("bhij,bhid->bhjd", p_attn, do)
        dscores = p_attn * (dp - (dp * p_attn).sum(axis=-1, keepdims=True))
        dq = np.einsum("bhij,bhjd->bhid", dscores, k) * cache["scale"]
        dk = np.einsum("bhij,bhid->bhjd", dscores, q) * cache["scale"]
        dq_f, dk_f, dv_f = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        a = lc["a"]
        grads[f"l{i}.attn_wq"] += np.einsum("bnd,bne->de", a, dq_f)
        grads[f"l{i}.attn_wk"] += np.einsum("bnd,bne->de", a, dk_f)
        grads[f"l{i}.attn_wv"] += np.einsum("bnd,bne->de", a, dv_f)
        da = (dq_f @ params[f"l{i}.attn_wq"].T + dk_f @ params[f"l{i}.attn_wk"].T
              + dv_f @ params[f"l{i}.attn_wv"].T)
        dh_in, dg1, db1 = _layer_norm_backward(da, params[f"l{i}.ln1_g"], lc["ln1"])
        grads[f"l{i}.ln1_g"] += dg1
        grads[f"l{i}.ln1_b"] += db1
        dh = dh_in + dh_mid  # residual connection

    dx = dh
    grads[f"patch_w_{p_len}"] += np.einsum("bnp,bnd->pd", cache["masked_values"], dx)
    grads[f"patch_b_{p_len}"] += dx.sum(axis=(0, 1))
    grads["cal_w"] += np.einsum("bnf,bnd->fd", batch["cal"], dx)
    grads["cal_b"] += dx.sum(axis=(0, 1))
    np.add.at(grads["freq_emb"], batch["freq_idx"], dx.sum(axis=1))
    if cfg.use_positional_embedding:
        grads["pos_emb"][: cache["n_tok"]] += dx.sum(axis=0)


def forward(params: Parameters, tokens: list[PatchToken], freq: Frequency,
            ) -> tuple[StudentTParams, np.ndarray]:
    """Single-sequence forward: per-token next-patch Student-T parameters and
    the final hidden states (token count x d_model)."""
    batch = stack_tokens([tokens], [freq.index])
    cache = _forward_batch(params, batch)
    pred = cache["pred"]
    return (StudentTParams(nu=pred.nu[0], mu=pred.mu[0], sigma=pred.sigma[0]),
            cache["hf"][0])


def _teacher_forcing_loss(cache: dict, with_grad: bool):
    """Next-patch NLL within a batch: predictions of tokens 0..N-2 against the
    values of tokens 1..N-1, masked by their padding."""
    batch = cache["batch"]
    pred = cache["pred"]
    p_len = cache["p_len"]
    targets = batch["values"][:, 1:, :]
    tmask = batch["mask"][:, 1:, :]
    sub = StudentTParams(nu=pred.nu[:, :-1], mu=pred.mu[:, :-1], sigma=pred.sigma[:, :-1])
    loss = nll_loss(sub, targets, tmask)
    count = int(tmask.sum())
    if not with_grad:
        return loss, count, None
    d_nu, d_mu, d_sigma = nll_grads(sub, targets, tmask)
    raw = cache["raw"]
    raw_nu = raw[:, :-1, :p_len]
    raw_sigma = raw[:, :-1, 2 * p_len:]
    d_raw_nu, d_raw_mu, d_raw_sigma = chain_to_raw(sub, d_nu, d_mu, d_sigma, raw_nu, raw_sigma)
    draw = np.zeros_like(raw)
    draw[:, :-1, :p_len] = d_raw_nu
    draw[:, :-1, p_len:2 * p_len] = d_raw_mu
    draw[:, :-1, 2 * p_len:] = d_raw_sigma
    return loss, count, draw


def _aux_balance(cache: dict, coef: float, with_grad: bool):
    """Load-balance penalty: n_experts * sum_e frac_e * mean_prob_e per layer.

    frac_e (the fraction of tokens routed to expert e) is piecewise constant,
    so gradients flow only through the mean gate probabilities.
    """
    layers = cache["layers"]
    n_experts = layers[0]["gprobs"].shape[-1]
    total = 0.0
    dgate = np.zeros((len(layers),) + layers[0]["gprobs"].shape) if with_grad else None
    for i, lc in enumerate(layers):
        gp = lc["gprobs"]
        n_tokens = gp.shape[0] * gp.shape[1]
        frac = lc["sel_mask"].sum(axis=(0, 1)) / (n_tokens * 1.0)
        mean_prob = gp.mean(axis=(0, 1))
        total += coef * n_experts * float(frac @ mean_prob)
        if with_grad:
            dgate[i] += coef * n_experts * frac[None, None, :] / n_tokens
    return total, dgate


def batch_loss(params: Parameters, examples: list[TrainingExample]) -> float:
    """Teacher-forced mean NLL (plus any auxiliary penalty) over the examples."""
    loss, _ = _loss_impl(params, examples, with_grad=False)
    return loss


def loss_and_grad(params: Parameters, examples: list[TrainingExample],
                  ) -> tuple[float, dict[str, np.ndarray]]:
    return _loss_impl(params, examples, with_grad=True)


def grad(params: Parameters, examples: list[TrainingExample]) -> dict[str, np.ndarray]:
    """Gradient arrays of the batch loss for every parameter array."""
    _, grads = loss_and_grad(params, examples)
    return grads


def _loss_impl(params: Parameters, examples: list[TrainingExample], with_grad: bool):
    """Batch loss = NLL averaged over all unmasked target positions across the
    whole batch, plus the example-weighted mean auxiliary penalty. Examples
    with different patch scales run as separate sub-batches."""
    if not examples:
        raise ValueError("empty batch")
    cfg = params.config
    by_scale: dict[int, list[TrainingExample]] = {}
    for ex in examples:
        by_scale.setdefault(ex.tokens[0].scale, []).append(ex)
    # two passes: counts first, so gradient contributions get exact weights
    prepared = []
    total_count = 0
    for p_len, group in sorted(by_scale.items()):
        batch = stack_tokens([ex.tokens for ex in group], [ex.freq.index for ex in group])
        cache = _forward_batch(params, batch)
        loss, count, draw = _teacher_forcing_loss(cache, with_grad)
        prepared.append((group, cache, loss, count, draw))
        total_count += count
    total_count = max(total_count, 1)
    grads = _zero_grads(params) if with_grad else None
    mean_loss = 0.0
    for group, cache, loss, count, draw in prepared:
        nll_weight = count / total_count
        mean_loss += loss * nll_weight
        dgate = None
        aux_weight = len(group) / len(examples)
        if cfg.aux_balance_coef > 0:
            aux, dgate = _aux_balance(cache, cfg.aux_balance_coef, with_grad)
            mean_loss += aux * aux_weight
        if with_grad:
            if dgate is not None:
                dgate = dgate * aux_weight
            _backward_batch(params, cache, draw * nll_weight, grads, dgate_extra=dgate)
    if not with_grad:
        return mean_loss, None
    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteActivationError(f"gradient of {name}")
    return mean_loss, grads
