"""Unsupervised training of the graph network on the negative sum rate.

The whole pipeline (encode, message passing, readout, range projection,
power normalization, rate) is differentiated by hand in reverse mode.
Complex tensors carry gradients in the convention
G = dL/dRe(X) + 1j*dL/dIm(X), so Adam can treat every complex parameter as
an independent real pair through a flat float64 view, and a central finite
difference on any single real coordinate reproduces the matching entry.

The batched forward reuses the same einsum kernels as the public per-sample
ops, so the negative loss of a batch agrees with the mean of the public
sum_rate to float precision.
"""

import time
import numpy as np
from dataclasses import dataclass, field

from . import dataio
from .gnn import (GnnParams, init_params, params_from_tensors, zeros_like_params,
                  _encode_fwd, _edge_layer_fwd, _vertex_layer_fwd, _readout_fwd,
                  _lin, _pair_outer, _mix_users, _mix_users_h)
from .surface import canonical_surface, build_phase_pattern, noise_variance

DEFAULT_DIMS = (64, 128, 512, 512, 128, 64)


class GradientError(RuntimeError):
    """Raised when a backward pass produces a non-finite tensor."""


@dataclass
class TrainConfig:
    dataset_path: str
    layer_dims: tuple = DEFAULT_DIMS
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    snr_db: float = None  # overrides the dataset header when set


@dataclass
class OptimizerState:
    """Adam moments over the real views of every parameter tensor."""

    step: int
    m: list
    v: list


def _real_view(arr):
    if np.iscomplexobj(arr):
        return np.ascontiguousarray(arr).view(np.float64)
    return arr


def init_optimizer(params):
    m = [np.zeros_like(_real_view(t)) for _, t in params.tensors()]
    v = [np.zeros_like(_real_view(t)) for _, t in params.tensors()]
    return OptimizerState(step=0, m=m, v=v)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; pure function of its inputs, nothing is mutated."""
    t = state.step + 1
    new_arrays, new_m, new_v = [], [], []
    pairs = zip(params.tensors(), grads.tensors(), state.m, state.v)
    for (_, p), (_, g), m, v in pairs:
        p_new = np.ascontiguousarray(p).copy()
        pv = _real_view(p_new)
        gv = _real_view(g)
        m_new = beta1 * m + (1.0 - beta1) * gv
        v_new = beta2 * v + (1.0 - beta2) * gv ** 2
        m_hat = m_new / (1.0 - beta1 ** t)
        v_hat = v_new / (1.0 - beta2 ** t)
        pv -= lr * m_hat / (np.sqrt(v_hat) + eps)
        new_arrays.append(p_new)
        new_m.append(m_new)
        new_v.append(v_new)
    return (params_from_tensors(params.layer_dims, new_arrays),
            OptimizerState(step=t, m=new_m, v=new_v))


def _stack_batch(batch):
    """Accept one ChannelSample or a sequence; return (H, noise_var, p_max) arrays."""
    if hasattr(batch, "channel"):
        batch = [batch]
    hs = np.stack([np.asarray(s.channel) for s in batch])
    nv = np.array([s.noise_var for s in batch], dtype=float)
    pm = np.array([s.p_max for s in batch], dtype=float)
    return hs, nv, pm


def _ctanh_adj(g_out, out):
    """Backward of the split tanh given its own output."""
    return (g_out.real * (1.0 - out.real ** 2)
            + 1j * (g_out.imag * (1.0 - out.imag ** 2)))


def _mat_grad(g, x):
    """Gradient of a parameter matrix: sum of outer products over all sites."""
    return g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1])


def _pipeline_fwd(H, M_p, params, noise_var, p_max):
    """Batched forward through the full pipeline; returns loss and every cache."""
    M = np.asarray(M_p)
    H = np.asarray(H)
    # a zero channel contributes exactly zero rate for any beamformer, so the
    # sample carries no gradient either; drop it instead of dividing by the
    # zero radiated power it forces
    live = np.flatnonzero(np.any(H.reshape(H.shape[0], -1) != 0, axis=1))
    b_total = H.shape[0]
    if live.size == 0:
        return 0.0, {"empty": True}
    if live.size < b_total:
        H = H[live]
        noise_var = noise_var[live]
        p_max = p_max[live]
    edges, vert, enc_cache = _encode_fwd(H, M_p, params)
    layer_caches = []
    for lay in params.layers:
        e_out, ec = _edge_layer_fwd(edges, vert, H, lay)
        v_out, vc = _vertex_layer_fwd(edges, vert, H, lay)
        layer_caches.append((ec, vc))
        edges, vert = e_out, v_out
    a, V_e_raw, ro_cache = _readout_fwd(edges, vert, params)

    q, r = np.linalg.qr(M)
    v_tilde = np.linalg.solve(r, q.conj().T @ V_e_raw)
    V_p = M @ v_tilde
    s2 = np.einsum("bn,bnk->b", a ** 2, np.abs(V_p) ** 2)
    if np.any(s2 <= 0) or not np.all(np.isfinite(s2)):
        raise GradientError("pipeline produced a zero-power beamformer; "
                            "cannot normalize or differentiate")
    c = np.sqrt(p_max / s2)
    V_f = V_p * c[:, None, None]

    cmat = a[:, :, None] * H
    s = np.matmul(cmat.conj().transpose(0, 2, 1), V_f)
    p = np.abs(s) ** 2
    kk = np.arange(p.shape[-1])
    sig = p[:, kk, kk]
    denom = p.sum(axis=2) - sig + noise_var[:, None]
    rates = np.sum(np.log2(1.0 + sig / denom), axis=1)
    loss_val = -float(rates.sum() / b_total)
    cache = {"enc": enc_cache, "layers": layer_caches, "ro": ro_cache,
             "q": q, "r": r, "M": M, "V_e_raw": V_e_raw, "v_tilde": v_tilde,
             "V_p": V_p, "s2": s2, "c": c, "V_f": V_f, "cmat": cmat, "s": s,
             "sig": sig, "denom": denom, "a": a, "H": H, "rates": rates,
             "b_total": b_total}
    return loss_val, cache


def _pipeline_bwd(cache, params):
    """Reverse pass; returns parameter gradients in the same structure."""
    if cache.get("empty"):
        return zeros_like_params(params)
    H = cache["H"]
    M = cache["M"]
    a = cache["a"]
    b = cache["b_total"]
    ln2 = np.log(2.0)
    kk = np.arange(cache["s"].shape[-1])

    # rate stage
    sig, denom, s = cache["sig"], cache["denom"], cache["s"]
    d_sig = (-1.0 / (b * ln2)) / (denom + sig)
    d_den = (1.0 / (b * ln2)) * sig / (denom * (denom + sig))
    g_p = np.repeat(d_den[:, :, None], s.shape[-1], axis=2)
    g_p[:, kk, kk] = d_sig
    g_s = 2.0 * g_p * s
    g_vf = np.matmul(cache["cmat"], g_s)
    g_cmat = np.matmul(cache["V_f"], g_s.conj().transpose(0, 2, 1))
    g_a = np.sum((g_cmat * H.conj()).real, axis=2)

    # power normalization stage
    V_p, c, s2 = cache["V_p"], cache["c"], cache["s2"]
    g_c = np.einsum("bnk,bnk->b", g_vf.conj(), V_p).real
    g_vp = c[:, None, None] * g_vf
    d_s2 = g_c * (-c / (2.0 * s2))
    g_vp += d_s2[:, None, None] * 2.0 * (a ** 2)[:, :, None] * V_p
    row_pow = np.sum(np.abs(V_p) ** 2, axis=2)
    g_a += d_s2[:, None] * 2.0 * a * row_pow

    # range projection stage: V_p = M r^{-1} q^H V_e_raw, a fixed linear map
    q, r = cache["q"], cache["r"]
    pm = np.linalg.solve(r, q.conj().T)
    g_ve_raw = pm.conj().T @ (M.conj().T @ g_vp)

    # readout stage
    ro = cache["ro"]
    edges_d, vert_d = ro["edges"], ro["vert"]
    a_sig = ro["a"]
    g_t = g_a * a_sig * (1.0 - a_sig)
    g_vr = g_t.reshape(-1) @ vert_d.real.reshape(-1, vert_d.shape[-1])
    g_vert = params.vertex_readout * g_t[..., None] + 0j
    g_er = g_ve_raw.reshape(-1) @ edges_d.conj().reshape(-1, edges_d.shape[-1])
    g_edges = g_ve_raw[..., None] * params.edge_readout.conj()

    # message-passing layers, deepest first
    grads_layers = []
    for lay, (ec, vc) in zip(reversed(params.layers), reversed(cache["layers"])):
        edges_l, vert_l = ec["edges"], ec["vert"]

        # edge update backward
        g_pre = _ctanh_adj(g_edges, ec["out"])
        g_s_mat = _mat_grad(g_pre, edges_l.conj())
        g_edges_new = _lin(g_pre, lay.S.conj())
        g_p1 = _mat_grad(g_pre, ec["intra"].conj())
        g_intra = _lin(g_pre, lay.P1.conj())
        g_p2 = _mat_grad(g_pre, ec["inter"].conj())
        g_inter = _lin(g_pre, lay.P2.conj())

        w, agg, aggd = ec["w"], ec["agg"], ec["aggd"]
        q_int = aggd[:, None, :, :] - edges_l * w.conj()
        g_w = g_intra * q_int.conj()
        g_q = g_intra * w.conj()
        g_aggd = g_q.sum(axis=1)
        g_edges_new += -g_q * w
        g_w += -g_q.conj() * edges_l

        g_agg = _pair_outer(w.conj(), g_inter)
        g_w += _mix_users(agg.conj().swapaxes(-3, -2), g_inter)
        g_aggd += -(g_inter * w.conj()).sum(axis=1)
        g_w += -g_inter * aggd[:, None, :, :].conj()

        g_agg[:, kk, kk, :] += g_aggd
        g_w += _mix_users(g_agg.conj().swapaxes(-3, -2), edges_l)
        g_edges_new += _mix_users(g_agg, w)
        g_vert_new = (g_w * H.conj()[..., None]).sum(axis=-2)

        # vertex update backward
        g_pre_v = _ctanh_adj(g_vert, vc["out"])
        g_w1 = _mat_grad(g_pre_v, vert_l.conj())
        g_vert_new += _lin(g_pre_v, lay.W1.conj())
        g_w2 = _mat_grad(g_pre_v, vc["inner"].astype(complex))
        g_inner = _lin(g_pre_v, lay.W2.conj()).real
        g_mx = g_inner[:, :, None, :] * H[:, :, :, None]
        g_td = 2.0 * g_mx
        g_tall = -g_mx
        u_mat, ud = vc["U"], vc["Ud"]
        g_ud = (g_td * edges_l.conj()).sum(axis=1)
        g_edges_new += g_td * ud[:, None, :, :].conj()
        g_u = _pair_outer(edges_l.conj(), g_tall)
        g_edges_new += _mix_users(u_mat.conj().swapaxes(-3, -2), g_tall)
        g_u[:, kk, kk, :] += g_ud
        g_y = _mix_users_h(g_u, H.conj())
        g_edges_new += g_y.conj() * vert_l[:, :, None, :]
        g_vert_new += (g_y * edges_l).sum(axis=-2)

        grads_layers.append((g_s_mat, g_p1, g_p2, g_w1, g_w2))
        g_edges, g_vert = g_edges_new, g_vert_new

    grads_layers.reverse()

    # encoder backward
    enc = cache["enc"]
    g_e_enc = H.conj().reshape(-1) @ g_edges.reshape(-1, g_edges.shape[-1])
    ad = _ctanh_adj(g_vert, enc["vert_out"])
    ad_total = ad.reshape(-1, ad.shape[-2], ad.shape[-1]).sum(axis=0)
    g_u_enc = np.einsum("nc,n->c", ad_total, enc["row_mean"].conj())

    arrays = [g_e_enc, g_u_enc]
    for g_s_mat, g_p1, g_p2, g_w1, g_w2 in grads_layers:
        arrays.extend([g_s_mat, g_p1, g_p2, g_w1, g_w2])
    arrays.extend([g_er, g_vr])
    grads = params_from_tensors(params.layer_dims, arrays)
    for name, g in grads.tensors():
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in tensor {name}")
    return grads


def loss(batch, M_p, params):
    """Mean negative sum rate of the pipeline over the batch."""
    hs, nv, pm = _stack_batch(batch)
    val, _ = _pipeline_fwd(hs, M_p, params, nv, pm)
    return val


def grad_params(batch, M_p, params):
    """Parameter gradients of loss(batch); same structure as the params."""
    return loss_and_grads(batch, M_p, params)[1]


def loss_and_grads(batch, M_p, params):
    hs, nv, pm = _stack_batch(batch)
    val, cache = _pipeline_fwd(hs, M_p, params, nv, pm)
    return val, _pipeline_bwd(cache, params)


def train(config, log_fn=None):
    """Run the optimization loop; returns (params, history).

    history holds one dict per epoch with the mean training loss and wall
    time.  log_fn, when given, receives each formatted progress line.
    """
    ds = dataio.read_dataset(config.dataset_path)
    side = int(round(np.sqrt(ds.n_t)))
    if side * side != ds.n_t:
        raise ValueError("dataset element count is not a square grid")
    cfg = canonical_surface(side, side, ds.n_feeds)
    M_p = build_phase_pattern(cfg).matrix
    snr = config.snr_db if config.snr_db is not None else ds.snr_db
    nv = noise_variance(snr)

    params = init_params(config.layer_dims, np.random.default_rng([config.seed, 0]))
    if config.epochs > 0 and ds.n_samples == 0:
        raise ValueError("dataset has no samples to train on")
    state = init_optimizer(params)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    history = []
    n = ds.n_samples
    noise_all = np.full(n, nv)
    p_all = np.ones(n)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            hs = ds.channels[idx]
            val, cache = _pipeline_fwd(hs, M_p, params, noise_all[idx], p_all[idx])
            grads = _pipeline_bwd(cache, params)
            params, state = adam_step(params, grads, state, lr,
                                      config.beta1, config.beta2, config.eps)
            total += val * len(idx)
        mean_loss = total / n
        secs = time.perf_counter() - t0
        history.append({"epoch": epoch, "mean_loss": mean_loss, "seconds": secs,
                        "learning_rate": lr})
        if log_fn is not None:
            log_fn(f"epoch {epoch} mean_loss {mean_loss:.6f} seconds {secs:.2f}")
    return params, history
