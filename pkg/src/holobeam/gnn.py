"""Graph network over the (element, user) interference graph.

Edge states track one beamformer entry per element/user pair, vertex states
track one holographic amplitude per element.  The message passing mirrors the
structure of the sum-rate gradient: each edge aggregates a matched-beam term
for its own user and a leakage term over the other users, each vertex
aggregates the real part of the rate-sensitivity of its amplitude.  All ops
accept arbitrary leading batch axes; states are (..., N, K, C) for edges and
(..., N, C) for vertices.

Activations apply tanh to the real and imaginary parts separately, which
keeps the maps equivariant to joint permutations of elements and users and
invariant to feed reordering (the phase pattern enters only through a
per-row mean in the input encoder).
"""

import numpy as np
from dataclasses import dataclass
from scipy.special import expit

from .precoding import BeamformerSet, project_to_range, normalize_power


def ctanh(z):
    """tanh applied separately to real and imaginary parts."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return np.tanh(z.real) + 1j * np.tanh(z.imag)
    return np.tanh(z)


# contraction helpers: the message-passing sums are channel-batched matrix
# products, which run through BLAS instead of the generic einsum kernel

def _lin(x, m):
    """Contract the last axis of x with the first axis of m."""
    flat = x.reshape(-1, x.shape[-1])
    return (flat @ m).reshape(x.shape[:-1] + (m.shape[1],))


def _pair_outer(x, y):
    """out[..., j, k, c] = sum_n x[..., n, j, c] * y[..., n, k, c]."""
    xt = np.moveaxis(x, -1, -3).swapaxes(-1, -2)
    yt = np.moveaxis(y, -1, -3)
    return np.moveaxis(xt @ yt, -3, -1)


def _mix_users(t, x):
    """out[..., n, k, c] = sum_j t[..., j, k, c] * x[..., n, j, c]."""
    xt = np.moveaxis(x, -1, -3)
    tt = np.moveaxis(t, -1, -3)
    return np.moveaxis(xt @ tt, -3, -1)


def _pair_outer_h(y, Hm):
    """out[..., j, k, c] = sum_n y[..., n, j, c] * Hm[..., n, k]."""
    yt = np.moveaxis(y, -1, -3).swapaxes(-1, -2)
    return np.moveaxis(yt @ Hm[..., None, :, :], -3, -1)


def _mix_users_h(t, Hm):
    """out[..., n, j, c] = sum_k t[..., j, k, c] * Hm[..., n, k]."""
    tt = np.moveaxis(t, -1, -3).swapaxes(-1, -2)
    return np.moveaxis(Hm[..., None, :, :] @ tt, -3, -1)


@dataclass
class LayerParams:
    """One message-passing layer; every matrix maps C_l -> C_{l+1}."""

    S: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    W1: np.ndarray
    W2: np.ndarray


@dataclass
class GnnParams:
    """All trainable tensors, in the order they are serialized."""

    layer_dims: tuple
    edge_encoder: np.ndarray
    vertex_encoder: np.ndarray
    layers: list
    edge_readout: np.ndarray
    vertex_readout: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError("layer_dims needs at least input and output widths")
        if len(self.layers) != len(dims) - 1:
            raise ValueError("layer count does not match layer_dims")
        c0, cd = dims[0], dims[-1]
        if self.edge_encoder.shape != (c0,) or self.vertex_encoder.shape != (c0,):
            raise ValueError("encoder vectors must have the input width")
        for l, lay in enumerate(self.layers):
            want = (dims[l + 1], dims[l])
            for name in ("S", "P1", "P2", "W1", "W2"):
                if getattr(lay, name).shape != want:
                    raise ValueError(f"layer {l} tensor {name} has shape "
                                     f"{getattr(lay, name).shape}, expected {want}")
        if self.edge_readout.shape != (cd,) or self.vertex_readout.shape != (cd,):
            raise ValueError("readout vectors must have the output width")
        if np.iscomplexobj(self.vertex_readout):
            raise ValueError("vertex readout acts on a real feature and must be real")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def n_layers(self):
        return len(self.layers)

    def tensors(self):
        """Yield (name, array) pairs in the canonical serialization order."""
        yield "edge_encoder", self.edge_encoder
        yield "vertex_encoder", self.vertex_encoder
        for l, lay in enumerate(self.layers):
            for name in ("S", "P1", "P2", "W1", "W2"):
                yield f"layer{l}.{name}", getattr(lay, name)
        yield "edge_readout", self.edge_readout
        yield "vertex_readout", self.vertex_readout


def params_from_tensors(layer_dims, arrays):
    """Rebuild a GnnParams from arrays listed in canonical order."""
    arrays = list(arrays)
    n_layers = len(layer_dims) - 1
    if len(arrays) != 4 + 5 * n_layers:
        raise ValueError("wrong tensor count for the given layer_dims")
    layers = []
    for l in range(n_layers):
        chunk = arrays[2 + 5 * l: 2 + 5 * (l + 1)]
        layers.append(LayerParams(*chunk))
    return GnnParams(layer_dims=tuple(layer_dims), edge_encoder=arrays[0],
                     vertex_encoder=arrays[1], layers=layers,
                     edge_readout=arrays[-2], vertex_readout=arrays[-1])


def init_params(layer_dims, rng):
    """Random init: complex Gaussian entries, std 1/sqrt(fan-in) per part."""
    dims = tuple(int(d) for d in layer_dims)

    def cgauss(shape, std):
        return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    arrays = [cgauss((dims[0],), 1.0), cgauss((dims[0],), 1.0)]
    for l in range(len(dims) - 1):
        std = 1.0 / np.sqrt(dims[l])
        for _ in range(5):
            arrays.append(cgauss((dims[l + 1], dims[l]), std))
    std_out = 1.0 / np.sqrt(dims[-1])
    arrays.append(cgauss((dims[-1],), std_out))
    arrays.append(std_out * rng.standard_normal(dims[-1]))
    return params_from_tensors(dims, arrays)


def zeros_like_params(params):
    """Gradient accumulator with the same structure and dtypes as params."""
    return params_from_tensors(params.layer_dims,
                               [np.zeros_like(t) for _, t in params.tensors()])


@dataclass
class HiddenState:
    """Edge states (..., N, K, C) and vertex states (..., N, C)."""

    edges: np.ndarray
    vertices: np.ndarray

    def __post_init__(self):
        if self.edges.shape[-1] != self.vertices.shape[-1]:
            raise ValueError("edge and vertex widths disagree")
        if self.edges.shape[-3] != self.vertices.shape[-2]:
            raise ValueError("edge and vertex element counts disagree")


# forward passes, each returning the output plus the cache its adjoint needs

def _encode_fwd(H, M_p, params):
    H = np.asarray(H)
    row_mean = np.asarray(M_p).mean(axis=1)
    edges = H[..., :, :, None] * params.edge_encoder
    vert_flat = ctanh(row_mean[:, None] * params.vertex_encoder)
    vert = np.broadcast_to(vert_flat, H.shape[:-2] + vert_flat.shape)
    cache = {"H": H, "row_mean": row_mean, "vert_out": vert}
    return edges, vert, cache


def _edge_layer_fwd(edges, vert, H, lay):
    w = H[..., :, :, None] * vert[..., :, None, :]
    agg = _pair_outer(w.conj(), edges)
    aggd = np.einsum("...jjc->...jc", agg)
    intra = w * (aggd[..., None, :, :] - edges * w.conj())
    inter = _mix_users(agg, w) - aggd[..., None, :, :] * w
    pre = (_lin(edges, lay.S.T) + _lin(intra, lay.P1.T)
           + _lin(inter, lay.P2.T))
    out = ctanh(pre)
    cache = {"w": w, "agg": agg, "aggd": aggd, "intra": intra, "inter": inter,
             "edges": edges, "vert": vert, "H": H, "out": out}
    return out, cache


def _vertex_layer_fwd(edges, vert, H, lay):
    U = _pair_outer_h(edges.conj() * vert[..., :, None, :], H)
    Ud = np.einsum("...kkc->...kc", U)
    T_all = _mix_users(U, edges)
    Mx = 2.0 * Ud[..., None, :, :] * edges - T_all
    inner = (H.conj()[..., None] * Mx).sum(axis=-2).real
    pre = _lin(vert, lay.W1.T) + _lin(inner, lay.W2.T)
    out = ctanh(pre)
    cache = {"U": U, "Ud": Ud, "inner": inner, "edges": edges, "vert": vert,
             "H": H, "out": out}
    return out, cache


def _readout_fwd(edges, vert, params):
    t = vert.real @ params.vertex_readout
    a = expit(t)
    V_e_raw = edges @ params.edge_readout
    cache = {"a": a, "edges": edges, "vert": vert}
    return a, V_e_raw, cache


# public ops

def encode_inputs(H, M_p, params):
    """Initial hidden state from the channel and the phase pattern.

    Edges start as the channel coefficient spread over the learned input
    vector; vertices start from the feed-averaged phase-pattern row through
    the learned input vector and the split activation.
    """
    edges, vert, _ = _encode_fwd(H, M_p, params)
    return HiddenState(edges=edges, vertices=vert)


def edge_layer(state, H, lay):
    """One edge update; returns the new edge states."""
    out, _ = _edge_layer_fwd(state.edges, state.vertices, np.asarray(H), lay)
    return out


def vertex_layer(state, H, lay):
    """One vertex update; returns the new vertex states."""
    out, _ = _vertex_layer_fwd(state.edges, state.vertices, np.asarray(H), lay)
    return out


def run_layers(state, H, params):
    """Apply every layer synchronously (both updates read the same state)."""
    H = np.asarray(H)
    for lay in params.layers:
        state = HiddenState(edges=edge_layer(state, H, lay),
                            vertices=vertex_layer(state, H, lay))
    return state


def readout(state, params):
    """Map final states to amplitudes in (0, 1) and the raw equivalent beamformer.

    Amplitudes come from a sigmoid over a real-linear functional of the real
    part of the vertex state, so a zero pre-activation reads out 0.5.
    """
    a, V_e_raw, _ = _readout_fwd(state.edges, state.vertices, params)
    return a, V_e_raw


def raw_forward(H, M_p, params):
    """Network half of the pipeline: encode, message passing, readout."""
    state = encode_inputs(H, M_p, params)
    state = run_layers(state, np.asarray(H), params)
    return readout(state, params)


def full_forward(H, M_p, params, noise_var, p_max):
    """Whole pipeline for one sample: network, range projection, power scaling.

    noise_var is part of the operating point but the forward map does not
    depend on it; it is accepted for interface symmetry with the loss.
    Returns a feasible BeamformerSet: a in [0, 1], ||diag(a) M_p V||_F^2
    equal to p_max, and V_e = M_p V.
    """
    H = np.asarray(H)
    if H.ndim != 2:
        raise ValueError("full_forward expects a single (N_t, K) sample")
    a, V_e_raw = raw_forward(H, M_p, params)
    V_tilde = project_to_range(M_p, V_e_raw)
    V = normalize_power(V_tilde, a, M_p, p_max)
    return BeamformerSet(a=a, V=V, V_e=np.asarray(M_p) @ V)
