"""Similarity policy network: dual-stream GCN encoders, a Transformer
encoder block per stream, a column-wise neural tensor scorer whose bilinear
slice is tied to the substrate node index, and a pooled value head.

All tensors are float64; forward passes are pure functions of the parameters
so gradient checks against finite differences are meaningful at tight
tolerances.
"""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np
import torch

from .features import SUBSTRATE_FEATURE_DIM, VIRTUAL_FEATURE_DIM

DTYPE = torch.float64

CHECKPOINT_VERSION = "v1"


class CapacityExceeded(ValueError):
    """Substrate larger than the model's slice capacity."""


class NumericFailure(RuntimeError):
    """Non-finite value encountered during a forward/backward pass."""


@dataclass(frozen=True)
class PolicyConfig:
    n_cap: int = 128
    hidden: int = 32
    gcn_layers: int = 2
    heads: int = 4
    ffn: int = 64
    ln_eps: float = 1e-5
    prob_eps: float = 1e-8
    sub_feat_dim: int = SUBSTRATE_FEATURE_DIM
    virt_feat_dim: int = VIRTUAL_FEATURE_DIM


def _glorot(shape, rng) -> torch.Tensor:
    fan_in, fan_out = shape[-2], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape)
    return torch.tensor(data, dtype=DTYPE, requires_grad=True)


def _zeros(shape) -> torch.Tensor:
    return torch.zeros(shape, dtype=DTYPE, requires_grad=True)


def _ones(shape) -> torch.Tensor:
    return torch.ones(shape, dtype=DTYPE, requires_grad=True)


class PolicyModel:
    """All learnable tensors, keyed by name in a stable order."""

    def __init__(self, config: PolicyConfig = PolicyConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.hidden
        params = OrderedDict()
        for stream, feat in (("sub", config.sub_feat_dim),
                             ("virt", config.virt_feat_dim)):
            dims = [feat] + [d] * config.gcn_layers
            for layer, (fin, fout) in enumerate(zip(dims, dims[1:])):
                params[f"{stream}_gcn.{layer}.W"] = _glorot((fin, fout), rng)
            for name in ("wq", "wk", "wv", "wo"):
                params[f"{stream}_attn.{name}"] = _glorot((d, d), rng)
            for name in ("bq", "bk", "bv", "bo"):
                params[f"{stream}_attn.{name}"] = _zeros((d,))
            params[f"{stream}_attn.ffn_w1"] = _glorot((d, config.ffn), rng)
            params[f"{stream}_attn.ffn_b1"] = _zeros((config.ffn,))
            params[f"{stream}_attn.ffn_w2"] = _glorot((config.ffn, d), rng)
            params[f"{stream}_attn.ffn_b2"] = _zeros((d,))
            params[f"{stream}_attn.ln1_g"] = _ones((d,))
            params[f"{stream}_attn.ln1_b"] = _zeros((d,))
            params[f"{stream}_attn.ln2_g"] = _ones((d,))
            params[f"{stream}_attn.ln2_b"] = _zeros((d,))
        params["ntn.W"] = _glorot((config.n_cap, d, d), rng)
        params["ntn.b"] = _zeros(())
        params["value.w1"] = _glorot((2 * d, d), rng)
        params["value.b1"] = _zeros((d,))
        params["value.w2"] = _glorot((d, 1), rng)
        params["value.b2"] = _zeros((1,))
        self.params = params

    # --- forward pieces -------------------------------------------------

    def stream_params(self, stream: str) -> dict:
        prefix = f"{stream}_"
        return {k[len(prefix):]: v for k, v in self.params.items()
                if k.startswith(prefix)}

    def encode(self, X, A, stream: str) -> torch.Tensor:
        sp = self.stream_params(stream)
        gcn_weights = [sp[f"gcn.{l}.W"] for l in range(self.config.gcn_layers)]
        U = gcn_forward(X, A, gcn_weights)
        attn = {k[5:]: v for k, v in sp.items() if k.startswith("attn.")}
        return transformer_forward(U, attn, heads=self.config.heads,
                                   ln_eps=self.config.ln_eps)

    def forward(self, sub_X, sub_A, virt_X, virt_A, mask=None):
        """Full pass: returns (P, value, H_v, H_s) as torch tensors."""
        sub_X = _as_tensor(sub_X)
        sub_A = _as_tensor(sub_A)
        virt_X = _as_tensor(virt_X)
        virt_A = _as_tensor(virt_A)
        H_s = self.encode(sub_X, sub_A, "sub")
        H_v = self.encode(virt_X, virt_A, "virt")
        Z = ntn_score(H_v, H_s, self.params["ntn.W"], self.params["ntn.b"])
        P = to_probability(Z, eps=self.config.prob_eps, mask=mask)
        V = value_estimate(H_v, H_s, self.value_head())
        return P, V, H_v, H_s

    def probability_matrix(self, sub_X, sub_A, virt_X, virt_A) -> np.ndarray:
        with torch.no_grad():
            P, _, _, _ = self.forward(sub_X, sub_A, virt_X, virt_A)
        return P.numpy()

    def value_head(self) -> dict:
        return {k[6:]: v for k, v in self.params.items()
                if k.startswith("value.")}

    # --- persistence ----------------------------------------------------

    def save(self, prefix: str):
        """Write ``<prefix>.manifest.json`` plus a flat little-endian
        float64 blob ``<prefix>.bin`` in manifest order."""
        manifest = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "tensors": [{"name": k, "shape": list(v.shape)}
                        for k, v in self.params.items()],
        }
        os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
        with open(prefix + ".manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
        with open(prefix + ".bin", "wb") as fh:
            for tensor in self.params.values():
                fh.write(tensor.detach().numpy().astype("<f8").tobytes())

    @classmethod
    def load(cls, prefix: str) -> "PolicyModel":
        with open(prefix + ".manifest.json") as fh:
            manifest = json.load(fh)
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version "
                             f"{manifest.get('version')!r}")
        config = PolicyConfig(**manifest["config"])
        model = cls(config)
        blob = np.fromfile(prefix + ".bin", dtype="<f8")
        offset = 0
        with torch.no_grad():
            for entry in manifest["tensors"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                chunk = blob[offset:offset + count].reshape(shape)
                model.params[entry["name"]].copy_(
                    torch.tensor(chunk, dtype=DTYPE))
                offset += count
        if offset != blob.size:
            raise ValueError("checkpoint blob size does not match manifest")
        return model


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def gcn_forward(X, A, weights) -> torch.Tensor:
    """Symmetric-normalized GCN stack with self loops and ReLU."""
    X = _as_tensor(X)
    A = _as_tensor(A)
    if A.shape[0] != A.shape[1] or A.shape[0] != X.shape[0]:
        raise ValueError(f"adjacency {tuple(A.shape)} does not match "
                         f"features {tuple(X.shape)}")
    A_tilde = A + torch.eye(A.shape[0], dtype=DTYPE)
    deg = A_tilde.sum(dim=1)
    d_inv_sqrt = deg.pow(-0.5)
    A_hat = A_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    U = X
    for W in weights:
        W = _as_tensor(W)
        if U.shape[1] != W.shape[0]:
            raise ValueError(f"feature dim {U.shape[1]} does not match "
                             f"weight {tuple(W.shape)}")
        U = torch.relu(A_hat @ U @ W)
    return U


def _layer_norm(x, gain, bias, eps):
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def transformer_forward(U, params: dict, heads: int = 4,
                        ln_eps: float = 1e-5) -> torch.Tensor:
    """Post-norm encoder block without positional encoding."""
    U = _as_tensor(U)
    n, d = U.shape
    if d % heads != 0:
        raise ValueError(f"hidden dim {d} not divisible by {heads} heads")
    dh = d // heads
    Q = U @ params["wq"] + params["bq"]
    K = U @ params["wk"] + params["bk"]
    V = U @ params["wv"] + params["bv"]

    def split(x):
        return x.reshape(n, heads, dh).permute(1, 0, 2)

    Qh, Kh, Vh = split(Q), split(K), split(V)
    scores = Qh @ Kh.transpose(1, 2) / math.sqrt(dh)
    attn = torch.softmax(scores, dim=-1)
    heads_out = attn @ Vh
    merged = heads_out.permute(1, 0, 2).reshape(n, d)
    mhsa = merged @ params["wo"] + params["bo"]
    U1 = _layer_norm(U + mhsa, params["ln1_g"], params["ln1_b"], ln_eps)
    ffn = torch.relu(U1 @ params["ffn_w1"] + params["ffn_b1"]) @ params["ffn_w2"] + params["ffn_b2"]
    return _layer_norm(U1 + ffn, params["ln2_g"], params["ln2_b"], ln_eps)


def ntn_score(H_v, H_s, W, b) -> torch.Tensor:
    """Z[j, i] = h_j^T W_j h_i + b with the slice tied to substrate node j."""
    H_v = _as_tensor(H_v)
    H_s = _as_tensor(H_s)
    n_s = H_s.shape[0]
    if n_s > W.shape[0]:
        raise CapacityExceeded(
            f"substrate size {n_s} exceeds model capacity {W.shape[0]}")
    slices = W[:n_s]  # (n_s, d, d)
    # (n_s, d) x (n_s, d, d) -> (n_s, d), then against H_v^T -> (n_s, n_v)
    left = torch.einsum("jd,jde->je", H_s, slices)
    return left @ H_v.T + b


def to_probability(Z, eps: float = 1e-8, mask=None) -> torch.Tensor:
    """Sigmoid then row-wise L2 normalization; rows index virtual nodes.

    ``mask`` is an optional boolean vector over substrate columns; masked-out
    columns are zeroed before normalization.
    """
    Z = _as_tensor(Z)
    if not torch.isfinite(Z).all():
        raise NumericFailure("non-finite similarity scores")
    S = torch.sigmoid(Z.T)
    if mask is not None:
        keep = torch.tensor(np.asarray(mask, dtype=bool))
        S = S * keep[None, :].to(DTYPE)
    norms = torch.sqrt((S ** 2).sum(dim=1, keepdim=True) + eps)
    return S / norms


def value_estimate(H_v, H_s, head: dict) -> torch.Tensor:
    """Scalar critic on the mean-pooled pair of graph embeddings."""
    pooled = torch.cat([_as_tensor(H_v).mean(dim=0),
                        _as_tensor(H_s).mean(dim=0)])
    hidden = torch.relu(pooled @ head["w1"] + head["b1"])
    return (hidden @ head["w2"] + head["b2"]).squeeze()


def gradients(model: PolicyModel, loss_fn) -> dict:
    """Reverse-mode gradients of ``loss_fn()`` for every learnable tensor."""
    for p in model.params.values():
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericFailure("non-finite loss")
    loss.backward()
    grads = {}
    for name, p in model.params.items():
        g = p.grad
        grad = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(grad).all():
            raise NumericFailure(f"non-finite gradient for {name}")
        grads[name] = grad.detach().numpy().copy()
    return grads
