"""Similarity policy network: forward oracles, gradient checks, persistence."""

import numpy as np
import pytest
import torch

from vneflow.policy import (DTYPE, CapacityExceeded, NumericFailure,
                            PolicyConfig, PolicyModel, gcn_forward, gradients,
                            ntn_score, to_probability, transformer_forward,
                            value_estimate)


def small_config(**kw):
    defaults = dict(n_cap=8, hidden=8, heads=4, ffn=16)
    defaults.update(kw)
    return PolicyConfig(**defaults)


def rand_inputs(rng, n_s=6, n_v=4, cfg=None):
    cfg = cfg or small_config()
    sub_X = rng.random((n_s, cfg.sub_feat_dim))
    sub_A = np.triu(rng.random((n_s, n_s)) < 0.5, 1).astype(float)
    sub_A = sub_A + sub_A.T
    virt_X = rng.random((n_v, cfg.virt_feat_dim))
    virt_A = np.triu(rng.random((n_v, n_v)) < 0.5, 1).astype(float)
    virt_A = virt_A + virt_A.T
    return sub_X, sub_A, virt_X, virt_A


# --- scalar-loop oracles ------------------------------------------------


def gcn_oracle(X, A, weights):
    n = len(X)
    At = A + np.eye(n)
    deg = At.sum(axis=1)
    H = np.array(X, dtype=float)
    for W in weights:
        out = np.zeros((n, W.shape[1]))
        for i in range(n):
            for j in range(n):
                coeff = At[i, j] / np.sqrt(deg[i] * deg[j])
                out[i] += coeff * (H[j] @ W)
        H = np.maximum(out, 0.0)
    return H


def layer_norm_oracle(x, g, b, eps):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        mu = x[i].mean()
        var = ((x[i] - mu) ** 2).mean()
        out[i] = (x[i] - mu) / np.sqrt(var + eps) * g + b
    return out


def transformer_oracle(U, p, heads, eps):
    n, d = U.shape
    dh = d // heads
    Q = U @ p["wq"] + p["bq"]
    K = U @ p["wk"] + p["bk"]
    V = U @ p["wv"] + p["bv"]
    merged = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = Q[:, sl] @ K[:, sl].T / np.sqrt(dh)
        att = np.exp(scores - scores.max(axis=1, keepdims=True))
        att = att / att.sum(axis=1, keepdims=True)
        merged[:, sl] = att @ V[:, sl]
    mhsa = merged @ p["wo"] + p["bo"]
    U1 = layer_norm_oracle(U + mhsa, p["ln1_g"], p["ln1_b"], eps)
    ffn = np.maximum(U1 @ p["ffn_w1"] + p["ffn_b1"], 0) @ p["ffn_w2"] + p["ffn_b2"]
    return layer_norm_oracle(U1 + ffn, p["ln2_g"], p["ln2_b"], eps)


def ntn_oracle(H_v, H_s, W, b):
    n_s, n_v = len(H_s), len(H_v)
    Z = np.zeros((n_s, n_v))
    for j in range(n_s):
        for i in range(n_v):
            Z[j, i] = H_s[j] @ W[j] @ H_v[i] + b
    return Z


def prob_oracle(Z, eps):
    S = 1.0 / (1.0 + np.exp(-Z.T))
    out = np.zeros_like(S)
    for i in range(S.shape[0]):
        out[i] = S[i] / np.sqrt((S[i] ** 2).sum() + eps)
    return out


def test_gcn_matches_oracle(rng):
    X = rng.random((5, 7))
    A = np.triu(rng.random((5, 5)) < 0.6, 1).astype(float)
    A = A + A.T
    weights = [rng.standard_normal((7, 4)), rng.standard_normal((4, 3))]
    got = gcn_forward(X, A, [torch.tensor(w, dtype=DTYPE) for w in weights])
    np.testing.assert_allclose(got.numpy(), gcn_oracle(X, A, weights),
                               atol=1e-12)


def test_gcn_shape_validation(rng):
    with pytest.raises(ValueError, match="adjacency"):
        gcn_forward(rng.random((3, 2)), np.zeros((4, 4)), [])
    with pytest.raises(ValueError, match="feature dim"):
        gcn_forward(rng.random((3, 2)), np.zeros((3, 3)),
                    [torch.zeros(5, 4, dtype=DTYPE)])


def test_transformer_matches_oracle(rng):
    d, heads = 8, 4
    U = rng.standard_normal((6, d))
    names_mat = ["wq", "wk", "wv", "wo"]
    p_np = {n: rng.standard_normal((d, d)) * 0.3 for n in names_mat}
    for n in ("bq", "bk", "bv", "bo", "ln1_b", "ln2_b"):
        p_np[n] = rng.standard_normal(d) * 0.1
    p_np["ln1_g"] = np.abs(rng.standard_normal(d)) + 0.5
    p_np["ln2_g"] = np.abs(rng.standard_normal(d)) + 0.5
    p_np["ffn_w1"] = rng.standard_normal((d, 16)) * 0.3
    p_np["ffn_b1"] = rng.standard_normal(16) * 0.1
    p_np["ffn_w2"] = rng.standard_normal((16, d)) * 0.3
    p_np["ffn_b2"] = rng.standard_normal(d) * 0.1
    p_t = {k: torch.tensor(v, dtype=DTYPE) for k, v in p_np.items()}
    got = transformer_forward(torch.tensor(U, dtype=DTYPE), p_t, heads=heads)
    want = transformer_oracle(U, p_np, heads, 1e-5)
    np.testing.assert_allclose(got.numpy(), want, atol=1e-10)


def test_transformer_head_divisibility():
    with pytest.raises(ValueError, match="divisible"):
        transformer_forward(torch.zeros(2, 6, dtype=DTYPE), {}, heads=4)


def test_ntn_matches_oracle(rng):
    H_v = rng.standard_normal((3, 5))
    H_s = rng.standard_normal((4, 5))
    W = rng.standard_normal((6, 5, 5))
    b = 0.7
    got = ntn_score(torch.tensor(H_v, dtype=DTYPE),
                    torch.tensor(H_s, dtype=DTYPE),
                    torch.tensor(W, dtype=DTYPE),
                    torch.tensor(b, dtype=DTYPE))
    np.testing.assert_allclose(got.numpy(), ntn_oracle(H_v, H_s, W, b),
                               atol=1e-12)


def test_ntn_capacity_guard(rng):
    H_s = torch.zeros(9, 5, dtype=DTYPE)
    H_v = torch.zeros(2, 5, dtype=DTYPE)
    W = torch.zeros(8, 5, 5, dtype=DTYPE)
    with pytest.raises(CapacityExceeded):
        ntn_score(H_v, H_s, W, torch.zeros((), dtype=DTYPE))


def test_to_probability_matches_oracle(rng):
    Z = rng.standard_normal((5, 3)) * 2
    got = to_probability(torch.tensor(Z, dtype=DTYPE), eps=1e-8)
    np.testing.assert_allclose(got.numpy(), prob_oracle(Z, 1e-8), atol=1e-12)


def test_to_probability_rejects_nonfinite():
    Z = torch.tensor([[np.nan, 1.0]], dtype=DTYPE)
    with pytest.raises(NumericFailure):
        to_probability(Z)


def test_to_probability_mask_zeroes_columns(rng):
    Z = rng.standard_normal((4, 2))
    P = to_probability(torch.tensor(Z, dtype=DTYPE),
                       mask=[True, False, True, False]).numpy()
    assert np.all(P[:, 1] == 0) and np.all(P[:, 3] == 0)
    assert np.all(P[:, 0] > 0)


def test_probability_invariants(rng):
    """Rows unit-L2 (up to eps), entries strictly inside (0, 1)."""
    cfg = small_config()
    model = PolicyModel(cfg, seed=3)
    for trial in range(25):
        inputs = rand_inputs(rng, n_s=int(rng.integers(2, 9)),
                             n_v=int(rng.integers(1, 6)), cfg=cfg)
        P = model.probability_matrix(*inputs)
        assert np.all(P > 0) and np.all(P < 1)
        norms = np.linalg.norm(P, axis=1)
        assert np.all(norms <= 1 + 1e-12)
        # recompute from the raw scores independently
        with torch.no_grad():
            H_s = model.encode(torch.tensor(inputs[0], dtype=DTYPE),
                               torch.tensor(inputs[1], dtype=DTYPE), "sub")
            H_v = model.encode(torch.tensor(inputs[2], dtype=DTYPE),
                               torch.tensor(inputs[3], dtype=DTYPE), "virt")
            Z = ntn_score(H_v, H_s, model.params["ntn.W"],
                          model.params["ntn.b"]).numpy()
        np.testing.assert_allclose(P, prob_oracle(Z, cfg.prob_eps),
                                   atol=1e-12)


def test_value_estimate_oracle(rng):
    H_v = rng.standard_normal((3, 4))
    H_s = rng.standard_normal((5, 4))
    head = {"w1": rng.standard_normal((8, 4)), "b1": rng.standard_normal(4),
            "w2": rng.standard_normal((4, 1)), "b2": rng.standard_normal(1)}
    pooled = np.concatenate([H_v.mean(axis=0), H_s.mean(axis=0)])
    want = np.maximum(pooled @ head["w1"] + head["b1"], 0) @ head["w2"] + head["b2"]
    got = value_estimate(torch.tensor(H_v, dtype=DTYPE),
                         torch.tensor(H_s, dtype=DTYPE),
                         {k: torch.tensor(v, dtype=DTYPE)
                          for k, v in head.items()})
    assert float(got) == pytest.approx(float(want[0]), abs=1e-12)


def finite_difference_check(model, inputs, n_probe=3, h=1e-6, seed=0):
    """Central differences on randomly probed entries of every tensor."""
    rng = np.random.default_rng(seed)

    def loss_fn():
        P, V, _, _ = model.forward(*inputs)
        return P.sum() + V

    grads = gradients(model, loss_fn)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.detach().numpy().reshape(-1)
        g = grads[name].reshape(-1)
        size = flat.size
        for idx in rng.choice(size, size=min(n_probe, size), replace=False):
            orig = flat[idx]
            with torch.no_grad():
                p.view(-1)[idx] = orig + h
            up = float(loss_fn().detach())
            with torch.no_grad():
                p.view(-1)[idx] = orig - h
            down = float(loss_fn().detach())
            with torch.no_grad():
                p.view(-1)[idx] = orig
            fd = (up - down) / (2 * h)
            # denominator floored at 1 so FD truncation noise on near-zero
            # gradients does not masquerade as relative error
            denom = max(abs(fd), abs(g[idx]), 1.0)
            worst = max(worst, abs(fd - g[idx]) / denom)
    return worst


def test_gradients_match_finite_differences(rng):
    model = PolicyModel(small_config(), seed=0)
    inputs = rand_inputs(rng)
    assert finite_difference_check(model, inputs) < 1e-6


def test_gradients_raise_on_nonfinite_loss():
    model = PolicyModel(small_config(), seed=0)
    with pytest.raises(NumericFailure):
        gradients(model, lambda: torch.tensor(np.nan, dtype=DTYPE,
                                              requires_grad=True))


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    model = PolicyModel(small_config(), seed=4)
    # take a gradient step so parameters are not at init
    inputs = rand_inputs(rng)
    grads = gradients(model, lambda: model.forward(*inputs)[0].sum())
    with torch.no_grad():
        for name, p in model.params.items():
            p -= 0.01 * torch.tensor(grads[name], dtype=DTYPE)
    prefix = str(tmp_path / "ckpt")
    model.save(prefix)
    clone = PolicyModel.load(prefix)
    assert clone.config == model.config
    for name in model.params:
        a = model.params[name].detach().numpy()
        b = clone.params[name].detach().numpy()
        assert a.tobytes() == b.tobytes(), name
    P1 = model.probability_matrix(*inputs)
    P2 = clone.probability_matrix(*inputs)
    assert np.array_equal(P1, P2)


def test_checkpoint_blob_size_validation(tmp_path):
    model = PolicyModel(small_config(), seed=0)
    prefix = str(tmp_path / "ckpt")
    model.save(prefix)
    with open(prefix + ".bin", "ab") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(ValueError, match="blob size"):
        PolicyModel.load(prefix)


def test_checkpoint_version_validation(tmp_path):
    import json
    model = PolicyModel(small_config(), seed=0)
    prefix = str(tmp_path / "ckpt")
    model.save(prefix)
    with open(prefix + ".manifest.json") as fh:
        manifest = json.load(fh)
    manifest["version"] = "v999"
    with open(prefix + ".manifest.json", "w") as fh:
        json.dump(manifest, fh)
    with pytest.raises(ValueError, match="version"):
        PolicyModel.load(prefix)


def test_substrate_permutation_consistency(rng):
    """Permuting substrate node order permutes P's columns, provided the
    NTN slice assignment is permuted the same way."""
    cfg = small_config()
    model = PolicyModel(cfg, seed=8)
    n_s = 6
    sub_X, sub_A, virt_X, virt_A = rand_inputs(rng, n_s=n_s)
    perm = rng.permutation(n_s)
    P = model.probability_matrix(sub_X, sub_A, virt_X, virt_A)
    with torch.no_grad():
        W_saved = model.params["ntn.W"].clone()
        model.params["ntn.W"][:n_s] = W_saved[perm]
        P_perm = model.probability_matrix(sub_X[perm],
                                          sub_A[np.ix_(perm, perm)],
                                          virt_X, virt_A)
        model.params["ntn.W"].copy_(W_saved)
    np.testing.assert_allclose(P_perm, P[:, perm], atol=1e-10)
