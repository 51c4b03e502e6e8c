"""Shared test helpers: finite differences and dense attention oracles."""

import numpy as np
import torch


def dense_attention(q, k, v):
    """Straight-line softmax attention on numpy arrays [n_q,c],[n_k,c],[n_k,c]."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = np.array([float(q[i] @ k[j]) for j in range(k.shape[0])])
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        for j in range(k.shape[0]):
            out[i] += weights[j] * v[j]
    return out


def dense_mask_attention(mask, q, k, v):
    """Masked variant; rows with no live key produce zeros."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        live = [j for j in range(k.shape[0]) if np.isfinite(mask[i, j])]
        if not live:
            continue
        logits = np.array([float(q[i] @ k[j]) + mask[i, j] for j in live])
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        for w, j in zip(weights, live):
            out[i] += w * v[j]
    return out


def fd_gradient(fn, tensor, indices, eps=1e-6):
    """Central finite differences of a scalar fn at selected flat indices."""
    grads = []
    flat = tensor.detach().reshape(-1)
    with torch.no_grad():
        for idx in indices:
            orig = flat[idx].item()
            flat[idx] = orig + eps
            hi = float(fn())
            flat[idx] = orig - eps
            lo = float(fn())
            flat[idx] = orig
            grads.append((hi - lo) / (2 * eps))
    return np.array(grads)


def autograd_gradient(fn, tensor, indices):
    tensor.grad = None
    value = fn()
    value.backward()
    flat = tensor.grad.reshape(-1)
    return np.array([float(flat[i]) for i in indices])


def check_gradients(fn, tensor, n_indices=8, eps=1e-6, rtol=1e-3, rng=None):
    """Compare autograd against central differences on a small index slice.

    Returns the max-norm relative error; asserts it is below ``rtol``.
    """
    rng = rng or np.random.default_rng(0)
    total = tensor.numel()
    indices = rng.choice(total, size=min(n_indices, total), replace=False)
    an = autograd_gradient(fn, tensor, indices)
    fd = fd_gradient(fn, tensor, indices, eps=eps)
    scale = max(np.abs(fd).max(), np.abs(an).max(), 1e-10)
    rel = np.abs(an - fd).max() / scale
    assert rel < rtol, f"gradient mismatch: rel err {rel:.3e}\nautograd {an}\nfd {fd}"
    return rel
