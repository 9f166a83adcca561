"""Central finite-difference gradient oracle shared by the test modules."""

import numpy as np

from intnav import nn

FD_H = 1e-4
FD_RTOL = 1e-4


def fd_grad(loss_fn, param: nn.Tensor, h: float = FD_H) -> np.ndarray:
    """Central differences of a scalar loss w.r.t. every entry of param."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = float(loss_fn().data)
        flat[i] = orig - h
        lm = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * h)
    return out


def assert_grad_close(loss_fn, param: nn.Tensor, rtol: float = FD_RTOL) -> None:
    """Compare autodiff grad against the finite-difference oracle.

    The denominator floor keeps near-zero gradients from amplifying FD
    noise into spurious relative errors.
    """
    loss = loss_fn()
    for p in _walk_params(loss):
        p.grad = None
    nn.backward(loss)
    got = param.grad if param.grad is not None else np.zeros_like(param.data)
    want = fd_grad(loss_fn, param)
    denom = np.maximum(np.maximum(np.abs(want), np.abs(got)), 1e-3)
    rel = np.abs(got - want) / denom
    assert rel.max() <= rtol, f"max rel grad error {rel.max():.3e} (tol {rtol})"


def _walk_params(t: nn.Tensor):
    seen = set()
    stack = [t]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(node._parents)
