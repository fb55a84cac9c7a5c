"""Shared test utilities: central finite-difference gradient checking."""

import numpy as np

from tscl.nn.tensor import Tensor


def fd_check(build_loss, tensors, eps=1e-6, tol=1e-6, max_elems=80, seed=0):
    """Compare backward() gradients with central finite differences.

    build_loss must be a deterministic closure re-running the forward pass
    from the current parameter values. Checks every element of each tensor
    up to max_elems (random subset beyond that). Returns the worst
    relative error; asserts it is within tol.
    """
    gen = np.random.default_rng(seed)
    loss = build_loss()
    for p in tensors:
        p.grad = None
    loss.backward()
    grads = [None if p.grad is None else p.grad.copy() for p in tensors]
    worst = 0.0
    for p, g in zip(tensors, grads):
        assert g is not None, "parameter received no gradient"
        flat = p.data.ravel()
        if flat.size <= max_elems:
            idxs = range(flat.size)
        else:
            idxs = gen.choice(flat.size, max_elems, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss().data)
            flat[i] = orig - eps
            down = float(build_loss().data)
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = g.ravel()[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1.0)
            worst = max(worst, rel)
    assert worst <= tol, f"finite-difference mismatch: {worst:.3e} > {tol:.0e}"
    return worst


def param_tensors(named):
    return [p for _, p in named]


def rand_tensor(gen, shape, requires_grad=True):
    return Tensor(gen.standard_normal(shape), requires_grad=requires_grad)
