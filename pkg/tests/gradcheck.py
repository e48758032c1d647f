"""Central finite-difference gradient oracle shared by the test modules."""

import torch


def fd_gradcheck(fn, tensors, h: float = 1e-5, max_coords: int = 40, seed: int = 0) -> dict:
    """Compare autograd against five-point central differences of the scalar ``fn()``.

    The fourth-order stencil keeps truncation error negligible at a step small enough
    that the +-2h window rarely straddles a PReLU/ReLU kink.

    ``tensors`` maps a name to a float64 leaf tensor with requires_grad. Up to
    ``max_coords`` entries per tensor are probed (all of them for small tensors).
    Returns {name: relative error}.
    """
    for t in tensors.values():
        assert t.dtype == torch.float64, "finite-difference checks run in float64"
        t.grad = None
    out = fn()
    floor = 1e-6 * max(1.0, abs(out.item()))
    grads = torch.autograd.grad(out, list(tensors.values()), allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    errors = {}
    with torch.no_grad():
        for (name, t), g in zip(tensors.items(), grads):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            n = flat.numel()
            idx = torch.arange(n) if n <= max_coords else torch.randperm(n, generator=gen)[:max_coords]
            num = torch.empty(len(idx), dtype=t.dtype)
            for j, i in enumerate(idx.tolist()):
                orig = flat[i].item()
                vals = []
                for step in (2 * h, h, -h, -2 * h):
                    flat[i] = orig + step
                    vals.append(fn().item())
                flat[i] = orig
                num[j] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            ana = g.reshape(-1)[idx]
            # scale by the whole tensor's gradient so sampled near-zero entries do not dominate;
            # the floor, relative to |f|, keeps identically-zero gradients (softmax key biases)
            # from dividing roundoff noise by ~0
            scale = max(g.abs().max().item(), num.abs().max().item(), floor)
            errors[name] = (ana - num).abs().max().item() / scale
    return errors


def module_tensors(module, **inputs):
    tensors = {f"param:{k}": p for k, p in module.named_parameters()}
    tensors.update({f"input:{k}": v for k, v in inputs.items()})
    return tensors


def directional_check(fn, params, n_dirs: int = 3, h: float = 1e-4, seed: int = 0) -> float:
    """Worst relative mismatch between <grad, v> and the five-point derivative along v.

    Probes all parameters at once along random unit directions; cheap enough for
    whole-model checks.
    """
    params = list(params)
    grads = torch.autograd.grad(fn(), params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_dirs):
            dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
            norm = torch.sqrt(sum((d * d).sum() for d in dirs))
            dirs = [d / norm for d in dirs]
            analytic = sum((g * d).sum() for g, d in zip(grads, dirs)).item()
            vals = []
            for step in (2 * h, h, -h, -2 * h):
                for p, d in zip(params, dirs):
                    p.add_(step * d)
                vals.append(fn().item())
                for p, d in zip(params, dirs):
                    p.sub_(step * d)
            numeric = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    return worst
