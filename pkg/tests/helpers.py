"""Independent oracles shared by the unit and acceptance tests."""
import numpy as np
import torch
from scipy.optimize import linprog


def fd_relative_error(fn, x, eps=1e-4):
    """Relative error between autograd and central differences of scalar ``fn`` at ``x`` (float64)."""
    x = x.detach().double().clone().requires_grad_(True)
    fn(x).backward()
    auto = x.grad.detach().clone()
    num = torch.zeros_like(x)
    flat, nflat = x.detach().view(-1), num.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + eps
            hi = fn(x).item()
            flat[i] = old - eps
            lo = fn(x).item()
            flat[i] = old
            nflat[i] = (hi - lo) / (2 * eps)
    scale = max(auto.norm().item(), num.norm().item(), 1e-12)
    return (auto - num).norm().item() / scale


def emd_lp(p, q):
    """Earth mover's distance between two histograms on unit-spaced bins, solved as a transport LP."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    n = len(p)
    cost = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]).ravel()
    a_eq = np.zeros((2 * n, n * n))
    for i in range(n):
        a_eq[i, i * n:(i + 1) * n] = 1.0
        a_eq[n + i, i::n] = 1.0
    res = linprog(cost, A_eq=a_eq, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs")
    return float(res.fun)


def npss_oracle(gt, pred):
    """NPSS from its definition, using the LP transport distance per feature.

    ``gt`` and ``pred`` are ``(T, F)``. Spectra drop the DC bin, are normalized
    per feature and the distances are averaged with the ground-truth power as
    weight.
    """
    pg = np.abs(np.fft.rfft(gt, axis=0))[1:] ** 2
    pp = np.abs(np.fft.rfft(pred, axis=0))[1:] ** 2
    tg, tp = pg.sum(0), pp.sum(0)
    dists = []
    for f in range(gt.shape[1]):
        if tg[f] <= 0:
            dists.append(0.0)
        else:
            dists.append(emd_lp(pg[:, f] / tg[f], pp[:, f] / tp[f]))
    return float(np.sum(np.array(dists) * tg) / tg.sum())


def directional_fd_error(module, loss_fn, n_dirs=5, eps=1e-4, seed=0):
    """Worst relative error of autograd vs central differences of ``loss_fn()`` along random parameter directions."""
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss_fn().backward()
    grads = [p.grad.detach().clone() for p in params]
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
        norm = torch.sqrt(sum((d ** 2).sum() for d in dirs))
        dirs = [d / norm for d in dirs]
        auto = sum((g * d).sum() for g, d in zip(grads, dirs)).item()
        with torch.no_grad():
            for p, d in zip(params, dirs):
                p.add_(eps * d)
            hi = loss_fn().item()
            for p, d in zip(params, dirs):
                p.sub_(2 * eps * d)
            lo = loss_fn().item()
            for p, d in zip(params, dirs):
                p.add_(eps * d)
        num = (hi - lo) / (2 * eps)
        worst = max(worst, abs(auto - num) / max(abs(auto), abs(num), 1e-12))
    return worst
