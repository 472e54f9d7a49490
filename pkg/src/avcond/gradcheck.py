"""Central finite-difference checks for analytic (autograd) gradients.

The sanctioned metric is a per-tensor relative L2 error:
``|fd - analytic| / max(|fd|, |analytic|, floor)``; a check passes when the
error stays below the tolerance for every parameter tensor.
"""

from __future__ import annotations

from typing import Callable, Iterable

import torch
from torch import Tensor, nn


def relative_error(a: Tensor, b: Tensor, floor: float = 1e-12) -> float:
    diff = torch.linalg.vector_norm(a - b).item()
    scale = max(
        torch.linalg.vector_norm(a).item(),
        torch.linalg.vector_norm(b).item(),
        floor,
    )
    return diff / scale


def finite_difference_grad(
    loss_fn: Callable[[], float], param: Tensor, eps: float = 1e-6
) -> Tensor:
    """Central differences of ``loss_fn`` w.r.t. every element of ``param``.

    ``loss_fn`` must re-run the forward pass reading the (perturbed) data of
    ``param``; it is called with gradients disabled.
    """
    grad = torch.zeros_like(param, dtype=torch.float64)
    flat = param.data.view(-1)
    grad_flat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            grad_flat[i] = (up - down) / (2.0 * h)
    return grad


def check_module_gradients(
    module: nn.Module,
    loss_fn: Callable[[], Tensor],
    eps: float = 1e-6,
    exclude: Iterable[str] = (),
) -> dict[str, float]:
    """Relative error between autograd and finite differences, per parameter.

    ``loss_fn`` builds the scalar loss from scratch on each call. Parameters
    whose autograd gradient is absent are treated as exactly zero.
    """
    excluded = set(exclude)
    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in module.named_parameters()
        if name not in excluded
    }

    def scalar() -> float:
        return float(loss_fn().item())

    report: dict[str, float] = {}
    for name, p in module.named_parameters():
        if name in excluded:
            continue
        fd = finite_difference_grad(scalar, p, eps=eps)
        report[name] = relative_error(fd, analytic[name])
    module.zero_grad(set_to_none=True)
    return report


def check_input_gradient(
    input_tensor: Tensor, loss_fn: Callable[[], Tensor], eps: float = 1e-6
) -> float:
    """Relative FD error for the gradient w.r.t. one input tensor."""
    if input_tensor.grad is not None:
        input_tensor.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = (
        input_tensor.grad.detach().clone()
        if input_tensor.grad is not None
        else torch.zeros_like(input_tensor)
    )

    def scalar() -> float:
        return float(loss_fn().item())

    fd = finite_difference_grad(scalar, input_tensor, eps=eps)
    input_tensor.grad = None
    return relative_error(fd, analytic)
