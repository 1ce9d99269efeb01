"""Conjugate-gradient solvers for the SENSE normal equations, with and
without a ridge anchor term.

``cg_normal`` solves (E^H E + mu I) x = E^H y + mu z.  With ``tol=None``
the iteration count is fixed and the computation graph has constant depth,
which keeps the solve differentiable and exactly linear in (y, z) -- the
property the unrolled network and the perturbation-recovery identity rely
on.  A zero residual is handled without a data-dependent branch so that
autograd never sees 0/0.
"""

from __future__ import annotations

import torch

from .encoding import adjoint, forward
from .sampling import SamplingMask


def _vdot(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a.conj() * b).sum().real


def cg_normal(kspace: torch.Tensor, maps: torch.Tensor, mask: SamplingMask,
              mu: torch.Tensor | float = 0.0,
              anchor: torch.Tensor | None = None,
              iters: int = 15, tol: float | None = None,
              x0: torch.Tensor | None = None) -> torch.Tensor:
    """CG on the regularized normal equations.

    ``anchor`` is the ridge target z (required when mu > 0); ``x0`` defaults
    to E^H y.  ``tol`` (relative residual) enables early exit for standalone
    solves; training passes ``tol=None`` for a fixed-depth graph.
    """
    if iters < 1:
        raise ValueError("need at least one CG iteration")
    mu_t = torch.as_tensor(mu)
    use_mu = anchor is not None
    if (not use_mu) and float(mu_t) > 0:
        raise ValueError("mu > 0 requires an anchor image z")

    def apply_a(x):
        out = adjoint(forward(x, maps, mask), maps, mask)
        if use_mu:
            out = out + mu_t * x
        return out

    b = adjoint(kspace, maps, mask)
    if use_mu:
        b = b + mu_t * anchor
    x = x0 if x0 is not None else adjoint(kspace, maps, mask)
    b_norm = torch.linalg.vector_norm(b).item()

    r = b - apply_a(x)
    p = r
    rtr = _vdot(r, r)
    for it in range(iters):
        if tol is not None and b_norm > 0:
            if float(torch.sqrt(rtr)) / b_norm < tol:
                break
        ap = apply_a(p)
        pap = _vdot(p, ap)
        guard = (rtr == 0).to(rtr.dtype)
        alpha = rtr / (pap + guard)
        x = x + alpha * p
        r = r - alpha * ap
        rtr_new = _vdot(r, r)
        beta = rtr_new / (rtr + guard)
        p = r + beta * p
        rtr = rtr_new
        if not bool(torch.isfinite(rtr)):
            raise FloatingPointError(
                f"CG produced non-finite values at iteration {it}: "
                "the system is ill-posed for this mask/coil configuration")
    return x


def cg_sense(kspace: torch.Tensor, maps: torch.Tensor, mask: SamplingMask,
             iters: int = 50, tol: float | None = 1e-10) -> torch.Tensor:
    """Parallel-imaging reconstruction: least-squares unfolding solved by CG
    (the clinical reference the perturbation design must be recoverable by)."""
    return cg_normal(kspace, maps, mask, mu=0.0, anchor=None,
                     iters=iters, tol=tol)
