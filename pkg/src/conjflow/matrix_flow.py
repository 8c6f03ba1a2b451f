"""Differentiable matrix exponentials and closed-form affine flows.

The exponential is a scaled truncated Taylor series composed entirely from
recorded autodiff ops, so gradients flow through it without a hand-written
backward rule.  Affine flows x' = Ax + b are evaluated through the
augmented (d+1)x(d+1) block matrix [[A, b], [0, 0]] acting on [x; 1].
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import DegenerateAnchorError

TAYLOR_ORDER = 12
SCALE_TARGET = 0.5


def expm(a):
    """e^A for a square matrix tensor, by scaling and squaring.

    The scaling exponent s is chosen so ||A||_F / 2^s <= 0.5; the scaled
    exponential uses a Taylor series of order 12 (truncation ~1e-13 at
    that norm) and is squared back s times.
    """
    a = a if isinstance(a, ad.Tensor) else ad.tensor(a)
    av = a.values
    if av.ndim != 2 or av.shape[0] != av.shape[1]:
        raise ad.DimensionError(f"expm: expects a square matrix, got shape {av.shape}")
    d = av.shape[0]
    norm = float(np.linalg.norm(av))
    s = max(0, math.ceil(math.log2(norm / SCALE_TARGET))) if norm > SCALE_TARGET else 0

    t = ad.smul(a, 0.5 ** s) if s else a
    eye = ad.tensor(np.eye(d))
    # Horner evaluation of I + T + T^2/2! + ... + T^12/12!
    acc = eye
    for k in range(TAYLOR_ORDER, 0, -1):
        acc = ad.add(eye, ad.smul(ad.matmul(t, acc), 1.0 / k))
    for _ in range(s):
        acc = ad.matmul(acc, acc)
    return acc


def skew_project(m):
    """(M - M^T) / 2, the skew-symmetric component; differentiable."""
    m = m if isinstance(m, ad.Tensor) else ad.tensor(m)
    if m.values.ndim != 2 or m.values.shape[0] != m.values.shape[1]:
        raise ad.DimensionError(f"skew_project: expects a square matrix, got {m.values.shape}")
    return ad.smul(ad.sub(m, ad.transpose(m)), 0.5)


class AffineFlow:
    """Trainable generator for the flow of x' = Ax + b.

    topology_mode "free" uses the raw parameter M as the generator;
    "skew" uses its skew-symmetric component, which confines the flow to
    the orthogonal group (purely oscillatory, norm-preserving dynamics).
    """

    MODES = ("free", "skew")

    def __init__(self, dim, topology_mode="free"):
        if topology_mode not in self.MODES:
            raise ValueError(f"unknown topology_mode {topology_mode!r}")
        self.dim = dim
        self.topology_mode = topology_mode
        self.M = ad.zeros_param(dim, dim)
        self.b = ad.zeros_param(dim, 1)

    def params(self):
        return [self.M, self.b]

    def generator(self):
        """Effective A as a tensor (skew-projected in skew mode)."""
        return self.M if self.topology_mode == "free" else skew_project(self.M)

    def generator_values(self):
        m = self.M.values
        return m if self.topology_mode == "free" else 0.5 * (m - m.T)

    def block_matrix(self):
        """Augmented [[A, b], [0, 0]] of shape (dim+1, dim+1)."""
        top = ad.concat([self.generator(), self.b], axis=1)
        bottom = ad.tensor(np.zeros((1, self.dim + 1)))
        return ad.concat([top, bottom], axis=0)

    def set_values(self, a_values, b_values):
        a_values = np.asarray(a_values, dtype=np.float64)
        if self.topology_mode == "skew":
            skew_defect = np.linalg.norm(a_values + a_values.T)
            if skew_defect > 1e-12 * max(1.0, np.linalg.norm(a_values)):
                raise ValueError("skew mode requires a skew-symmetric generator")
        self.M.values[:] = a_values
        self.b.values[:] = np.asarray(b_values, dtype=np.float64).reshape(self.dim, 1)


def affine_flow_eval(flow, t, y0):
    """State of x' = Ax + b after time t from y0, via the augmented matrix.

    Equals the integral form expm(At) y0 + int_0^t expm(As) b ds.  Returns
    a tensor of shape (d,); differentiable w.r.t. the flow parameters.
    """
    y0 = y0 if isinstance(y0, ad.Tensor) else ad.tensor(np.asarray(y0, dtype=np.float64))
    d = flow.dim
    if y0.values.shape != (d,):
        raise ad.DimensionError(f"affine_flow_eval: y0 must have shape ({d},), got {y0.values.shape}")
    block = flow.block_matrix()
    aug = ad.concat([y0, ad.tensor([1.0])], axis=0)
    out = ad.matmul(expm(ad.smul(block, float(t))), aug)
    return ad.tslice(out, 0, 0, d)


def init_constrained_linearization(j0, x0, f0):
    """Closest matrix to J0 (Frobenius) with A x0 = f0 exactly.

    A = J0 + (f0 - J0 x0) x0^T / ||x0||^2.  Plain numpy; used at
    initialization time only.
    """
    j0 = np.asarray(j0, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    nrm2 = float(x0 @ x0)
    if nrm2 == 0.0:
        raise DegenerateAnchorError("constrained linearization needs a nonzero anchor x0")
    residual = f0 - j0 @ x0
    return j0 + np.outer(residual, x0) / nrm2


def init_skew_fallback(j0, x0, f0):
    """Skew generator plus offset matching the dynamics at the anchor.

    Takes the skew part of the constrained linearization (of J0 itself
    when x0 = 0) and supplements b = f0 - A x0, so A x0 + b = f0 exactly
    and every eigenvalue of A is purely imaginary.
    """
    j0 = np.asarray(j0, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    base = j0 if float(x0 @ x0) == 0.0 else init_constrained_linearization(j0, x0, f0)
    a = 0.5 * (base - base.T)
    b = f0 - a @ x0
    return a, b
