"""Smooth quantizer primitives and their first derivatives.

All functions accept scalars or numpy arrays and broadcast elementwise,
except :func:`gamma_eps` and the activation quantizer, which act on the last
axis (one vector per row).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from smoothbit.errors import DomainError

CLIP_VARIANTS = ("logistic", "interior")

# Half-width of the quadrature window in units of eps. Outside it the kernel
# mass is at most 2 * int_{20 eps}^inf (4/eps) e^{-2z/eps} dz = 4 e^{-40}.
QUAD_HALF_WIDTH = 20.0
TAIL_MASS = 4.0 * np.exp(-2.0 * QUAD_HALF_WIDTH)


@dataclass(frozen=True)
class SmoothingParams:
    """Fixed surrogate parameters shared by every layer.

    Parameters
    ----------
    epsilon : float
        Smoothing scale in (0, 1].
    bits : int
        Activation bit width ``b``; the activation range is ``q_b = 2**(b-1)``.
    delta : float
        Margin in (0, 1) keeping quantized activations inside the range.
    clip_variant : str
        ``"logistic"`` uses the logistic clip ``a + (b-a) * sigmoid((x-a)/eps)``;
        ``"interior"`` uses a softplus min/max composition that tends to the
        hard clip as eps -> 0.
    """

    epsilon: float
    bits: int = 2
    delta: float = 0.5
    clip_variant: str = "logistic"
    q_b: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and 0.0 < self.epsilon <= 1.0):
            raise DomainError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")
        if int(self.bits) != self.bits or self.bits < 1:
            raise DomainError(f"bits must be a positive integer, got {self.bits!r}")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta!r}")
        if self.clip_variant not in CLIP_VARIANTS:
            raise DomainError(f"unknown clip variant {self.clip_variant!r}")
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "q_b", float(2 ** (self.bits - 1)))
        if self.q_b - self.delta <= 0.0:
            raise DomainError("q_b - delta must be positive")

    @property
    def lower(self) -> float:
        return -self.q_b + self.delta

    @property
    def upper(self) -> float:
        return self.q_b - self.delta

    def with_epsilon(self, epsilon: float) -> "SmoothingParams":
        return SmoothingParams(epsilon, self.bits, self.delta, self.clip_variant)


def _check_eps(eps):
    if not (np.isfinite(eps) and eps > 0):
        raise DomainError(f"eps must be positive and finite, got {eps!r}")


def _check_finite(z, name="z"):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError(f"{name} must be finite")
    return z


def _scalar_or_array(out):
    return out.item() if out.ndim == 0 else out


def smooth_sign(z, eps):
    """tanh(z / eps)."""
    _check_eps(eps)
    z = _check_finite(z)
    return _scalar_or_array(np.tanh(z / eps))


def smooth_sign_deriv(z, eps):
    """(1/eps) * sech^2(z/eps), evaluated without overflow.

    Uses sech^2(u) = 4 e^{-2|u|} / (1 + e^{-2|u|})^2.
    """
    _check_eps(eps)
    z = _check_finite(z)
    e = np.exp(-2.0 * np.abs(z) / eps)
    return _scalar_or_array(4.0 * e / (1.0 + e) ** 2 / eps)


def smooth_abs(z, eps):
    """sqrt(z^2 + eps^2)."""
    _check_eps(eps)
    z = _check_finite(z)
    return _scalar_or_array(np.hypot(z, eps))


def smooth_abs_deriv(z, eps):
    _check_eps(eps)
    z = _check_finite(z)
    return _scalar_or_array(z / np.hypot(z, eps))


def _check_interval(a, b):
    if not a < b:
        raise DomainError(f"clip interval requires a < b, got a={a!r}, b={b!r}")


def smooth_clip(x, a, b, eps):
    """a + (b - a) * sigmoid((x - a) / eps).

    The logistic is evaluated with ``scipy.special.expit``, which saturates
    cleanly for arguments far beyond the float exponent range.
    """
    _check_eps(eps)
    _check_interval(a, b)
    x = _check_finite(x, "x")
    return _scalar_or_array(a + (b - a) * special.expit((x - a) / eps))


def smooth_clip_deriv(x, a, b, eps):
    _check_eps(eps)
    _check_interval(a, b)
    x = _check_finite(x, "x")
    u = (x - a) / eps
    return _scalar_or_array((b - a) * special.expit(u) * special.expit(-u) / eps)


def _softplus(u):
    return np.logaddexp(0.0, u)


def interior_clip(x, a, b, eps):
    """Softplus smooth-max(a, smooth-min(x, b)).

    Converges to the hard clip onto [a, b] as eps -> 0, unlike
    :func:`smooth_clip`, which tends to a step at ``a``.
    """
    _check_eps(eps)
    _check_interval(a, b)
    x = _check_finite(x, "x")
    upper = b - eps * _softplus((b - x) / eps)
    return _scalar_or_array(a + eps * _softplus((upper - a) / eps))


def interior_clip_deriv(x, a, b, eps):
    _check_eps(eps)
    _check_interval(a, b)
    x = _check_finite(x, "x")
    upper = b - eps * _softplus((b - x) / eps)
    return _scalar_or_array(
        special.expit((upper - a) / eps) * special.expit((b - x) / eps)
    )


def _clip_pair(variant):
    if variant == "logistic":
        return smooth_clip, smooth_clip_deriv
    return interior_clip, interior_clip_deriv


def gamma_eps(x, eps):
    """max(eps, ||x||_inf) along the last axis."""
    _check_eps(eps)
    x = _check_finite(x, "x")
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DomainError("gamma_eps needs a non-empty vector")
    return _scalar_or_array(np.maximum(eps, np.max(np.abs(x), axis=-1)))


def _scaled_input(x, p):
    gamma = np.maximum(p.epsilon, np.max(np.abs(x), axis=-1, keepdims=True))
    return x * (p.q_b / gamma), gamma


def quant_activation(x, p: SmoothingParams):
    """Smooth absmax activation quantizer applied to each row of ``x``.

    Every output component lies strictly inside ``(-q_b + delta, q_b - delta)``.
    """
    x = _check_finite(x, "x")
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DomainError("quant_activation needs a non-empty vector")
    clip, _ = _clip_pair(p.clip_variant)
    u, _ = _scaled_input(x, p)
    return clip(u, p.lower, p.upper, p.epsilon)


def quant_activation_vjp(x, grad_out, p: SmoothingParams):
    """Pull ``grad_out`` back through :func:`quant_activation` at ``x``.

    gamma_eps takes its max-norm branch when ||x||_inf >= eps (ties in the
    argmax go to the lowest index) and its constant branch otherwise.
    """
    x = np.asarray(x, dtype=float)
    grad_out = np.asarray(grad_out, dtype=float)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_out)
    _, dclip = _clip_pair(p.clip_variant)
    u, gamma = _scaled_input(x2, p)
    g = g2 * dclip(u, p.lower, p.upper, p.epsilon)
    dx = p.q_b * g / gamma
    absx = np.abs(x2)
    active = absx.max(axis=-1) >= p.epsilon
    if np.any(active):
        rows = np.nonzero(active)[0]
        k = np.argmax(absx[rows], axis=-1)
        xk = x2[rows, k]
        corr = p.q_b * np.sum(g[rows] * x2[rows], axis=-1) / gamma[rows, 0] ** 2
        dx[rows, k] -= corr * np.sign(xk)
    return dx[0] if squeeze else dx


def quant_activation_jacobian(x, p: SmoothingParams):
    """Dense Jacobian of :func:`quant_activation` for a single vector."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    # row i of the identity pulled back gives row i of the Jacobian
    return quant_activation_vjp(np.broadcast_to(x, (m, m)), np.eye(m), p)


def sign_deriv_integral(phi, eps, *, points=None):
    """Integrate ``phi(z) * smooth_sign_deriv(z, eps)`` over the real line.

    Adaptive Gauss-Kronrod quadrature on [-20 eps, 20 eps]. The discarded
    tails carry kernel mass at most ``TAIL_MASS``, so the true integral is
    within ``sup|phi| * TAIL_MASS`` of the windowed value.

    Returns
    -------
    value : float
    quad_error : float
        The quadrature error estimate on the window (tail excluded).
    """
    _check_eps(eps)
    half = QUAD_HALF_WIDTH * eps
    brk = {0.0} if points is None else {0.0, *points}
    brk = sorted(b for b in brk if -half < b < half)

    def integrand(z):
        return phi(z) * smooth_sign_deriv(z, eps)

    value, err = integrate.quad(
        integrand, -half, half, points=brk, limit=400, epsabs=1e-14, epsrel=1e-13
    )
    return value, err
