"""Cost models and reference forwards for lightweight CNN building blocks.

Everything here is plain float64 numpy: these blocks are analysed and
sanity-checked, not trained, so no gradient bookkeeping is attached.
Convolutions use stride 1 and zero padding that preserves the spatial side,
with the feature map laid out as ``[H, W, channels]``.

``conv2d_forward`` counts every scalar multiply it performs while sliding, so
the closed-form multiply-accumulate (MAC) costs can be checked against an
actual execution rather than against themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import _sigmoid_values

CONV_MODES = ("standard", "depthwise", "pointwise", "grouped")

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class ConvSpec:
    """One convolution layer: kernel side, channel counts, spatial side, grouping.

    ``groups`` partitions the channels: 1 is a dense (standard) convolution,
    ``m`` with ``n == m`` is depthwise.  ``pointwise`` is the 1x1 special case.
    """

    dk: int
    m: int
    n: int
    df: int
    groups: int = 1
    mode: str = "standard"

    def __post_init__(self):
        for name in ("dk", "m", "n", "df", "groups"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise DomainError(f"ConvSpec.{name} must be a positive integer, got {v!r}")
        if self.mode not in CONV_MODES:
            raise DomainError(f"ConvSpec.mode must be one of {CONV_MODES}, got {self.mode!r}")
        if self.m % self.groups or self.n % self.groups:
            raise ShapeError(
                f"groups={self.groups} must divide both m={self.m} and n={self.n}"
            )
        if self.mode == "standard" and self.groups != 1:
            raise DomainError("standard convolutions use groups=1")
        if self.mode == "pointwise" and (self.dk != 1 or self.groups != 1):
            raise DomainError("pointwise means dk=1 and groups=1")
        if self.mode == "depthwise" and not (self.groups == self.m == self.n):
            raise DomainError("depthwise means groups == m == n")


def _checked(count: int, what: str) -> int:
    if count > _U64_MAX:
        raise OverflowError(f"{what} MAC count {count} exceeds the unsigned 64-bit range")
    return count


def cost_standard(spec: ConvSpec) -> int:
    """MACs of a dense convolution: dk^2 * m * n * df^2."""
    if spec.mode != "standard":
        raise DomainError(f"cost_standard needs mode='standard', got {spec.mode!r}")
    return _checked(spec.dk * spec.dk * spec.m * spec.n * spec.df * spec.df, "standard")


def cost_depthwise_separable(spec: ConvSpec) -> tuple[int, int, int]:
    """MACs of the depthwise + pointwise factorisation of ``spec``.

    Returns ``(depthwise, pointwise, total)`` where the depthwise pass costs
    df^2 * m * dk^2 and the 1x1 pointwise pass costs df^2 * m * n.
    """
    dw = spec.df * spec.df * spec.m * spec.dk * spec.dk
    pw = spec.df * spec.df * spec.m * spec.n
    return _checked(dw, "depthwise"), _checked(pw, "pointwise"), _checked(dw + pw, "separable")


def separable_ratio(spec: ConvSpec) -> float:
    """Separable total over dense cost; algebraically 1/n + 1/dk^2."""
    _, _, total = cost_depthwise_separable(spec)
    dense = spec.dk * spec.dk * spec.m * spec.n * spec.df * spec.df
    return total / dense


def cost_grouped(spec: ConvSpec) -> int:
    """MACs of a grouped convolution: the dense cost divided by ``groups``."""
    dense = spec.dk * spec.dk * spec.m * spec.n * spec.df * spec.df
    return _checked(dense // spec.groups, "grouped")


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, spec: ConvSpec) -> tuple[np.ndarray, int]:
    """Slide ``kernels`` over ``x`` with stride 1 and same-size zero padding.

    ``x`` is ``[df, df, m]``; ``kernels`` is ``[dk, dk, m/groups, n]`` where
    output channel ``k`` reads the input channels of group ``k // (n/groups)``.
    Returns the ``[df, df, n]`` output and the exact number of scalar
    multiplies performed (zero-padded positions included).
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    g = spec.groups
    cin_g = spec.m // g
    cout_g = spec.n // g
    if x.shape != (spec.df, spec.df, spec.m):
        raise ShapeError(f"input shape {x.shape} does not match spec {(spec.df, spec.df, spec.m)}")
    if kernels.shape != (spec.dk, spec.dk, cin_g, spec.n):
        raise ShapeError(
            f"kernel shape {kernels.shape} does not match spec "
            f"{(spec.dk, spec.dk, cin_g, spec.n)}"
        )
    before = (spec.dk - 1) // 2
    after = spec.dk - 1 - before
    padded = np.pad(x, ((before, after), (before, after), (0, 0)))
    out = np.zeros((spec.df, spec.df, spec.n))
    macs = 0
    for i in range(spec.df):
        for j in range(spec.df):
            patch = padded[i : i + spec.dk, j : j + spec.dk, :]
            for gi in range(g):
                sub = patch[:, :, gi * cin_g : (gi + 1) * cin_g]
                kers = kernels[:, :, :, gi * cout_g : (gi + 1) * cout_g]
                out[i, j, gi * cout_g : (gi + 1) * cout_g] = np.tensordot(sub, kers, axes=3)
                macs += sub.size * cout_g
    return out, macs


def depthwise_separable_forward(
    x: np.ndarray, dw_kernels: np.ndarray, pw_kernels: np.ndarray, spec: ConvSpec
) -> tuple[np.ndarray, int]:
    """Depthwise pass followed by a 1x1 pointwise pass; returns output and total MACs."""
    dw_spec = ConvSpec(spec.dk, spec.m, spec.m, spec.df, groups=spec.m, mode="depthwise")
    mid, dw_macs = conv2d_forward(x, dw_kernels, dw_spec)
    pw_spec = ConvSpec(1, spec.m, spec.n, spec.df, mode="pointwise")
    out, pw_macs = conv2d_forward(mid, pw_kernels, pw_spec)
    return out, dw_macs + pw_macs


def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """Mix channels across groups: output group i, slot j reads group (i+j) mod groups, slot j."""
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[-1]
    if groups < 1 or c % groups:
        raise ShapeError(f"groups={groups} must be positive and divide the {c} channels")
    per = c // groups
    perm = np.empty(c, dtype=np.int64)
    for i in range(groups):
        for j in range(per):
            perm[i * per + j] = ((i + j) % groups) * per + j
    return x[..., perm]


def channel_means(x: np.ndarray) -> np.ndarray:
    """Spatial mean of each channel: the squeeze step of the SE block."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected [H, W, C], got shape {x.shape}")
    return x.mean(axis=(0, 1))


def se_block(x: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Squeeze-and-excitation: rescale each channel by a learned gate.

    The per-channel means pass through a bottleneck ``w1: [C, C/r]`` with relu,
    then ``w2: [C/r, C]`` with sigmoid, and the result multiplies the channels.
    """
    x = np.asarray(x, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    c = x.shape[-1]
    if x.ndim != 3 or w1.ndim != 2 or w1.shape[0] != c:
        raise ShapeError(f"w1 shape {w1.shape} does not match {c} input channels")
    reduced = w1.shape[1]
    if c % reduced:
        raise ShapeError(f"reduction width {reduced} must divide the {c} channels")
    if w2.shape != (reduced, c):
        raise ShapeError(f"w2 shape {w2.shape} must be {(reduced, c)}")
    z = channel_means(x)
    hidden = np.maximum(z @ w1, 0.0)
    gates = _sigmoid_values(hidden @ w2)
    return x * gates[None, None, :]


@dataclass(frozen=True)
class InvertedResidualParams:
    """Weights for expand (1x1), depthwise (3x3), and linear project (1x1) stages."""

    w_expand: np.ndarray
    b_expand: np.ndarray
    w_dw: np.ndarray
    w_project: np.ndarray
    b_project: np.ndarray


def make_inverted_residual_params(
    c: int, t: int, rng: np.random.Generator | None = None
) -> InvertedResidualParams:
    """Build parameter arrays for ``inverted_residual``; zeros unless ``rng`` is given."""
    if t < 1:
        raise DomainError(f"expansion factor t must be >= 1, got {t}")
    tc = t * c
    if rng is None:
        draw = lambda *shape: np.zeros(shape)
    else:
        draw = lambda *shape: rng.standard_normal(shape) * 0.5
    return InvertedResidualParams(
        w_expand=draw(1, 1, c, tc),
        b_expand=draw(tc),
        w_dw=draw(3, 3, tc),
        w_project=draw(1, 1, tc, c),
        b_project=draw(c),
    )


def inverted_residual(x: np.ndarray, params: InvertedResidualParams, t: int) -> np.ndarray:
    """Expand with relu, filter depthwise 3x3, project linearly, add the input back."""
    x = np.asarray(x, dtype=np.float64)
    if t < 1:
        raise DomainError(f"expansion factor t must be >= 1, got {t}")
    if x.ndim != 3:
        raise ShapeError(f"expected [H, W, C], got shape {x.shape}")
    h, w, c = x.shape
    if min(h, w) < 3:
        raise ShapeError(f"spatial side must be >= 3 for the 3x3 depthwise stage, got {h}x{w}")
    tc = t * c
    if params.w_expand.shape != (1, 1, c, tc) or params.b_expand.shape != (tc,):
        raise ShapeError(f"expand weights do not match c={c}, t={t}")
    if params.w_dw.shape != (3, 3, tc):
        raise ShapeError(f"depthwise kernel must be (3, 3, {tc}), got {params.w_dw.shape}")
    if params.w_project.shape != (1, 1, tc, c) or params.b_project.shape != (c,):
        raise ShapeError(f"project weights do not match c={c}, t={t}")

    expanded = np.maximum(np.einsum("hwc,ck->hwk", x, params.w_expand[0, 0]) + params.b_expand, 0.0)
    padded = np.pad(expanded, ((1, 1), (1, 1), (0, 0)))
    filtered = np.zeros_like(expanded)
    for di in range(3):
        for dj in range(3):
            filtered += padded[di : di + h, dj : dj + w, :] * params.w_dw[di, dj][None, None, :]
    projected = np.einsum("hwk,kc->hwc", filtered, params.w_project[0, 0]) + params.b_project
    return x + projected


@dataclass(frozen=True)
class ScalingSpec:
    """Base depth/width/resolution plus per-axis rates and a shared exponent."""

    d0: float
    w0: float
    r0: float
    alpha: float
    beta: float
    gamma: float
    phi: float
    budget: float = 2.0

    def __post_init__(self):
        for name in ("d0", "w0", "r0"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"ScalingSpec.{name} must be positive")
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 1.0:
                raise DomainError(f"ScalingSpec.{name} must be >= 1")
        if self.phi < 0.0:
            raise DomainError("ScalingSpec.phi must be >= 0")


class CompoundScaling(NamedTuple):
    depth: float
    width: float
    resolution: float
    flops_factor: float
    constraint_residual: float


def compound_scale(spec: ScalingSpec) -> CompoundScaling:
    """Scale depth, width, and resolution together by one exponent.

    Depth grows as alpha^phi, width as beta^phi, resolution as gamma^phi; the
    FLOPs multiplier is (alpha * beta^2 * gamma^2)^phi, and the residual says
    how far the rates stray from the configured FLOPs budget per unit phi.
    """
    combined = spec.alpha * spec.beta**2 * spec.gamma**2
    return CompoundScaling(
        depth=spec.d0 * spec.alpha**spec.phi,
        width=spec.w0 * spec.beta**spec.phi,
        resolution=spec.r0 * spec.gamma**spec.phi,
        flops_factor=combined**spec.phi,
        constraint_residual=combined - spec.budget,
    )
