"""Stretched hard-concrete weight masks.

A mask unit is a rectangular tile of a weight matrix (granularity
(n_r, n_c) rows/columns per mask). Each unit i has a location parameter
theta_i controlling a random gate z_i in [0, 1]:

    u ~ Unif(delta, 1 - delta)
    s = sigmoid((logit(u) + theta) / beta)
    z = clamp(s * (zeta - gamma) + gamma, 0, 1)

The stretch past [0, 1] puts point mass on exactly 0 and exactly 1. The
expected-L0 penalty is the mean probability that a unit is non-zero,
sigmoid(theta - beta * log(-gamma / zeta)), averaged over units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .rng import RngState

__all__ = [
    "MaskConfig",
    "GranularitySpec",
    "GroupBlock",
    "MaskParams",
    "MaskSample",
    "build_groups",
    "init_theta",
    "sample_mask",
    "deterministic_mask",
    "expected_l0",
    "lambda_schedule",
    "apply_mask",
]

U_CLIP = 1e-6  # uniform draws live in (U_CLIP, 1 - U_CLIP) so logit(u) is finite


@dataclass(frozen=True)
class MaskConfig:
    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"temperature beta must be positive, got {self.beta}")
        if not (self.gamma < 0 < 1 < self.zeta):
            raise ValueError(
                f"stretch must satisfy gamma < 0 < 1 < zeta, got ({self.gamma}, {self.zeta})"
            )

    @property
    def log_ratio(self) -> float:
        """beta * log(-gamma / zeta), the shift inside the L0 penalty."""
        return self.beta * math.log(-self.gamma / self.zeta)


@dataclass(frozen=True)
class GranularitySpec:
    """Rows/columns per mask unit. n_r or n_c of None means "the full
    matrix dimension", so one spec applies to matrices of mixed shapes."""

    name: str
    n_r: int | None
    n_c: int | None

    @classmethod
    def preset(cls, name: str) -> "GranularitySpec":
        if name == "matrix":
            return cls("matrix", None, None)
        if name == "neuron":
            return cls("neuron", None, 1)
        if name == "weight":
            return cls("weight", 1, 1)
        if "x" in name:
            r, c = name.split("x", 1)
            try:
                return cls(name, int(r), int(c))
            except ValueError:
                pass
        raise ValueError(
            f"unknown granularity {name!r} (use matrix / neuron / weight / RxC)"
        )

    def resolve(self, shape: tuple[int, int]) -> tuple[int, int]:
        rows, cols = shape
        n_r = rows if self.n_r is None else min(self.n_r, rows)
        n_c = cols if self.n_c is None else min(self.n_c, cols)
        return n_r, n_c


@dataclass(frozen=True)
class GroupBlock:
    """Where one matrix's mask units live in the flat theta vector."""

    offset: int
    r_tiles: int
    c_tiles: int
    n_r: int
    n_c: int

    @property
    def count(self) -> int:
        return self.r_tiles * self.c_tiles


@dataclass
class MaskParams:
    """Flat location vector plus the matrix -> theta-range mapping."""

    theta: Parameter
    group_map: dict[str, GroupBlock]
    granularity: GranularitySpec

    @property
    def n_groups(self) -> int:
        return self.theta.data.shape[0]

    def group_index(self, name: str, row: int, col: int) -> int:
        """Flat group index of one weight coordinate."""
        b = self.group_map[name]
        return b.offset + (row // b.n_r) * b.c_tiles + (col // b.n_c)


@dataclass
class MaskSample:
    """A realized mask aligned with theta; u is None for the deterministic
    evaluation mask."""

    z: Tensor
    u: np.ndarray | None = None


def build_groups(matrix_shapes: list[tuple[str, tuple[int, int]]],
                 spec: GranularitySpec) -> tuple[dict[str, GroupBlock], int]:
    """Tile every registered matrix, in registry order, into contiguous
    mask units. Raises if a tiling does not divide a matrix evenly."""
    group_map: dict[str, GroupBlock] = {}
    offset = 0
    for name, (rows, cols) in matrix_shapes:
        n_r, n_c = spec.resolve((rows, cols))
        if rows % n_r or cols % n_c:
            raise ValueError(
                f"granularity {spec.name!r} = ({n_r}, {n_c}) does not divide "
                f"matrix {name!r} of shape ({rows}, {cols})"
            )
        block = GroupBlock(offset, rows // n_r, cols // n_c, n_r, n_c)
        group_map[name] = block
        offset += block.count
    return group_map, offset


def init_theta(matrix_shapes, spec: GranularitySpec,
               value: float = 2.5) -> MaskParams:
    """MaskParams with every unit biased open (deterministic mask starts
    at exactly 1 for value >= beta*log(11) under the default stretch)."""
    group_map, n = build_groups(matrix_shapes, spec)
    theta = Parameter(np.full(n, float(value)), name="mask_theta")
    return MaskParams(theta, group_map, spec)


def sample_mask(theta: Tensor, config: MaskConfig, rng: RngState | None = None,
                u: np.ndarray | None = None) -> MaskSample:
    """Draw one stochastic mask; differentiable w.r.t. theta.

    Pass `u` to reuse a fixed uniform draw (finite-difference checks);
    otherwise `rng` supplies u ~ Unif(U_CLIP, 1 - U_CLIP).
    """
    if u is None:
        if rng is None:
            raise ValueError("sample_mask needs an RngState when u is not given")
        u = U_CLIP + (1.0 - 2.0 * U_CLIP) * rng.uniform(theta.data.shape)
    logit_u = np.log(u) - np.log1p(-u)
    s = ad.sigmoid(ad.mul(ad.add(theta, logit_u), 1.0 / config.beta))
    z = ad.clamp(ad.add(ad.mul(s, config.zeta - config.gamma), config.gamma), 0.0, 1.0)
    return MaskSample(z=z, u=u)


def deterministic_mask(theta: Tensor, config: MaskConfig) -> MaskSample:
    """Median plug-in mask (u = 0.5): used for all reported evaluation
    metrics. Values stay continuous in [0, 1]; a unit counts as unmasked
    for sparsity accounting iff its value is > 0."""
    s = ad.sigmoid(ad.mul(theta, 1.0 / config.beta))
    z = ad.clamp(ad.add(ad.mul(s, config.zeta - config.gamma), config.gamma), 0.0, 1.0)
    return MaskSample(z=z, u=None)


def expected_l0(theta: Tensor, config: MaskConfig) -> Tensor:
    """Mean over units of P(Z_i > 0); the sparsity penalty."""
    return ad.tmean(ad.sigmoid(ad.add(theta, -config.log_ratio)))


def lambda_schedule(progress: float, lambda_max: float) -> float:
    """Penalty weight: 0 for the first quarter of training, linear up to
    lambda_max over the middle half, then flat."""
    if lambda_max < 0:
        raise ValueError(f"lambda_max must be non-negative, got {lambda_max}")
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    if progress <= 0.25:
        return 0.0
    if progress >= 0.75:
        return float(lambda_max)
    return float(lambda_max) * (progress - 0.25) / 0.5


def apply_mask(weights, mask: MaskSample, params: MaskParams) -> dict[str, Tensor]:
    """Multiply every registered matrix by its tile of the mask.

    Returns name -> masked matrix for exactly the maskable registry;
    embeddings, biases and layernorm parameters are untouched. Gradients
    flow to both the weights and theta.
    """
    registry = weights.registry_shapes()
    reg_names = [n for n, _ in registry]
    if set(reg_names) != set(params.group_map):
        missing = set(reg_names) ^ set(params.group_map)
        raise ValueError(f"mask groups do not match maskable registry: {sorted(missing)}")
    masked: dict[str, Tensor] = {}
    for name, _ in registry:
        b = params.group_map[name]
        masked[name] = ad.group_masked(weights.params[name], mask.z,
                                       b.offset, b.r_tiles, b.c_tiles, b.n_r, b.n_c)
    return masked
