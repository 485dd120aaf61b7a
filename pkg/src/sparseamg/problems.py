"""Problem generators: circulant stencils, the rotated Laplacian, and
PDE-parameter sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .stencil import Stencil


@dataclass(frozen=True)
class RotLapParams:
    """Anisotropy angle theta (radians) and conductivity xi."""

    theta: float
    xi: float

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be positive")


@dataclass(frozen=True)
class ElasticityParams:
    E: float = 1e-5  # Young's modulus
    nu: float = 0.3  # Poisson ratio
    b_y: float = 1.0  # mesh aspect ratio
    h: float = 1.0  # mesh step

    def __post_init__(self):
        if not 0.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must be in (0, 0.5)")
        if self.E <= 0 or self.b_y <= 0 or self.h <= 0:
            raise ValueError("E, b_y, h must be positive")

    @property
    def lame(self):
        """(mu, lam) from Young's modulus and Poisson ratio."""
        mu = self.E / (2.0 * (1.0 + self.nu))
        lam = self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        return mu, lam


@dataclass(frozen=True)
class ParamInterval:
    low: float
    high: float
    fixed: float | None = None  # the companion parameter held constant

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("interval must have low < high")


def circulant_stencil(a: float, b: float, c: float) -> Stencil:
    """[[c, b, c], [a, -2(a+b)-4c, a], [c, b, c]]"""
    return Stencil(
        np.array(
            [
                [c, b, c],
                [a, -2.0 * (a + b) - 4.0 * c, a],
                [c, b, c],
            ]
        )
    )


def rotlap_stencil(p: RotLapParams) -> Stencil:
    """9-point central-difference stencil of the anisotropic rotated Laplacian.

    With a11 = cos^2 t + xi sin^2 t, a22 = sin^2 t + xi cos^2 t and
    a12 = cos t sin t (1 - xi), this discretizes
    -(a11 u_xx + 2 a12 u_xy + a22 u_yy) at unit mesh width, x increasing
    with the column index and y with the grid's north direction (row 0).
    """
    ct, st = np.cos(p.theta), np.sin(p.theta)
    a11 = ct * ct + p.xi * st * st
    a22 = st * st + p.xi * ct * ct
    a12 = ct * st * (1.0 - p.xi)
    return Stencil(
        np.array(
            [
                [a12 / 2.0, -a22, -a12 / 2.0],
                [-a11, 2.0 * (a11 + a22), -a11],
                [-a12 / 2.0, -a22, a12 / 2.0],
            ]
        )
    )


def sample_params(interval: ParamInterval, count: int, seed: int) -> list:
    """Deterministic uniform samples from the interval."""
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    return rng.uniform(interval.low, interval.high, count).tolist()


def train_grid(interval: ParamInterval, count: int = 5) -> list:
    """Evenly spaced training values spanning the interval, endpoints included."""
    return np.linspace(interval.low, interval.high, count).tolist()


def problem_to_json(kind: str, params: dict, n: int, seed: int) -> str:
    return json.dumps({"kind": kind, "params": params, "n": n, "seed": seed})


def problem_from_json(s: str) -> dict:
    return json.loads(s)
