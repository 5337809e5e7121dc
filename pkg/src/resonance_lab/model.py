"""Double-well model families: forces, potentials, equilibrium branches, barriers.

Two families of 1-periodically modulated double wells on the slow time t:

* symmetric:   f(x,t) = a(t)*x - x**3          with a(t) = a0 + 1 - cos(2*pi*t)
* asymmetric:  f(x,t) = x - x**3 + lambda(t)   with lambda(t) = -(lambda_c - a0)*cos(2*pi*t)

``a0 >= 0`` controls how close the shallow well comes to the saddle once per
period.  The asymmetric family is a double well only while
``|lambda| < lambda_c = 2/(3*sqrt(3))``, so it requires ``a0 < lambda_c``.

All evaluators accept scalars or numpy arrays in ``x`` and scalar or array
``t``; everything is a pure function of its arguments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

LAMBDA_C = 2.0 / (3.0 * math.sqrt(3.0))
X_C = 1.0 / math.sqrt(3.0)

# discriminant below this is treated as a degenerate (double) root
_DISCRIMINANT_TOL = 1e-12


class Family(enum.Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


class Equilibrium(NamedTuple):
    x: float
    stability: Stability


class Side(enum.Enum):
    """Which well the barrier is measured from."""

    FROM_RIGHT = "from_right"
    FROM_LEFT = "from_left"


def _depressed_cubic_roots(p: float, q: float) -> list[float]:
    """All real roots of x**3 + p*x + q = 0, ascending.

    Trigonometric method when all three roots are real, Cardano otherwise;
    near-zero discriminant is resolved into the exact double-root pair.
    """
    disc = -4.0 * p**3 - 27.0 * q**2
    if abs(disc) <= _DISCRIMINANT_TOL and (p != 0.0 or q != 0.0):
        double = -3.0 * q / (2.0 * p)
        single = 3.0 * q / p
        return sorted([single, double, double])
    if p == 0.0 and q == 0.0:
        return [0.0, 0.0, 0.0]
    if disc > 0.0:
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (2.0 * p) * math.sqrt(-3.0 / p)
        theta = math.acos(min(1.0, max(-1.0, arg)))
        return sorted(r * math.cos(theta / 3.0 - 2.0 * math.pi * k / 3.0) for k in range(3))
    # one real root (Cardano)
    if p < 0.0:
        # |arg| > 1 branch of the trigonometric form, via cosh
        arg = -3.0 * abs(q) / (2.0 * p) * math.sqrt(-3.0 / p)
        root = -2.0 * math.copysign(1.0, q) * math.sqrt(-p / 3.0) * math.cosh(math.acosh(arg) / 3.0)
        return [root]
    d = math.sqrt(q**2 / 4.0 + p**3 / 27.0)
    u = math.cbrt(-q / 2.0 + d)
    v = math.cbrt(-q / 2.0 - d)
    return [u + v]


@dataclass(frozen=True)
class ModelSpec:
    """One concrete double-well family instance.

    ``x_domain`` is the simulation box; both quartic potentials confine well
    inside |x| <= 3 for every parameter value used here.
    """

    family: Family
    a0: float
    x_domain: tuple[float, float] = (-3.0, 3.0)
    lambda_c: float = field(default=LAMBDA_C, init=False)

    def __post_init__(self):
        if self.a0 < 0.0:
            raise ValueError(f"a0 must be >= 0, got {self.a0}")
        if self.family is Family.ASYMMETRIC and self.a0 >= LAMBDA_C:
            raise ValueError(
                f"asymmetric family needs a0 < lambda_c = {LAMBDA_C:.6f}, got a0 = {self.a0}"
            )
        if self.x_domain[0] >= self.x_domain[1]:
            raise ValueError("x_domain must be an increasing interval")

    # -- drives ------------------------------------------------------------

    def drive_a(self, t):
        """Curvature at the saddle, a(t) = a0 + 1 - cos(2*pi*t); symmetric only.

        The argument is reduced mod 1 before scaling, which makes periodicity
        exact in floating point.
        """
        if self.family is not Family.SYMMETRIC:
            raise ValueError("drive_a is defined for the symmetric family")
        return self.a0 + 1.0 - np.cos(2.0 * np.pi * np.mod(t, 1.0))

    def drive_lambda(self, t):
        """Tilt lambda(t) = -(lambda_c - a0)*cos(2*pi*t); asymmetric only."""
        if self.family is not Family.ASYMMETRIC:
            raise ValueError("drive_lambda is defined for the asymmetric family")
        return -(LAMBDA_C - self.a0) * np.cos(2.0 * np.pi * np.mod(t, 1.0))

    def drive_a_integral(self, t_from, t_to):
        """Integral of a(t) over [t_from, t_to] in closed form (symmetric)."""
        if self.family is not Family.SYMMETRIC:
            raise ValueError("drive_a_integral is defined for the symmetric family")

        def prim(t):
            return (self.a0 + 1.0) * t - np.sin(2.0 * np.pi * t) / (2.0 * np.pi)

        return prim(t_to) - prim(t_from)

    # -- force / potential / linearization ----------------------------------

    def force(self, x, t):
        # factored form: one multiply fewer than a*x - x**3 on array input
        if self.family is Family.SYMMETRIC:
            return (self.drive_a(t) - x * x) * x
        return (1.0 - x * x) * x + self.drive_lambda(t)

    def potential(self, x, t):
        if self.family is Family.SYMMETRIC:
            return -0.5 * self.drive_a(t) * x**2 + 0.25 * x**4
        return -0.5 * x**2 + 0.25 * x**4 - self.drive_lambda(t) * x

    def linearization(self, x, t):
        """d force / dx at (x, t), analytically."""
        if self.family is Family.SYMMETRIC:
            return self.drive_a(t) - 3.0 * x**2
        return 1.0 - 3.0 * x**2

    # -- equilibrium structure ----------------------------------------------

    def equilibria(self, t: float) -> list[Equilibrium]:
        """All real roots of force(., t) inside x_domain, ascending, tagged.

        Degenerate double roots (vanishing linearization) are tagged marginal.
        """
        if self.family is Family.SYMMETRIC:
            a = float(self.drive_a(t))
            if a <= _DISCRIMINANT_TOL:
                return [Equilibrium(0.0, Stability.MARGINAL)]
            r = math.sqrt(a)
            roots = [-r, 0.0, r]
        else:
            lam = float(self.drive_lambda(t))
            roots = _depressed_cubic_roots(-1.0, -lam)
            # collapse the double-root pair emitted by the degenerate branch
            out: list[float] = []
            for x in roots:
                if not out or abs(x - out[-1]) > 1e-9:
                    out.append(x)
            roots = out
        lo, hi = self.x_domain
        eqs = []
        for x in roots:
            if not (lo <= x <= hi):
                continue
            slope = float(self.linearization(x, t))
            if abs(slope) <= 1e-9:
                tag = Stability.MARGINAL
            elif slope < 0.0:
                tag = Stability.STABLE
            else:
                tag = Stability.UNSTABLE
            eqs.append(Equilibrium(x, tag))
        return eqs

    def barrier_height(self, t: float, side: Side) -> float | None:
        """V(saddle, t) - V(well, t), or None once that well has merged away."""
        eqs = self.equilibria(t)
        if len(eqs) == 3 and eqs[1].stability is Stability.UNSTABLE:
            saddle = eqs[1].x
            well = eqs[2].x if side is Side.FROM_RIGHT else eqs[0].x
            return float(self.potential(saddle, t) - self.potential(well, t))
        if len(eqs) == 2:
            # saddle-node pair: one marginal double root plus the surviving well
            marginal = next(e for e in eqs if e.stability is Stability.MARGINAL)
            survivors = [e for e in eqs if e.stability is Stability.STABLE]
            if not survivors:
                return None
            well = survivors[0]
            merged_on_right = marginal.x > well.x
            if (side is Side.FROM_RIGHT) == merged_on_right:
                return None
            return float(self.potential(marginal.x, t) - self.potential(well.x, t))
        return None

    # -- branch evaluators (vectorized over t) -------------------------------

    def well_positive(self, t):
        """Right-hand stable branch x*_+(t)."""
        if self.family is Family.SYMMETRIC:
            return np.sqrt(self.drive_a(t))
        return self._asym_branch(t, 0)

    def well_negative(self, t):
        """Left-hand stable branch x*_-(t)."""
        if self.family is Family.SYMMETRIC:
            return -np.sqrt(self.drive_a(t))
        return self._asym_branch(t, 2)

    def saddle_branch(self, t):
        """Unstable branch x*_0(t) separating the wells."""
        if self.family is Family.SYMMETRIC:
            return t * 0.0
        return self._asym_branch(t, 1)

    def _asym_branch(self, t, k: int):
        # descending roots of x^3 - x - lambda(t): k=0 largest, 1 middle, 2 smallest
        lam = self.drive_lambda(t)
        u = np.clip(lam / LAMBDA_C, -1.0, 1.0)
        theta = np.arccos(u)
        return (2.0 / math.sqrt(3.0)) * np.cos(theta / 3.0 - 2.0 * math.pi * k / 3.0)

    @property
    def default_window_T(self) -> float:
        """Half-width T of the analysis window around the close encounter."""
        return 0.25 if self.family is Family.SYMMETRIC else 0.1


def symmetric_spec(a0: float, x_domain: tuple[float, float] = (-3.0, 3.0)) -> ModelSpec:
    return ModelSpec(Family.SYMMETRIC, a0, x_domain)


def asymmetric_spec(a0: float, x_domain: tuple[float, float] = (-3.0, 3.0)) -> ModelSpec:
    return ModelSpec(Family.ASYMMETRIC, a0, x_domain)
