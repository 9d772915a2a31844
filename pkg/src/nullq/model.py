"""Network description and finite-scale system instances.

A :class:`NetworkSpec` carries the first- and second-order rate data of a
multiclass parallel-server network: classes ``i`` arrive at fluid rate
``lambda_i`` (with second-order offset ``lambda_hat_i``), station ``j`` holds
a fraction ``nu_j`` of the servers, and a server of station ``j`` serves a
class-``i`` customer at rate ``mu_ij`` (offset ``mu_hat_ij``).  A pair
``(i, j)`` with ``mu_ij > 0`` is an *activity*.  All rates are stored as
exact rationals so the fluid linear program downstream can classify
activities without floating-point thresholds.

:func:`scale_instance` produces the ``n``-th integer-valued system: arrival
rates ``n*lambda + sqrt(n)*lambda_hat``, service rates
``mu + mu_hat/sqrt(n)``, server counts ``round(n*nu_j)`` and initial
headcounts centered on the fluid operating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import yaml

Rational = Fraction

# Head-counts beyond this would lose integer exactness in double arithmetic.
_MAX_COUNT = 2**53


class InterarrivalLaw:
    """Unit-mean interarrival distribution descriptor.

    Supported kinds: ``exponential``, ``deterministic``, ``erlang:k`` and
    ``uniform:a:b`` (with ``(a+b)/2 == 1``).
    """

    def __init__(self, kind: str, params: tuple[Fraction, ...] = ()):
        self.kind = kind
        self.params = params
        if kind == "erlang":
            if len(params) != 1 or int(params[0]) != params[0] or params[0] < 1:
                raise ValueError("erlang law needs a positive integer shape")
        elif kind == "uniform":
            if len(params) != 2:
                raise ValueError("uniform law needs two endpoints")
            a, b = params
            if not (0 <= a < b) or (a + b) != 2:
                raise ValueError("uniform law must have mean 1: need 0 <= a < b, a+b = 2")
        elif kind in ("exponential", "deterministic"):
            if params:
                raise ValueError(f"{kind} law takes no parameters")
        else:
            raise ValueError(f"unknown interarrival law {kind!r}")

    @classmethod
    def parse(cls, text: str) -> "InterarrivalLaw":
        parts = text.split(":")
        return cls(parts[0], tuple(Fraction(p) for p in parts[1:]))

    @property
    def scv(self) -> Fraction:
        """Squared coefficient of variation of the unit-mean variate."""
        if self.kind == "exponential":
            return Fraction(1)
        if self.kind == "deterministic":
            return Fraction(0)
        if self.kind == "erlang":
            return Fraction(1, int(self.params[0]))
        a, b = self.params
        return (b - a) ** 2 / 12

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` unit-mean interarrival variates."""
        if self.kind == "exponential":
            return rng.exponential(1.0, size)
        if self.kind == "deterministic":
            return np.ones(size)
        if self.kind == "erlang":
            k = int(self.params[0])
            return rng.gamma(k, 1.0 / k, size)
        a, b = (float(p) for p in self.params)
        return rng.uniform(a, b, size)

    def __repr__(self):
        if self.params:
            return f"InterarrivalLaw({self.kind}:{':'.join(str(p) for p in self.params)})"
        return f"InterarrivalLaw({self.kind})"

    def __eq__(self, other):
        return (
            isinstance(other, InterarrivalLaw)
            and self.kind == other.kind
            and self.params == other.params
        )


@dataclass(frozen=True)
class NetworkSpec:
    """Full parameterization of the limiting network."""

    class_count: int
    station_count: int
    lam: tuple[Fraction, ...]                     # first-order arrival rates
    lam_hat: tuple[Fraction, ...]                 # second-order arrival offsets
    mu: tuple[tuple[Fraction, ...], ...]          # I x J service rates, 0 off activities
    mu_hat: tuple[tuple[Fraction, ...], ...]      # I x J rate offsets, 0 off activities
    nu: tuple[Fraction, ...]                      # staffing fractions
    interarrival: tuple[InterarrivalLaw, ...]     # per-class unit-mean laws
    x0_hat: tuple[Fraction, ...]                  # diffusion-scale initial offsets
    scv: tuple[Fraction, ...] = field(default=())  # per-class interarrival SCV

    def __post_init__(self):
        if not self.scv:
            object.__setattr__(
                self, "scv", tuple(law.scv for law in self.interarrival)
            )

    @property
    def activities(self) -> list[tuple[int, int]]:
        """Pairs ``(i, j)`` with ``mu_ij > 0``, row-major order."""
        return [
            (i, j)
            for i in range(self.class_count)
            for j in range(self.station_count)
            if self.mu[i][j] > 0
        ]

    def mu_bar(self) -> list[list[Fraction]]:
        """Capacity-weighted service rates ``nu_j * mu_ij``."""
        return [
            [self.nu[j] * self.mu[i][j] for j in range(self.station_count)]
            for i in range(self.class_count)
        ]


@dataclass(frozen=True)
class ScaledInstance:
    """The ``n``-th integer-valued system derived from a :class:`NetworkSpec`."""

    spec: NetworkSpec
    n: int
    lambda_n: tuple[float, ...]       # per-class arrival rates
    mu_n: tuple[tuple[float, ...], ...]
    N_n: tuple[int, ...]              # per-station server counts
    X0_n: tuple[int, ...]             # per-class initial headcounts
    N_hat: tuple[float, ...]          # sqrt(n)(N_n/n - nu)
    x_star: tuple[float, ...]         # fluid headcount point used for centering

    @property
    def sqrt_n(self) -> float:
        return math.sqrt(self.n)


def validate_spec(spec: NetworkSpec) -> list[str]:
    """Check structural invariants; return the list of violations (empty = valid)."""
    problems: list[str] = []
    I, J = spec.class_count, spec.station_count
    if I < 1 or J < 1:
        problems.append("class_count and station_count must be positive")
        return problems
    for name, seq, count in (
        ("lambda", spec.lam, I),
        ("lambda_hat", spec.lam_hat, I),
        ("nu", spec.nu, J),
        ("x0_hat", spec.x0_hat, I),
        ("interarrival", spec.interarrival, I),
        ("scv", spec.scv, I),
    ):
        if len(seq) != count:
            problems.append(f"{name} must have length {count}, got {len(seq)}")
    if len(spec.mu) != I or any(len(row) != J for row in spec.mu):
        problems.append(f"mu must be {I}x{J}")
    if len(spec.mu_hat) != I or any(len(row) != J for row in spec.mu_hat):
        problems.append(f"mu_hat must be {I}x{J}")
    if problems:
        return problems

    for i, rate in enumerate(spec.lam):
        if rate <= 0:
            problems.append(f"lambda[{i}] must be positive")
    for j, frac in enumerate(spec.nu):
        if frac <= 0:
            problems.append(f"nu[{j}] must be positive")
    for i, s in enumerate(spec.scv):
        if s < 0:
            problems.append(f"scv[{i}] must be nonnegative")
    for i in range(I):
        for j in range(J):
            if spec.mu[i][j] < 0:
                problems.append(f"mu[{i}][{j}] must be nonnegative")
            if spec.mu[i][j] == 0 and spec.mu_hat[i][j] != 0:
                problems.append(
                    f"mu_hat[{i}][{j}] nonzero on a non-activity (mu[{i}][{j}] = 0)"
                )
    for i in range(I):
        if all(spec.mu[i][j] == 0 for j in range(J)):
            problems.append(f"class {i} has no activity (unservable)")
    for j in range(J):
        if all(spec.mu[i][j] == 0 for i in range(I)):
            problems.append(f"station {j} has no activity (unused capacity)")
    for i, law in enumerate(spec.interarrival):
        if law.scv != spec.scv[i]:
            problems.append(
                f"scv[{i}] = {spec.scv[i]} does not match the {law.kind} law"
            )
    return problems


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def scale_instance(spec: NetworkSpec, fluid, n: int) -> ScaledInstance:
    """Build the ``n``-th system instance around the fluid operating point.

    Server counts use nearest-integer rounding so the staffing offsets vanish
    at rate ``1/sqrt(n)``; initial headcounts invert the diffusion-scale map
    at the configured offsets ``x0_hat`` and are clamped at zero.
    """
    if n < 1:
        raise ValueError("scale parameter n must be >= 1")
    problems = validate_spec(spec)
    if problems:
        raise ValueError("invalid spec: " + "; ".join(problems))

    sqrt_n = math.sqrt(n)
    lambda_n = tuple(float(n * lam + sqrt_n * float(lh)) for lam, lh in zip(spec.lam, spec.lam_hat))
    mu_n = tuple(
        tuple(float(spec.mu[i][j]) + float(spec.mu_hat[i][j]) / sqrt_n for j in range(spec.station_count))
        for i in range(spec.class_count)
    )
    N_n = tuple(_round_half_up(n * nu_j) for nu_j in spec.nu)
    x_star = fluid.x_star
    X0_n = []
    for i in range(spec.class_count):
        center = float(n * x_star[i]) + sqrt_n * float(spec.x0_hat[i])
        X0_n.append(max(0, int(round(center))))
    if any(N > _MAX_COUNT for N in N_n) or any(x > _MAX_COUNT for x in X0_n):
        raise OverflowError(f"head-counts at n = {n} exceed exact integer range")
    N_hat = tuple(float((Fraction(N_n[j]) - n * spec.nu[j])) / sqrt_n for j in range(spec.station_count))
    return ScaledInstance(
        spec=spec,
        n=n,
        lambda_n=lambda_n,
        mu_n=mu_n,
        N_n=N_n,
        X0_n=tuple(X0_n),
        N_hat=N_hat,
        x_star=tuple(float(x) for x in x_star),
    )


# ---------------------------------------------------------------------------
# Configuration files
# ---------------------------------------------------------------------------
#
# Networks are described in YAML.  All rates are decimal strings (quoted in
# the file) so parsing is locale independent and exact:
#
#   network:
#     classes: 2
#     stations: 2
#     lambda: ["7.5", "2"]
#     lambda_hat: ["0", "0"]
#     mu: [["4", "7"], ["2", "4"]]
#     mu_hat: [["0", "0"], ["0", "0"]]
#     nu: ["1", "1"]
#     interarrival: ["exponential", "exponential"]
#     x0_hat: ["-1", "-1"]
#
# lambda_hat, mu_hat and x0_hat default to zero; interarrival defaults to
# exponential.  erlang and uniform laws are written "erlang:3" and
# "uniform:0.5:1.5".


def _frac(value) -> Fraction:
    if isinstance(value, float):
        raise TypeError(
            f"rate {value!r} parsed as a float; quote rates as decimal strings"
        )
    return Fraction(str(value))


def spec_from_mapping(data: dict) -> NetworkSpec:
    """Build a :class:`NetworkSpec` from a parsed configuration mapping."""
    net = data["network"] if "network" in data else data
    I = int(net["classes"])
    J = int(net["stations"])
    lam = tuple(_frac(v) for v in net["lambda"])
    nu = tuple(_frac(v) for v in net["nu"])
    mu = tuple(tuple(_frac(v) for v in row) for row in net["mu"])
    lam_hat = tuple(_frac(v) for v in net.get("lambda_hat", ["0"] * I))
    mu_hat = tuple(
        tuple(_frac(v) for v in row)
        for row in net.get("mu_hat", [["0"] * J for _ in range(I)])
    )
    x0_hat = tuple(_frac(v) for v in net.get("x0_hat", ["0"] * I))
    laws = tuple(
        InterarrivalLaw.parse(t) for t in net.get("interarrival", ["exponential"] * I)
    )
    spec = NetworkSpec(
        class_count=I,
        station_count=J,
        lam=lam,
        lam_hat=lam_hat,
        mu=mu,
        mu_hat=mu_hat,
        nu=nu,
        interarrival=laws,
        x0_hat=x0_hat,
        scv=tuple(_frac(v) for v in net["scv"]) if "scv" in net else (),
    )
    return spec


def load_spec(path) -> NetworkSpec:
    """Read a network configuration file (YAML, see module docs for schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return spec_from_mapping(data)
