"""Shared fixtures: the small reference networks used throughout."""

from fractions import Fraction

import pytest

from nullq.model import InterarrivalLaw, NetworkSpec


def make_spec(lam, mu, nu=None, x0_hat=None, lam_hat=None, mu_hat=None, laws=None):
    """Build a spec from plain nested values, promoting to Fractions."""
    I = len(lam)
    J = len(mu[0])
    if nu is None:
        nu = [1] * J
    if x0_hat is None:
        x0_hat = [0] * I
    if lam_hat is None:
        lam_hat = [0] * I
    if mu_hat is None:
        mu_hat = [[0] * J for _ in range(I)]
    if laws is None:
        laws = [InterarrivalLaw("exponential")] * I
    return NetworkSpec(
        class_count=I,
        station_count=J,
        lam=tuple(Fraction(v) for v in lam),
        lam_hat=tuple(Fraction(v) for v in lam_hat),
        mu=tuple(tuple(Fraction(v) for v in row) for row in mu),
        mu_hat=tuple(tuple(Fraction(v) for v in row) for row in mu_hat),
        nu=tuple(Fraction(v) for v in nu),
        interarrival=tuple(laws),
        x0_hat=tuple(Fraction(v) for v in x0_hat),
    )


@pytest.fixture
def spec_2x3():
    """Two classes, three stations, two simple cycles."""
    return make_spec(
        lam=[8, 4],
        mu=[[3, 10, 1], [1, 4, 2]],
        x0_hat=[-1, -1],
    )


@pytest.fixture
def spec_2x2_controllable():
    return make_spec(
        lam=[Fraction(15, 2), 2],
        mu=[[4, 7], [2, 4]],
        x0_hat=[-1, -1],
    )


@pytest.fixture
def spec_2x2_uncontrollable():
    return make_spec(
        lam=[13, 3],
        mu=[[8, 10], [3, 6]],
        x0_hat=[-1, -1],
    )


@pytest.fixture
def spec_2x2_reversed():
    """Same shape with the nonbasic activity on the other diagonal."""
    return make_spec(
        lam=[Fraction(7, 2), Fraction(23, 2)],
        mu=[[3, 7], [6, 11]],
        x0_hat=[-1, -1],
    )


@pytest.fixture
def spec_single():
    """One class, one station at offered load 0.9 per server."""
    return make_spec(lam=[Fraction(9, 10)], mu=[[1]])
