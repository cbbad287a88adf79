import pytest

from cppa import netio
from cppa.netio import Branch, Bus, CaseData, Generator, Load, branch_admittance


def mk_branch(bid, f, t, r, x, b_c=0.0, tap=1.0, shift=0.0,
              max_angle_diff=0.6, current_limit_sq=25.0, status=True):
    return Branch(bid, f, t, r, x, b_c, tap, shift, max_angle_diff,
                  current_limit_sq, status,
                  branch_admittance(r, x, b_c, tap, shift))


def mk_gen(gid, bus, pmin, pmax, qmin, qmax, segments, no_load=0.0,
           startup=0.0, shutdown=0.0, initial_on=True):
    return Generator(gid, bus, pmin, pmax, qmin, qmax, tuple(segments),
                     no_load, startup, shutdown, initial_on)


def mk_load(lid, bus, pmax, segments, gamma=0.0):
    return Load(lid, bus, pmax, tuple(segments), gamma)


def condenser(gid, bus, qspan=3.0):
    """Zero-MW reactive slack unit."""
    return mk_gen(gid, bus, 0.0, 0.0, -qspan, qspan, [(1e-3, 0.0)])


@pytest.fixture
def two_bus_lossless():
    """Lossless 2-bus economy: gen mc 10 at bus 1, load mb 50 at bus 2."""
    return netio.make_case(
        100.0,
        buses=[Bus(1, 0.95, 1.05), Bus(2, 0.95, 1.05)],
        branches=[mk_branch(1, 1, 2, 0.0, 0.1)],
        generators=[mk_gen(1, 1, 0.0, 1.0, -1.0, 1.0, [(1.0, 10.0)])],
        loads=[mk_load(1, 2, 0.5, [(0.5, 50.0)])],
        scenario_name="two_bus_lossless",
    )


@pytest.fixture
def two_bus_lossy():
    """Lossy 2-bus economy with a reactive slack unit at the load bus."""
    return netio.make_case(
        100.0,
        buses=[Bus(1, 0.95, 1.05), Bus(2, 0.95, 1.05)],
        branches=[mk_branch(1, 1, 2, 0.02, 0.1, b_c=0.02, max_angle_diff=0.3)],
        generators=[
            mk_gen(1, 1, 0.0, 1.5, -2.0, 2.0, [(1.5, 10.0)]),
            condenser(2, 2),
        ],
        loads=[mk_load(1, 2, 0.5, [(0.5, 50.0)])],
        scenario_name="two_bus_lossy",
    )


@pytest.fixture
def three_bus():
    """Lossy 3-bus ring: cheap gen at bus 1, mid-cost gen at bus 3, elastic
    loads at buses 2 and 3, reactive slack everywhere."""
    return netio.make_case(
        100.0,
        buses=[Bus(1, 0.95, 1.05), Bus(2, 0.95, 1.05), Bus(3, 0.95, 1.05)],
        branches=[
            mk_branch(1, 1, 2, 0.01, 0.10, b_c=0.02, max_angle_diff=0.4),
            mk_branch(2, 2, 3, 0.01, 0.08, b_c=0.02, max_angle_diff=0.4),
            mk_branch(3, 1, 3, 0.02, 0.20, b_c=0.02, max_angle_diff=0.4),
        ],
        generators=[
            mk_gen(1, 1, 0.0, 1.2, -2.0, 2.0, [(0.8, 10.0), (1.2, 14.0)]),
            mk_gen(2, 3, 0.0, 0.6, -2.0, 2.0, [(0.6, 30.0)]),
            condenser(3, 2),
        ],
        loads=[
            mk_load(1, 2, 0.6, [(0.4, 80.0), (0.6, 45.0)]),
            mk_load(2, 3, 0.4, [(0.4, 70.0)]),
        ],
        scenario_name="three_bus",
    )


@pytest.fixture
def three_bus_line():
    """3-bus radial feeder: one cheap gen, one far-end load, reactive
    slack at the passive buses."""
    return netio.make_case(
        100.0,
        buses=[Bus(1, 0.95, 1.05), Bus(2, 0.95, 1.05), Bus(3, 0.95, 1.05)],
        branches=[
            mk_branch(1, 1, 2, 0.01, 0.10, max_angle_diff=0.4),
            mk_branch(2, 2, 3, 0.01, 0.08, max_angle_diff=0.4),
        ],
        generators=[
            mk_gen(1, 1, 0.0, 1.2, -2.0, 2.0, [(1.2, 10.0)]),
            condenser(2, 2),
            condenser(3, 3),
        ],
        loads=[mk_load(1, 3, 0.5, [(0.5, 60.0)])],
        scenario_name="three_bus_line",
    )


@pytest.fixture
def one_bus_market():
    """Single-bus market whose commitment LP relaxation is integral."""
    return netio.make_case(
        1.0,
        buses=[Bus(1, 0.95, 1.05)],
        branches=[],
        generators=[mk_gen(1, 1, 0.0, 0.5, -0.5, 0.5, [(0.5, 10.0)],
                           initial_on=True)],
        loads=[mk_load(1, 1, 1.0, [(1.0, 50.0)])],
        scenario_name="one_bus",
    )


@pytest.fixture
def block_unit_market():
    """Single-bus market with a must-run-size block unit: the commitment
    LP relaxation is fractional."""
    return netio.make_case(
        1.0,
        buses=[Bus(1, 0.95, 1.05)],
        branches=[],
        generators=[
            mk_gen(1, 1, 0.0, 0.3, -0.5, 0.5, [(0.3, 10.0)], initial_on=True),
            mk_gen(2, 1, 0.4, 0.4, -0.5, 0.5, [(0.4, 5.0)], no_load=10.0,
                   initial_on=False),
        ],
        loads=[mk_load(1, 1, 0.6, [(0.6, 100.0)])],
        scenario_name="block_unit",
    )
