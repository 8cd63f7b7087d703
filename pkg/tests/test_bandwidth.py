# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

import numpy as np
import pytest

from pydsnc.bandwidth import (
    ACCESS_LINK,
    allocate_bandwidth,
    download,
    overloaded,
    resource_loads,
    upload,
)


def test_single_transfer_takes_bottleneck():
    rates = allocate_bandwidth({"a": [upload(1), download(2)]}, {upload(1): 10, download(2): 5})
    assert rates == {"a": 5}


def test_equal_split():
    transfers = {"a": [upload(1), download(2)], "b": [upload(1), download(3)]}
    capacities = {upload(1): 10, download(2): 100, download(3): 100}
    assert allocate_bandwidth(transfers, capacities) == {"a": 5, "b": 5}


def test_leftover_goes_to_unconstrained_transfer():
    transfers = {"a": [upload(1), download(2)], "b": [upload(1), download(3)]}
    capacities = {upload(1): 10, download(2): 3, download(3): 100}
    rates = allocate_bandwidth(transfers, capacities)
    assert rates["a"] == pytest.approx(3)
    assert rates["b"] == pytest.approx(7)


def test_access_link_shared():
    transfers = {k: [upload(k), download(10 + k), ACCESS_LINK] for k in range(3)}
    capacities = {ACCESS_LINK: 6.0}
    for k in range(3):
        capacities[upload(k)] = 50.0
        capacities[download(10 + k)] = 50.0
    assert allocate_bandwidth(transfers, capacities) == {0: 2.0, 1: 2.0, 2: 2.0}


def test_no_transfers():
    assert allocate_bandwidth({}, {}) == {}


def test_errors():
    with pytest.raises(ValueError):
        allocate_bandwidth({"a": []}, {})
    with pytest.raises(ValueError):
        allocate_bandwidth({"a": [upload(1)]}, {})


def test_random_allocations_are_feasible_and_saturating():
    rng = np.random.default_rng(12)
    for _ in range(50):
        nodes = range(6)
        capacities = {}
        for node in nodes:
            capacities[upload(node)] = float(rng.integers(1, 100))
            capacities[download(node)] = float(rng.integers(1, 100))
        capacities[ACCESS_LINK] = float(rng.integers(1, 100))
        transfers = {}
        for t in range(int(rng.integers(1, 12))):
            src, dst = rng.choice(6, size=2, replace=False)
            resources = [upload(int(src)), download(int(dst))]
            if rng.random() < 0.3:
                resources.append(ACCESS_LINK)
            transfers[t] = resources

        rates = allocate_bandwidth(transfers, capacities)
        loads = resource_loads(transfers, rates)
        assert not overloaded(loads, capacities)
        # max-min fairness: every transfer crosses a saturated resource
        for resources in transfers.values():
            assert any(loads[r] >= capacities[r] * (1 - 1e-9) for r in resources)


def test_overloaded():
    loads = {upload(1): 10.5, download(1): 4.0}
    capacities = {upload(1): 10.0, download(1): 4.0}
    assert overloaded(loads, capacities) == {upload(1): 10.5}
