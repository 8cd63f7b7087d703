# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Max-min fair rate allocation over shared capacity resources.

A transfer lists the resources it crosses (its sender's upload, its
receiver's download, and the campus access link when it crosses the campus
boundary). Rates are found by water-filling: the resource with the smallest
fair share is the bottleneck, its transfers are frozen at that share, and
their usage is subtracted from every other resource they touch.
"""

from __future__ import annotations

import heapq
from typing import Dict, Hashable, List, Mapping, Sequence, Set, Tuple

Resource = Tuple[Hashable, ...]

ACCESS_LINK: Resource = ("access",)
TOLERANCE = 1e-9


def upload(node: int) -> Resource:
    return ("up", node)


def download(node: int) -> Resource:
    return ("down", node)


def allocate_bandwidth(
    transfers: Mapping[Hashable, Sequence[Resource]],
    capacities: Mapping[Resource, float],
) -> Dict[Hashable, float]:
    """Returns the max-min fair rate of every transfer.

    Fair shares only grow as transfers are frozen, so resources are taken
    from a heap keyed by their last known share and re-queued when the share
    has moved on since.

    Args:
        transfers: Transfer id to the resources it uses
        capacities: Capacity of every resource named in ``transfers``

    Raises:
        ValueError: If a transfer uses no resource, or a resource has no capacity
    """
    users: Dict[Resource, Set[Hashable]] = {}
    for transfer, resources in transfers.items():
        if not resources:
            raise ValueError(f"transfer {transfer!r} is not constrained by any resource")
        for resource in resources:
            if resource not in capacities:
                raise ValueError(f"no capacity for resource {resource!r}")
            users.setdefault(resource, set()).add(transfer)

    order = {resource: rank for rank, resource in enumerate(sorted(users, key=repr))}
    remaining = {resource: float(capacities[resource]) for resource in users}
    heap: List[Tuple[float, int, Resource]] = [
        (remaining[resource] / len(members), order[resource], resource)
        for resource, members in users.items()
    ]
    heapq.heapify(heap)
    rates: Dict[Hashable, float] = {}

    while heap:
        share, rank, resource = heapq.heappop(heap)
        members = users[resource]
        if not members:
            continue
        level = remaining[resource] / len(members)
        if level > share * (1 + TOLERANCE) + TOLERANCE:
            heapq.heappush(heap, (level, rank, resource))
            continue
        for transfer in sorted(members, key=repr):
            rates[transfer] = level
            for other in transfers[transfer]:
                if other != resource:
                    users[other].discard(transfer)
                    remaining[other] = max(0.0, remaining[other] - level)
        members.clear()

    return rates


def resource_loads(
    transfers: Mapping[Hashable, Sequence[Resource]], rates: Mapping[Hashable, float]
) -> Dict[Resource, float]:
    loads: Dict[Resource, float] = {}
    for transfer, resources in transfers.items():
        for resource in resources:
            loads[resource] = loads.get(resource, 0.0) + rates[transfer]
    return loads


def overloaded(
    loads: Mapping[Resource, float], capacities: Mapping[Resource, float]
) -> Dict[Resource, float]:
    """Resources whose load exceeds capacity beyond rounding."""
    return {
        resource: load
        for resource, load in loads.items()
        if load > capacities[resource] * (1 + TOLERANCE) + TOLERANCE
    }
