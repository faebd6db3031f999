"""Synthetic Active Directory style attack graph generator.

Builds a tiered network of workstations, servers, users, groups, and
domain-admin groups connected by the three classic lateral-movement edge
kinds: a computer HasSession for a logged-on user, a user or group is
MemberOf a group, and a group or user is AdminTo a computer.

Workstations, regular users, and regular groups are partitioned into
organizational units, and ordinary churn (sessions, memberships, admin
rights) stays inside a unit.  Only unit 0, the IT department, administers
servers; servers host admin sessions, and admin groups chain into the DA
groups.  The rest of the network can move laterally forever without ever
touching a privileged credential, which mirrors how real directory graphs
leave most nodes with no path to DA.  One full escalation chain is always
wired in explicitly so every seed yields a playable game.

Edges are created with zero probabilities and no blockable flags; both are
sampled later in the preparation pipeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import (
    ADMIN_TO,
    AttackGraph,
    COMPUTER,
    DOMAIN_ADMIN,
    Edge,
    GROUP,
    GraphValidationError,
    HAS_SESSION,
    MEMBER_OF,
    Node,
    USER,
)


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs controlling the shape and tiering of a generated network."""

    users_per_computer: float = 1.8
    groups_per_computer: float = 0.2
    da_group_count: int = 7
    org_units: int = 10
    server_fraction: float = 0.05
    admin_user_fraction: float = 0.06
    admin_group_fraction: float = 0.12
    memberships_low: int = 1
    memberships_high: int = 3
    group_nesting_rate: float = 0.3
    da_membership_rate: float = 0.6
    workstation_admin_groups: int = 2
    server_admin_rate: float = 0.5
    direct_admin_rate: float = 0.08
    workstation_session_rate: float = 0.85
    server_session_rate: float = 0.75
    stray_admin_session_rate: float = 0.1

    def validate(self, n_computers: int) -> None:
        if n_computers < 1:
            raise GraphValidationError("n_computers must be at least 1")
        if round(self.users_per_computer * n_computers) < 1:
            raise GraphValidationError("parameters yield zero users")
        if self.da_group_count < 1:
            raise GraphValidationError("da_group_count must be at least 1")
        if self.org_units < 1:
            raise GraphValidationError("org_units must be at least 1")
        for name in (
            "server_fraction",
            "admin_user_fraction",
            "admin_group_fraction",
            "group_nesting_rate",
            "da_membership_rate",
            "server_admin_rate",
            "direct_admin_rate",
            "workstation_session_rate",
            "server_session_rate",
            "stray_admin_session_rate",
        ):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise GraphValidationError(f"{name} must lie in [0, 1]")
        if not (1 <= self.memberships_low <= self.memberships_high):
            raise GraphValidationError("membership bounds must satisfy 1 <= low <= high")


def generate_synthetic(
    n_computers: int, seed: int, params: GeneratorParams = GeneratorParams()
) -> AttackGraph:
    """Generate a raw attack graph with ``n_computers`` machines.

    The result still has multiple DA candidate nodes, no entry nodes, zero
    edge probabilities, and no blockable flags; feed it through the
    preparation pipeline before playing.
    """
    params.validate(n_computers)
    rng = np.random.default_rng(seed)

    n_users = max(1, round(params.users_per_computer * n_computers))
    n_groups = max(2, round(params.groups_per_computer * n_computers))
    n_servers = max(1, math.ceil(params.server_fraction * n_computers))
    n_admin_users = max(1, math.ceil(params.admin_user_fraction * n_users))
    n_admin_groups = max(1, math.ceil(params.admin_group_fraction * n_groups))
    n_admin_groups = min(n_admin_groups, n_groups - 1) or 1

    computers = [f"c{i}" for i in range(n_computers)]
    servers = computers[:n_servers]
    workstations = computers[n_servers:] or computers
    users = [f"u{i}" for i in range(n_users)]
    admin_users = users[:n_admin_users]
    regular_users = users[n_admin_users:] or users
    groups = [f"g{i}" for i in range(n_groups)]
    admin_groups = groups[:n_admin_groups]
    regular_groups = groups[n_admin_groups:] or groups
    da_groups = [f"da{i}" for i in range(params.da_group_count)]

    n_units = max(
        1,
        min(params.org_units, len(workstations), len(regular_users), len(regular_groups)),
    )
    ws_unit = [[] for _ in range(n_units)]
    user_unit = [[] for _ in range(n_units)]
    group_unit = [[] for _ in range(n_units)]
    for i, c in enumerate(workstations):
        ws_unit[i % n_units].append(c)
    for i, u in enumerate(regular_users):
        user_unit[i % n_units].append(u)
    for i, gr in enumerate(regular_groups):
        group_unit[i % n_units].append(gr)
    unit_of_user = {u: k for k in range(n_units) for u in user_unit[k]}
    unit_of_ws = {c: k for k in range(n_units) for c in ws_unit[k]}
    unit_of_group = {gr: k for k in range(n_units) for gr in group_unit[k]}

    nodes = (
        [Node(c, COMPUTER) for c in computers]
        + [Node(u, USER) for u in users]
        + [Node(gr, GROUP) for gr in groups]
        + [Node(d, DOMAIN_ADMIN) for d in da_groups]
    )

    edges: list[Edge] = []
    seen: set[tuple[str, str, str]] = set()

    def add(src: str, dst: str, kind: str) -> None:
        key = (src, dst, kind)
        if src != dst and key not in seen:
            seen.add(key)
            edges.append(Edge(src, dst, kind))

    def pick(pool: list[str]) -> str:
        return pool[int(rng.integers(len(pool)))]

    # Guaranteed privilege-escalation backbone inside the IT unit, so every
    # seed yields a game: workstation session -> user -> group -> server ->
    # admin session -> admin group -> DA.
    add(ws_unit[0][0], user_unit[0][0], HAS_SESSION)
    add(user_unit[0][0], group_unit[0][0], MEMBER_OF)
    add(group_unit[0][0], servers[0], ADMIN_TO)
    add(servers[0], admin_users[0], HAS_SESSION)
    add(admin_users[0], admin_groups[0], MEMBER_OF)
    add(admin_groups[0], da_groups[0], MEMBER_OF)

    # Group memberships stay within the user's unit.
    for u in regular_users:
        k = unit_of_user[u]
        n_member = int(rng.integers(params.memberships_low, params.memberships_high + 1))
        for _ in range(n_member):
            add(u, pick(group_unit[k]), MEMBER_OF)
    for u in admin_users:
        n_member = int(rng.integers(1, 3))
        for _ in range(n_member):
            add(u, pick(admin_groups), MEMBER_OF)

    # Group nesting within each tier; admin groups chain into DA.
    for gr in regular_groups[1:]:
        if rng.random() < params.group_nesting_rate:
            add(gr, pick(group_unit[unit_of_group[gr]]), MEMBER_OF)
    for gr in admin_groups[1:]:
        if rng.random() < params.group_nesting_rate:
            add(gr, pick(admin_groups), MEMBER_OF)
    for gr in admin_groups:
        if rng.random() < params.da_membership_rate:
            add(gr, pick(da_groups), MEMBER_OF)

    # Administration rights.  Only IT-unit groups may administer servers.
    for c in workstations:
        k = unit_of_ws[c]
        for _ in range(params.workstation_admin_groups):
            add(pick(group_unit[k]), c, ADMIN_TO)
    for gr in admin_groups:
        n_adm = int(rng.integers(1, max(2, len(servers) // 2) + 1))
        for _ in range(n_adm):
            add(gr, pick(servers), ADMIN_TO)
    for gr in group_unit[0]:
        if rng.random() < params.server_admin_rate:
            add(gr, pick(servers), ADMIN_TO)
    for u in regular_users:
        if rng.random() < params.direct_admin_rate:
            add(u, pick(ws_unit[unit_of_user[u]]), ADMIN_TO)

    # Logged-on sessions: compromising the machine yields the credentials.
    # Admins only ever log on to servers and IT-unit workstations.
    for c in workstations:
        k = unit_of_ws[c]
        if rng.random() < params.workstation_session_rate:
            add(c, pick(user_unit[k]), HAS_SESSION)
        if k == 0 and rng.random() < params.stray_admin_session_rate:
            add(c, pick(admin_users), HAS_SESSION)
    for c in servers:
        if rng.random() < params.server_session_rate:
            add(c, pick(admin_users), HAS_SESSION)

    g = AttackGraph(tuple(nodes), tuple(edges))
    g.validate()
    return g
