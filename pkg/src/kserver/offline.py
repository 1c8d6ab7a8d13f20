"""Exact offline optimum and brute-force oracles for verification."""

import heapq
import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import InfeasibleTrace, InstanceTooLarge, SizeMismatch
from .measure import MassVector, _lcm
from .metric import MetricSpace, WeightedTree

DP_MAX_CONFIGS = 10 ** 4
DP_MAX_T = 50
FLOW_MAX_T = 2000
BRUTE_MAX_UNITS = 8


@dataclass
class RequestTrace:
    """Initial configuration plus a request sequence on a metric or tree.

    On a tree, points are leaves (node ids); on a :class:`MetricSpace` they
    are ``0..n-1``.
    """

    space: object
    C0: list
    requests: list

    @property
    def k(self):
        return len(self.C0)

    @property
    def T(self):
        return len(self.requests)

    def points(self):
        if isinstance(self.space, WeightedTree):
            return list(self.space.leaves)
        return list(range(self.space.n))

    def dist(self, a, b):
        if isinstance(self.space, WeightedTree):
            return self.space.node_distance(a, b)
        return Fraction(self.space(a, b))

    def validate(self):
        pts = set(self.points())
        for p in list(self.C0) + list(self.requests):
            if p not in pts:
                raise InfeasibleTrace(f"{p} is not a point of the space")

    def prefix(self, T):
        return RequestTrace(self.space, list(self.C0), list(self.requests[:T]))

    def to_json(self):
        kind = "tree" if isinstance(self.space, WeightedTree) else "metric"
        space = self.space.to_dict() if kind == "tree" else {"dist": [[str(x) for x in row] for row in self.space.dist]}
        return json.dumps({"kind": kind, "space": space, "C0": list(self.C0),
                           "requests": list(self.requests)}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        if d["kind"] == "tree":
            space = WeightedTree.from_dict(d["space"])
        else:
            space = MetricSpace([[Fraction(x) for x in row] for row in d["space"]["dist"]])
        return cls(space, list(d["C0"]), list(d["requests"]))


def _scale(trace, pts):
    den = 1
    for a in pts:
        for b in pts:
            den = _lcm(den, trace.dist(a, b).denominator)
    return den


def opt_flow(trace: RequestTrace) -> Fraction:
    """Offline optimum by min-cost flow on the time-expanded graph.

    ``k`` units leave the initial server positions. Each request ``t`` is a pair
    of nodes ``in_t -> out_t`` whose arc carries a large negative reward, so
    that every request is covered; moving from a position to a later request
    costs the distance. Successive shortest paths with potentials (computed
    first on the acyclic graph) solve it exactly on integer-scaled costs.
    """
    trace.validate()
    T, k = trace.T, trace.k
    if T == 0:
        return Fraction(0)
    if T > FLOW_MAX_T:
        raise InstanceTooLarge(f"T = {T} exceeds {FLOW_MAX_T}")
    pts = sorted(set(trace.points()))
    den = _scale(trace, pts)
    D = {(a, b): int(trace.dist(a, b) * den) for a in pts for b in pts}
    big = (max(D.values(), default=0) + 1) * (T + k + 1)
    # node ids: 0 source, 1..k servers, then in/out per request, then sink
    S = 0
    srv = list(range(1, k + 1))
    nin = [k + 1 + 2 * t for t in range(T)]
    nout = [k + 2 + 2 * t for t in range(T)]
    sink = k + 1 + 2 * T
    N = sink + 1
    graph = [[] for _ in range(N)]  # edge: [to, cap, cost, rev_index]

    def add(u, v, cost):
        graph[u].append([v, 1, cost, len(graph[v])])
        graph[v].append([u, 0, -cost, len(graph[u]) - 1])

    req = trace.requests
    for i, s in enumerate(srv):
        add(S, s, 0)
        add(s, sink, 0)
        for t in range(T):
            add(s, nin[t], D[trace.C0[i], req[t]])
    for t in range(T):
        add(nin[t], nout[t], -big)
        add(nout[t], sink, 0)
        for t2 in range(t + 1, T):
            add(nout[t], nin[t2], D[req[t], req[t2]])

    # potentials from shortest paths on the DAG (node ids are topological)
    INF = math.inf
    pot = [INF] * N
    pot[S] = 0
    for u in range(N):
        if pot[u] == INF:
            continue
        for v, cap, cost, _ in graph[u]:
            if cap and pot[u] + cost < pot[v]:
                pot[v] = pot[u] + cost
    pot = [p if p != INF else 0 for p in pot]

    total = 0
    for _ in range(k):
        dist = [INF] * N
        prev = [None] * N
        dist[S] = 0
        heap = [(0, S)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > dist[u]:
                continue
            for ei, (v, cap, cost, _) in enumerate(graph[u]):
                if not cap:
                    continue
                nd = du + cost + pot[u] - pot[v]
                if nd < dist[v]:
                    dist[v] = nd
                    prev[v] = (u, ei)
                    heapq.heappush(heap, (nd, v))
        if dist[sink] == INF:
            raise InfeasibleTrace("flow network disconnected")
        for v in range(N):
            if dist[v] < INF:
                pot[v] += dist[v]
        v = sink
        while v != S:
            u, ei = prev[v]
            e = graph[u][ei]
            e[1] -= 1
            graph[v][e[3]][1] += 1
            total += e[2]
            v = u
    covered = sum(1 for t in range(T) for e in graph[nin[t]] if e[0] == nout[t] and e[1] == 0)
    if covered != T:
        raise InfeasibleTrace(f"only {covered} of {T} requests covered")
    return Fraction(total + big * T, den)


def matching_distance(trace: RequestTrace, A, B) -> Fraction:
    """Minimum-cost perfect matching between two server multisets (all permutations)."""
    if len(A) != len(B):
        raise SizeMismatch("configurations differ in size")
    return min(sum((trace.dist(a, b) for a, b in zip(A, perm)), Fraction(0))
               for perm in itertools.permutations(B))


def opt_dp(trace: RequestTrace) -> Fraction:
    """Offline optimum by dynamic programming over server multisets."""
    trace.validate()
    pts = sorted(set(trace.points()))
    k, T = trace.k, trace.T
    n_conf = math.comb(len(pts) + k - 1, k)
    if math.comb(len(pts), k) > DP_MAX_CONFIGS or n_conf > DP_MAX_CONFIGS or T > DP_MAX_T:
        raise InstanceTooLarge(f"{n_conf} configurations, T = {T}")
    confs = list(itertools.combinations_with_replacement(pts, k))
    start = tuple(sorted(trace.C0))
    cost = {c: matching_distance(trace, start, c) for c in confs}
    dcache = {}

    def d(a, b):
        key = (a, b) if a <= b else (b, a)
        if key not in dcache:
            dcache[key] = matching_distance(trace, a, b)
        return dcache[key]

    targets = confs
    for r in trace.requests:
        cost = {c: min(cost[p] + d(p, c) for p in cost) for c in targets if r in c}
    return min(cost.values()) if trace.requests else Fraction(0)


def brute_transport(z: MassVector, z2: MassVector) -> Fraction:
    """Transport cost by trying every assignment of equal mass units."""
    if z.mass != z2.mass:
        raise SizeMismatch("measures have different masses")
    tree = z.tree
    M = _lcm(z.reduced().denom, z2.reduced().denom)
    a, b = z.with_denom(_lcm(z.denom, M)), z2.with_denom(_lcm(z2.denom, M))
    sa, sb = a.denom // M, b.denom // M
    ua = [u for u in range(tree.n_nodes) for _ in range(a.point_num(u) // sa)]
    ub = [u for u in range(tree.n_nodes) for _ in range(b.point_num(u) // sb)]
    if len(ua) > BRUTE_MAX_UNITS:
        raise InstanceTooLarge(f"{len(ua)} units")
    best = min((sum((tree.node_distance(x, y) for x, y in zip(ua, perm)), Fraction(0))
                for perm in itertools.permutations(ub)), default=Fraction(0))
    return best / M
