"""Static zone description and PTDF sensitivities.

Sign convention: a positive nodal injection is net generation. Line ``(i, j)``
carries positive flow from ``i`` to ``j``. ``PTDF(l, n)`` is the flow change on
line ``l`` for +1 MW injected at ``n`` and withdrawn at the slack node.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_matrix, check_vector, frozen


class NetworkError(ValueError):
    """Raised when a network cannot support a DC power-flow solve."""


@dataclass(frozen=True)
class Line:
    from_node: str
    to_node: str
    thermal_limit: float
    reactance: float | None = None
    name: str | None = None

    def __post_init__(self):
        if self.name is None:
            object.__setattr__(self, "name", f"{self.from_node}-{self.to_node}")

    def violations(self):
        out = []
        if self.from_node == self.to_node:
            out.append(f"line {self.name}: from and to are both {self.from_node!r}")
        if not self.thermal_limit > 0:
            out.append(f"line {self.name}: thermal_limit must be > 0, got {self.thermal_limit}")
        if self.reactance is not None and not self.reactance > 0:
            out.append(f"line {self.name}: reactance must be > 0, got {self.reactance}")
        return out


@dataclass(frozen=True, eq=False)
class Zone:
    """Nodes, oriented lines, device locations, slack node and PTDF matrix.

    ``ptdf`` has one row per line and one column per node. When it is omitted,
    it is computed from line reactances with :func:`compute_ptdf`, which needs
    the slack node to belong to ``nodes``.
    """

    nodes: tuple
    lines: tuple
    battery_nodes: tuple = ()
    curtailable_nodes: tuple = ()
    slack_node: str | None = None
    ptdf: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("nodes", "lines", "battery_nodes", "curtailable_nodes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.ptdf is None:
            ptdf = compute_ptdf(self.nodes, self.lines, self.slack_node)
        else:
            ptdf = np.asarray(self.ptdf, dtype=float)
        object.__setattr__(self, "ptdf", frozen(ptdf))

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_lines(self):
        return len(self.lines)

    @property
    def n_batteries(self):
        return len(self.battery_nodes)

    @property
    def n_curtailable(self):
        return len(self.curtailable_nodes)

    @property
    def line_names(self):
        return [line.name for line in self.lines]

    @property
    def thermal_limits(self):
        return np.array([line.thermal_limit for line in self.lines])

    def node_index(self, node):
        return self.nodes.index(node)

    def line_index(self, name):
        return self.line_names.index(name)

    def columns(self, nodes):
        """PTDF columns for ``nodes``, in the given order."""
        idx = [self.node_index(n) for n in nodes]
        return self.ptdf[:, idx]


def _susceptance_matrices(nodes, lines):
    index = {node: i for i, node in enumerate(nodes)}
    n, n_l = len(nodes), len(lines)
    b = np.array([1.0 / line.reactance for line in lines])
    incidence = np.zeros((n_l, n))
    for l, line in enumerate(lines):
        incidence[l, index[line.from_node]] = 1.0
        incidence[l, index[line.to_node]] = -1.0
    # bus susceptance B = C' diag(b) C, branch flows = diag(b) C theta
    return incidence.T @ (b[:, None] * incidence), b[:, None] * incidence


def _check_dc_network(nodes, lines, slack_node):
    if slack_node not in nodes:
        raise NetworkError(f"slack node {slack_node!r} is not one of the network nodes")
    missing = [line.name for line in lines if line.reactance is None]
    if missing:
        raise NetworkError(f"lines without reactance: {', '.join(missing)}; "
                           "supply an explicit ptdf block instead")
    bad = [line.name for line in lines if not line.reactance > 0]
    if bad:
        raise NetworkError(f"non-positive reactance on lines: {', '.join(bad)}")
    index = {node: i for i, node in enumerate(nodes)}
    unknown = [line.name for line in lines
               if line.from_node not in index or line.to_node not in index]
    if unknown:
        raise NetworkError(f"lines with unknown endpoints: {', '.join(unknown)}")
    n = len(nodes)
    rows = [index[line.from_node] for line in lines]
    cols = [index[line.to_node] for line in lines]
    graph = coo_matrix((np.ones(len(lines)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        main = labels[index[slack_node]]
        isolated = [node for node, lab in zip(nodes, labels) if lab != main]
        raise NetworkError(f"network is disconnected; nodes not connected to slack "
                           f"{slack_node!r}: {', '.join(map(str, isolated))}")


def compute_ptdf(nodes, lines, slack_node):
    """PTDF matrix (lines x nodes) from a DC power-flow model.

    The slack row and column are removed from the bus susceptance matrix, the
    reduced system is inverted to get angle sensitivities and those are mapped
    to branch flows. The slack column is identically zero.

    Raises
    ------
    NetworkError
        Missing or non-positive reactances, unknown slack, disconnected
        network, or a singular reduced susceptance matrix.
    """
    nodes, lines = list(nodes), list(lines)
    _check_dc_network(nodes, lines, slack_node)
    bbus, bf = _susceptance_matrices(nodes, lines)
    keep = [i for i, node in enumerate(nodes) if node != slack_node]
    reduced = bbus[np.ix_(keep, keep)]
    try:
        sens = np.linalg.solve(reduced, np.eye(len(keep)))
    except np.linalg.LinAlgError as exc:
        raise NetworkError("reduced susceptance matrix is singular") from exc
    angles = np.zeros((len(nodes), len(nodes)))
    angles[np.ix_(keep, keep)] = sens
    return bf @ angles


def dc_power_flow(nodes, lines, slack_node, injections):
    """Line flows (MW) for nodal injections; the slack absorbs the imbalance."""
    nodes, lines = list(nodes), list(lines)
    _check_dc_network(nodes, lines, slack_node)
    p = check_vector(injections, len(nodes), "injections")
    bbus, bf = _susceptance_matrices(nodes, lines)
    keep = [i for i, node in enumerate(nodes) if node != slack_node]
    theta = np.zeros(len(nodes))
    theta[keep] = np.linalg.solve(bbus[np.ix_(keep, keep)], p[keep])
    return bf @ theta


def flow_update(f0, ptdf, delta_inj):
    """Linearised flows after injection changes: ``F0 + PTDF @ delta``."""
    ptdf = check_matrix(ptdf, name="ptdf")
    f0 = check_vector(f0, ptdf.shape[0], "f0")
    delta = check_vector(delta_inj, ptdf.shape[1], "delta_inj")
    return f0 + ptdf @ delta


def validate_zone(zone):
    """List of invariant violations; empty when the zone is well formed."""
    out = []
    seen = set()
    for node in zone.nodes:
        if node in seen:
            out.append(f"nodes: duplicate identifier {node!r}")
        seen.add(node)
    names = set()
    for line in zone.lines:
        if line.name in names:
            out.append(f"lines: duplicate line name {line.name!r}")
        names.add(line.name)
        out.extend(line.violations())
        for end in (line.from_node, line.to_node):
            if end not in seen:
                out.append(f"lines: endpoint {end!r} of line {line.name} is not a zone node")
    for field_name in ("battery_nodes", "curtailable_nodes"):
        group = getattr(zone, field_name)
        if len(set(group)) != len(group):
            out.append(f"{field_name}: duplicate identifiers")
        for node in group:
            if node not in seen:
                out.append(f"{field_name}: node {node!r} is not a zone node")
    ptdf = zone.ptdf
    if ptdf.shape != (zone.n_lines, zone.n_nodes):
        out.append(f"ptdf: shape {ptdf.shape} does not match "
                   f"({zone.n_lines} lines, {zone.n_nodes} nodes)")
        return out
    for l, n in zip(*np.nonzero(~np.isfinite(ptdf) | (np.abs(ptdf) > 1.0))):
        out.append(f"ptdf: entry for line {zone.lines[l].name}, node {zone.nodes[n]!r} "
                   f"is {ptdf[l, n]}, outside [-1, 1]")
    if zone.slack_node in seen:
        col = ptdf[:, zone.nodes.index(zone.slack_node)]
        if np.any(col != 0.0):
            out.append(f"ptdf: slack node {zone.slack_node!r} column is not identically zero")
    return out


class DCFlowModel(TransformerMixin, BaseEstimator):
    """Maps nodal injection changes to line flow changes through the PTDF.

    ``fit`` takes a :class:`Zone`; ``transform`` takes an array of shape
    (n_samples, n_nodes) of injection deltas and returns (n_samples, n_lines)
    flow deltas. ``base_flows``, when given, is added to every output row.
    """

    def __init__(self, base_flows=None):
        self.base_flows = base_flows

    def fit(self, zone, y=None):
        problems = validate_zone(zone)
        if problems:
            raise ValueError("invalid zone: " + "; ".join(problems))
        self.ptdf_ = np.array(zone.ptdf)
        self.n_features_in_ = zone.n_nodes
        self.line_names_ = zone.line_names
        if self.base_flows is None:
            self.offset_ = np.zeros(zone.n_lines)
        else:
            self.offset_ = check_vector(self.base_flows, zone.n_lines, "base_flows")
        return self

    def transform(self, X):
        check_is_fitted(self, "ptdf_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return self.offset_ + X @ self.ptdf_.T
