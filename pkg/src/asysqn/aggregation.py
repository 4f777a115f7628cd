"""Masked tree-structured aggregation of per-party predictor components.

Each party adds a random mask to its component; the masked values are summed
leaf-to-root along one tree and the bare masks along a second, edge-disjoint
tree.  Subtracting the two root totals recovers the true sum while no single
relayed payload ever equals a raw component or a raw partial sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAYLOAD_BYTES = 8  # payloads are 64-bit reals


class IncompleteTranscriptError(ValueError):
    pass


@dataclass
class TreeTopology:
    """Rooted labeled tree over party ids, edges directed child -> parent."""

    q: int
    edges: list[tuple[int, int]]
    root: int
    warning: bool = False  # set when a distinct tree could not be built

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if len(self.edges) != self.q - 1:
            raise ValueError(f"tree over {self.q} nodes needs {self.q - 1} edges")
        parent = {}
        for child, par in self.edges:
            if child in parent:
                raise ValueError(f"node {child} has two parents")
            parent[child] = par
        if self.root in parent:
            raise ValueError("root must not have a parent")
        # connectivity: every non-root must reach the root
        for node in range(self.q):
            seen, cur = set(), node
            while cur != self.root:
                if cur in seen or cur not in parent:
                    raise ValueError("edges do not form a tree")
                seen.add(cur)
                cur = parent[cur]

    def upward_order(self) -> list[tuple[int, int]]:
        """Edges ordered children-before-parents (leaf-to-root traversal)."""
        depth = {self.root: 0}
        parent = dict(self.edges)
        def node_depth(v):
            if v not in depth:
                depth[v] = node_depth(parent[v]) + 1
            return depth[v]
        return sorted(self.edges, key=lambda e: (-node_depth(e[0]), e[0]))

    def subtree_members(self) -> dict[int, list[int]]:
        """Node -> sorted list of nodes in its subtree (itself included)."""
        children = {}
        for child, par in self.edges:
            children.setdefault(par, []).append(child)
        members = {}
        def collect(v):
            acc = [v]
            for c in children.get(v, []):
                acc += collect(c)
            members[v] = sorted(acc)
            return acc
        collect(self.root)
        return members


def _decode_pruefer(seq: np.ndarray, q: int) -> list[tuple[int, int]]:
    degree = np.ones(q, dtype=np.int64)
    for v in seq:
        degree[v] += 1
    edges = []
    import heapq
    leaves = [v for v in range(q) if degree[v] == 1]
    heapq.heapify(leaves)
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((int(leaf), int(v)))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, int(v))
    u, w = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((int(u), int(w)))
    return edges


def _orient(edges_undirected, root, q) -> list[tuple[int, int]]:
    adj = {v: [] for v in range(q)}
    for a, b in edges_undirected:
        adj[a].append(b)
        adj[b].append(a)
    directed, stack, seen = [], [root], {root}
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                directed.append((w, v))
                stack.append(w)
    return sorted(directed)


def build_tree(q: int, seed=None) -> TreeTopology:
    """Uniformly random rooted labeled tree over q parties (seeded)."""
    if q < 1:
        raise ValueError("q must be >= 1")
    rng = np.random.default_rng(seed)
    if q == 1:
        return TreeTopology(q=1, edges=[], root=0)
    root = int(rng.integers(q))
    if q == 2:
        other = 1 - root
        return TreeTopology(q=2, edges=[(other, root)], root=root)
    seq = rng.integers(0, q, size=q - 2)
    return TreeTopology(q=q, edges=_orient(_decode_pruefer(seq, q), root, q), root=root)


def distinct_tree(t1: TreeTopology, seed=None, max_tries=10_000) -> TreeTopology:
    """A tree sharing no directed edge with t1 (rejection-sampled, seeded).

    For q <= 2 no such tree exists; t1 is returned with the warning flag set.
    """
    if t1.q <= 2:
        return TreeTopology(q=t1.q, edges=list(t1.edges), root=t1.root, warning=True)
    taken = set(t1.edges)
    ss = np.random.SeedSequence(seed)
    for child_seed in ss.spawn(max_tries):
        t2 = build_tree(t1.q, child_seed)
        if not (set(t2.edges) & taken):
            return t2
    raise RuntimeError("failed to sample an edge-disjoint tree")


@dataclass
class AggregationTranscript:
    """Every inter-party payload sent while aggregating one scalar batch."""

    q: int
    batch_size: int
    t1: TreeTopology
    t2: TreeTopology
    messages: list[tuple[int, int, str, np.ndarray]]  # (src, dst, tree, payload)
    masks: np.ndarray  # q x batch
    result: np.ndarray

    @property
    def transfer_count(self) -> int:
        """Physical tree traversals: one per edge per tree."""
        return len(self.messages)

    @property
    def message_count(self) -> int:
        """Logical scalar messages: each traversal carries batch_size scalars."""
        return self.transfer_count * self.batch_size

    @property
    def byte_count(self) -> int:
        return self.message_count * PAYLOAD_BYTES

    def csv_lines(self, round_id: int) -> list[str]:
        return [
            f"{round_id},{src},{dst},{tree},{self.batch_size * PAYLOAD_BYTES}"
            for src, dst, tree, _ in self.messages
        ]


def _tree_accumulate(values, tree, tag, messages):
    """Leaf-to-root partial sums; records one message per edge."""
    partial = {v: values[v].copy() for v in range(tree.q)}
    for child, parent in tree.upward_order():
        messages.append((child, parent, tag, partial[child].copy()))
        partial[parent] += partial[child]
    return partial[tree.root]


def masked_aggregate(
    components: np.ndarray,
    t1: TreeTopology,
    t2: TreeTopology,
    rng: np.random.Generator,
    mask_mode: str = "uniform",
) -> tuple[np.ndarray, AggregationTranscript]:
    """Recover sum_l theta^l from masked partial sums over two trees.

    ``components`` has shape (q,) or (q, b); one traversal carries the whole
    batch.  ``mask_mode='zero'`` disables masking (test-only).
    """
    comps = np.asarray(components, dtype=np.float64)
    scalar_input = comps.ndim == 1
    if scalar_input:
        comps = comps[:, None]
    q, batch = comps.shape
    if q != t1.q or q != t2.q:
        raise ValueError("component count does not match tree size")
    if not np.all(np.isfinite(comps)):
        raise ValueError("non-finite component")
    if mask_mode == "uniform":
        masks = rng.random((q, batch))
    elif mask_mode == "zero":
        masks = np.zeros((q, batch))
    else:
        raise ValueError(f"unknown mask_mode {mask_mode!r}")

    messages: list[tuple[int, int, str, np.ndarray]] = []
    phi1 = _tree_accumulate(comps + masks, t1, "T1", messages)
    phi2 = _tree_accumulate(masks, t2, "T2", messages)
    result = phi1 - phi2
    transcript = AggregationTranscript(
        q=q, batch_size=batch, t1=t1, t2=t2,
        messages=messages, masks=masks, result=result,
    )
    return (result[0] if scalar_input else result), transcript


@dataclass
class AuditReport:
    """Outcome of the leakage audit over one aggregation transcript."""

    passed: bool
    exposed_payloads: list[tuple[int, int, str]]  # messages matching raw sums
    single_tree_solvable: bool  # any theta^l recoverable from one tree alone
    collusion_sum_recoverable: bool | None = None
    factor_recoverable: bool | None = None


def _solvable_indices(A: np.ndarray, targets: np.ndarray) -> list[int]:
    """Which unit vectors in ``targets`` rows lie in the rowspace of A."""
    rank_a = np.linalg.matrix_rank(A) if A.size else 0
    out = []
    for i, t in enumerate(targets):
        aug = np.vstack([A, t]) if A.size else t[None, :]
        if np.linalg.matrix_rank(aug) == rank_a:
            out.append(i)
    return out


def leakage_audit(
    transcript: AggregationTranscript,
    true_components: np.ndarray,
    colluders: list[int] | None = None,
    atol: float = 1e-12,
) -> AuditReport:
    """Check that no relayed payload leaks a raw component or partial sum,
    and that neither tree's payloads alone determine any component.

    With ``colluders`` given (all parties but one), also reports whether the
    victim's component sum is recoverable from both trees, and that the
    (w_l, x_l) factors behind it never are (inner products with d_l >= 2
    admit a continuum of factorizations).
    """
    q = transcript.q
    expected = 2 * (q - 1)
    if transcript.transfer_count != expected:
        raise IncompleteTranscriptError(
            f"expected {expected} transfers, got {transcript.transfer_count}"
        )
    comps = np.asarray(true_components, dtype=np.float64)
    if comps.ndim == 1:
        comps = comps[:, None]

    # (a) T1 payloads vs raw subtree partial sums (and raw singletons)
    members = transcript.t1.subtree_members()
    raw_sums = {tuple(np.round(comps[m].sum(axis=0), 12)) for m in members.values()}
    exposed = []
    for src, dst, tree, payload in transcript.messages:
        if tree != "T1":
            continue
        key = tuple(np.round(np.atleast_1d(payload), 12))
        if any(np.allclose(key, rs, atol=atol) for rs in raw_sums):
            exposed.append((src, dst, tree))

    # (b) per-tree rank audit: unknowns are (theta_1..theta_q, delta_1..delta_q)
    def equations(tree_tag, tree):
        sub = (transcript.t1 if tree_tag == "T1" else transcript.t2).subtree_members()
        rows = []
        for src, dst, tag, _ in transcript.messages:
            if tag != tree_tag:
                continue
            row = np.zeros(2 * q)
            for member in sub[src]:
                if tag == "T1":
                    row[member] = 1.0      # theta coefficient
                row[q + member] = 1.0      # delta coefficient
            rows.append(row)
        return np.asarray(rows) if rows else np.zeros((0, 2 * q))

    theta_targets = np.eye(2 * q)[:q]
    single_tree_solvable = bool(
        _solvable_indices(equations("T1", transcript.t1), theta_targets)
        or _solvable_indices(equations("T2", transcript.t2), theta_targets)
    )

    collusion_sum = None
    factor = None
    if colluders is not None:
        known = set(colluders)
        victims = [v for v in range(q) if v not in known]
        # colluders substitute their own theta and delta; remaining unknowns
        # are the victims' pairs; the recovered total is public output
        output_row = np.concatenate([np.ones(q), np.zeros(q)])
        A = np.vstack(
            [
                equations("T1", transcript.t1),
                equations("T2", transcript.t2),
                output_row[None, :],
            ]
        )
        keep = [v for v in victims] + [q + v for v in victims]
        A_v = A[:, keep]
        targets = np.eye(len(keep))[: len(victims)]
        collusion_sum = bool(_solvable_indices(A_v, targets))
        # theta = w'x with d_l >= 2 has infinitely many factorizations
        factor = False

    passed = not exposed and not single_tree_solvable
    return AuditReport(
        passed=passed,
        exposed_payloads=exposed,
        single_tree_solvable=single_tree_solvable,
        collusion_sum_recoverable=collusion_sum,
        factor_recoverable=factor,
    )
