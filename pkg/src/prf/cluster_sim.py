"""Deterministic single-process simulator of the distributed training design.

Feature subsets are statically allocated to simulated slave nodes by size
(whole where they fit, fragmented across consecutive nodes where they do
not). Each tree's training unrolls into a staged DAG of gain-ratio tasks
(pinned to the nodes hosting their subset) and node-splitting tasks
(dispatched FIFO to any node). A discrete event loop with a fixed tie-break
replays the DAGs against a simple cost model and accumulates byte and time
ledgers. Parallelism is modeled, never executed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from .dataset import (
    FeatureSubset,
    Schema,
    SUBSET_HEADER_BYTES,
    column_entry_bytes,
    subset_size_bytes,
)
from .tree import DecisionTree, Internal

T_GR = "T_GR"
T_NS = "T_NS"
NODE_LOCAL = "NODE_LOCAL"
ANY = "ANY"


class SimulationError(ValueError):
    pass


# ------------------------------------------------------------- allocation

@dataclass(frozen=True)
class SubsetSpec:
    """Size facts about one feature subset, enough to place it."""

    subset_id: int
    n_rows: int
    entry_bytes: int
    header_bytes: int = SUBSET_HEADER_BYTES

    @property
    def size_bytes(self) -> int:
        return self.header_bytes + self.n_rows * self.entry_bytes


def spec_of_subset(fs: FeatureSubset) -> SubsetSpec:
    return SubsetSpec(
        subset_id=fs.feature_index, n_rows=fs.n,
        entry_bytes=(subset_size_bytes(fs) - SUBSET_HEADER_BYTES) // max(fs.n, 1)
        if fs.n else column_entry_bytes(fs.kind, fs.n_classes == 0),
    )


def specs_from_schema(schema: Schema, n_rows: int) -> list[SubsetSpec]:
    return [
        SubsetSpec(subset_id=j, n_rows=n_rows,
                   entry_bytes=column_entry_bytes(f.kind, schema.is_regression))
        for j, f in enumerate(schema.inputs)
    ]


@dataclass
class Placement:
    node_id: int
    row_lo: int
    row_hi: int
    size_bytes: int

    @property
    def n_rows(self) -> int:
        return self.row_hi - self.row_lo


@dataclass
class SlaveNode:
    node_id: int
    capacity_bytes: int
    rack_tag: int = 0
    available_bytes: int = -1
    hosted: list[tuple[int, Placement]] = field(default_factory=list)

    def __post_init__(self):
        if self.available_bytes < 0:
            self.available_bytes = self.capacity_bytes


def make_nodes(descriptions: list[dict]) -> list[SlaveNode]:
    return [
        SlaveNode(node_id=d["node_id"], capacity_bytes=d["capacity_bytes"],
                  rack_tag=d.get("rack_tag", 0))
        for d in descriptions
    ]


@dataclass
class AllocationPlan:
    entries: dict[int, list[int]]          # subset id -> hosting node ids
    scenario: dict[int, str]               # subset id -> "a" | "b" | "c"
    placements: dict[int, list[Placement]]
    subset_rows: dict[int, int]

    def hosts(self, subset_id: int) -> list[int]:
        try:
            return self.entries[subset_id]
        except KeyError:
            raise SimulationError(f"subset {subset_id} not in allocation plan") from None


def allocate(subsets: list[SubsetSpec], nodes: list[SlaveNode]) -> AllocationPlan:
    """Place subsets on nodes in index order, nodes ordered by rack then id.

    A subset goes whole onto the first node with room; otherwise it is split
    into contiguous row ranges that fill consecutive nodes. Node available
    space is decremented in place.
    """
    ordered = sorted(nodes, key=lambda s: (s.rack_tag, s.node_id))
    plan = AllocationPlan(entries={}, scenario={}, placements={}, subset_rows={})
    for spec in subsets:
        placements: list[Placement] = []
        whole = next((n for n in ordered if n.available_bytes >= spec.size_bytes), None)
        if whole is not None:
            scenario = "b" if whole.available_bytes == spec.size_bytes else "c"
            p = Placement(whole.node_id, 0, spec.n_rows, spec.size_bytes)
            whole.available_bytes -= spec.size_bytes
            whole.hosted.append((spec.subset_id, p))
            placements.append(p)
        else:
            scenario = "a"
            remaining = spec.n_rows
            row_lo = 0
            for node in ordered:
                overhead = spec.header_bytes if not placements else 0
                fit = (node.available_bytes - overhead) // spec.entry_bytes
                if fit <= 0:
                    continue
                take = min(fit, remaining)
                size = overhead + take * spec.entry_bytes
                p = Placement(node.node_id, row_lo, row_lo + take, size)
                node.available_bytes -= size
                node.hosted.append((spec.subset_id, p))
                placements.append(p)
                row_lo += take
                remaining -= take
                if remaining == 0:
                    break
            if remaining > 0:
                raise SimulationError(
                    f"insufficient capacity: subset {spec.subset_id} "
                    f"({spec.size_bytes} bytes) cannot be placed")
        plan.entries[spec.subset_id] = [p.node_id for p in placements]
        plan.scenario[spec.subset_id] = scenario
        plan.placements[spec.subset_id] = placements
        plan.subset_rows[spec.subset_id] = spec.n_rows
    return plan


# ---------------------------------------------------------------- task DAG

@dataclass(frozen=True)
class NodeRecord:
    """One tree node's contribution to the task DAG."""

    path: str                       # "" for the root, else branch labels joined by "/"
    depth: int
    evaluated_features: tuple[int, ...]
    split_feature: int | None
    n_samples: int
    parent_path: str | None


@dataclass(frozen=True)
class TreeTrace:
    tree_index: int
    records: tuple[NodeRecord, ...]


def trace_from_tree(tree: DecisionTree) -> TreeTrace:
    """Recover the staged evaluation structure from a trained tree.

    The root always contributes a stage (its features are evaluated even when
    the result is a leaf); deeper nodes contribute only where they split.
    Categorical features consumed on the path are dropped from the usable set.
    """
    records: list[NodeRecord] = []

    def walk(node, path: str, depth: int, usable: tuple[int, ...], parent: str | None):
        is_internal = isinstance(node, Internal)
        if depth > 0 and not is_internal:
            return
        split = node.rule.feature_index if is_internal else None
        records.append(NodeRecord(
            path=path, depth=depth, evaluated_features=usable,
            split_feature=split, n_samples=node.n_samples, parent_path=parent))
        if not is_internal:
            return
        if node.rule.kind == "multiway":
            child_usable = tuple(j for j in usable if j != split)
        else:
            child_usable = usable
        for branch in node.children:
            child_path = branch if path == "" else f"{path}/{branch}"
            walk(node.children[branch], child_path, depth + 1, child_usable, path)

    walk(tree.root, "", 0, tuple(sorted(tree.selected_features)), None)
    return TreeTrace(tree_index=tree.tree_index, records=tuple(records))


@dataclass(frozen=True)
class SimTask:
    task_id: str
    kind: str                  # T_GR or T_NS
    tree_i: int
    node_path: str
    feature_j: int | None
    locality: str
    deps: tuple[str, ...]
    est_rows: int


@dataclass
class TaskDag:
    tree_index: int
    tasks: dict[str, SimTask]
    stages: list[list[str]]
    edges: list[tuple[str, str]]


def _ns_id(tree_i: int, stage: int, path: str) -> str:
    return f"t{tree_i}.s{stage}.ns.{path or 'root'}"


def build_dag(trace: TreeTrace, plan: AllocationPlan) -> TaskDag:
    """Expand a tree trace into staged gain-ratio and node-splitting tasks."""
    by_path = {r.path: r for r in trace.records}
    if "" not in by_path:
        raise SimulationError("malformed trace: no root record")
    tasks: dict[str, SimTask] = {}
    stages: dict[int, list[str]] = {}
    edges: list[tuple[str, str]] = []
    for r in sorted(trace.records, key=lambda r: (r.depth, r.path)):
        if not r.evaluated_features:
            raise SimulationError(f"malformed trace: node {r.path!r} evaluates nothing")
        if r.depth > 0:
            parent = by_path.get(r.parent_path)
            if parent is None or parent.depth != r.depth - 1:
                raise SimulationError(f"malformed trace: node {r.path!r} has no parent")
        stage = r.depth + 1
        parent_ns = _ns_id(trace.tree_index, stage - 1, r.parent_path) if r.depth else None
        gr_ids = []
        for j in r.evaluated_features:
            plan.hosts(j)  # raises if the subset is unplaced
            tid = f"t{trace.tree_index}.s{stage}.gr.{r.path or 'root'}.f{j}"
            deps = (parent_ns,) if parent_ns else ()
            tasks[tid] = SimTask(
                task_id=tid, kind=T_GR, tree_i=trace.tree_index,
                node_path=r.path, feature_j=j, locality=NODE_LOCAL,
                deps=deps, est_rows=r.n_samples)
            gr_ids.append(tid)
            if parent_ns:
                edges.append((parent_ns, tid))
        ns_id = _ns_id(trace.tree_index, stage, r.path)
        tasks[ns_id] = SimTask(
            task_id=ns_id, kind=T_NS, tree_i=trace.tree_index,
            node_path=r.path, feature_j=None, locality=ANY,
            deps=tuple(gr_ids), est_rows=len(gr_ids))
        edges.extend((g, ns_id) for g in gr_ids)
        stages.setdefault(stage, []).extend(gr_ids + [ns_id])
    stage_list = [sorted(stages[s]) for s in sorted(stages)]
    return TaskDag(tree_index=trace.tree_index, tasks=tasks,
                   stages=stage_list, edges=edges)


# ------------------------------------------------------------ cost model

@dataclass(frozen=True)
class CostModel:
    task_cost_per_row_s: float = 1e-6
    bandwidth_bytes_per_s: float = 1e9
    task_launch_overhead_s: float = 1e-3
    result_record_bytes: int = 64
    stats_record_bytes: int = 64

    def task_time(self, est_rows: float) -> float:
        return self.task_launch_overhead_s + self.task_cost_per_row_s * est_rows

    def transfer_time(self, n_bytes: int) -> float:
        if math.isinf(self.bandwidth_bytes_per_s):
            return 0.0
        return n_bytes / self.bandwidth_bytes_per_s

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class CostLedger:
    data_volume_cells: int = 0
    comm_bytes_allocation: int = 0
    comm_bytes_training: int = 0
    per_node_busy: dict[int, float] = field(default_factory=dict)
    makespan: float = 0.0
    queue_empty_polls: int = 0

    def to_dict(self) -> dict:
        return {
            "data_volume_cells": self.data_volume_cells,
            "comm_bytes_allocation": self.comm_bytes_allocation,
            "comm_bytes_training": self.comm_bytes_training,
            "per_node_busy": {str(k): v for k, v in sorted(self.per_node_busy.items())},
            "makespan": self.makespan,
            "queue_empty_polls": self.queue_empty_polls,
        }


# -------------------------------------------------------------- scheduler

def _event(kind, time, **extra):
    return {"event": kind, "time": time, **extra}


def schedule(dags: list[TaskDag], plan: AllocationPlan, nodes: list[SlaveNode],
             cost_model: CostModel, dsi_bytes: int = 0,
             data_volume_cells: int = 0) -> tuple[list[dict], CostLedger]:
    """Replay all task DAGs on the modeled cluster.

    Gain-ratio tasks run on the node(s) hosting their subset; fragmented
    subsets run one piece per fragment host and ship partition statistics to
    the lowest-id host. Node-splitting tasks leave a FIFO queue for whichever
    node frees up first. Ties everywhere break on (time, task id), so a rerun
    reproduces the trace exactly.
    """
    tasks: dict[str, SimTask] = {}
    for dag in dags:
        tasks.update(dag.tasks)
    dependents: dict[str, list[str]] = {t: [] for t in tasks}
    pending: dict[str, int] = {}
    for t in tasks.values():
        pending[t.task_id] = len(t.deps)
        for d in t.deps:
            if d not in tasks:
                raise SimulationError(f"task {t.task_id} depends on unknown {d}")
            dependents[d].append(t.task_id)

    ledger = CostLedger(data_volume_cells=data_volume_cells)
    events: list[dict] = []
    node_free = {n.node_id: 0.0 for n in nodes}
    busy = {n.node_id: 0.0 for n in nodes}
    node_order = sorted(node_free)

    # allocation phase: subsets shipped from the master, index table to every node
    for sid in sorted(plan.placements):
        for p in plan.placements[sid]:
            events.append(_event("transfer", 0.0, src="master", dst=p.node_id,
                                 bytes=p.size_bytes, payload="feature_data",
                                 phase="allocation", subset=sid))
            ledger.comm_bytes_allocation += p.size_bytes
    if dsi_bytes:
        for nid in node_order:
            events.append(_event("transfer", 0.0, src="master", dst=nid,
                                 bytes=dsi_bytes, payload="index_table",
                                 phase="allocation"))
            ledger.comm_bytes_allocation += dsi_bytes

    completion: dict[str, tuple[float, int]] = {}  # task -> (end time, result node)
    ready_at: dict[str, float] = {}
    heap: list[tuple[float, str]] = []
    for tid, t in sorted(tasks.items()):
        if pending[tid] == 0:
            ready_at[tid] = 0.0
            heapq.heappush(heap, (0.0, tid))

    def run_on(node_id: int, earliest: float, duration: float, tid: str) -> float:
        start = max(earliest, node_free[node_id])
        end = start + duration
        node_free[node_id] = end
        busy[node_id] += duration
        events.append(_event("task_start", start, node=node_id, task=tid))
        events.append(_event("task_end", end, node=node_id, task=tid))
        return end

    def finish(tid: str, end: float, result_node: int):
        completion[tid] = (end, result_node)
        task = tasks[tid]
        for child_id in dependents[tid]:
            child = tasks[child_id]
            if task.kind == T_NS and child.kind == T_GR:
                # split result distributed to the child's hosting nodes
                arrive = end
                for p in plan.placements[child.feature_j]:
                    if p.node_id != result_node:
                        dt = cost_model.transfer_time(cost_model.result_record_bytes)
                        events.append(_event(
                            "transfer", end, src=result_node, dst=p.node_id,
                            bytes=cost_model.result_record_bytes,
                            payload="result_record", phase="training", task=tid))
                        ledger.comm_bytes_training += cost_model.result_record_bytes
                        arrive = max(arrive, end + dt)
            else:
                arrive = end
            ready_at[child_id] = max(ready_at.get(child_id, 0.0), arrive)
            pending[child_id] -= 1
            if pending[child_id] == 0:
                heapq.heappush(heap, (ready_at[child_id], child_id))

    done = 0
    while heap:
        ready, tid = heapq.heappop(heap)
        task = tasks[tid]
        if task.kind == T_GR:
            placements = plan.placements[task.feature_j]
            if len(placements) == 1:
                end = run_on(placements[0].node_id, ready,
                             cost_model.task_time(task.est_rows), tid)
                finish(tid, end, placements[0].node_id)
            else:
                total_rows = max(plan.subset_rows[task.feature_j], 1)
                primary = min(p.node_id for p in placements)
                overall = 0.0
                for p in sorted(placements, key=lambda p: p.node_id):
                    share = task.est_rows * (p.n_rows / total_rows)
                    end = run_on(p.node_id, ready, cost_model.task_time(share),
                                 f"{tid}@n{p.node_id}")
                    if p.node_id != primary:
                        dt = cost_model.transfer_time(cost_model.stats_record_bytes)
                        events.append(_event(
                            "transfer", end, src=p.node_id, dst=primary,
                            bytes=cost_model.stats_record_bytes,
                            payload="partition_stats", phase="training", task=tid))
                        ledger.comm_bytes_training += cost_model.stats_record_bytes
                        end += dt
                    overall = max(overall, end)
                finish(tid, overall, primary)
        else:
            # FIFO dispatch to the node that frees up first
            node_id = min(node_order, key=lambda n: (node_free[n], n))
            earliest = ready
            for dep in task.deps:
                dep_end, dep_node = completion[dep]
                if dep_node != node_id:
                    dt = cost_model.transfer_time(cost_model.result_record_bytes)
                    events.append(_event(
                        "transfer", dep_end, src=dep_node, dst=node_id,
                        bytes=cost_model.result_record_bytes,
                        payload="result_record", phase="training", task=dep))
                    ledger.comm_bytes_training += cost_model.result_record_bytes
                    earliest = max(earliest, dep_end + dt)
            end = run_on(node_id, earliest, cost_model.task_time(task.est_rows), tid)
            finish(tid, end, node_id)
        done += 1
        if not heap and done < len(tasks):
            ledger.queue_empty_polls += 1

    if done < len(tasks):
        raise SimulationError("task graph has a cycle or unreachable tasks")

    ledger.per_node_busy = busy
    ledger.makespan = max((t for t, _ in completion.values()), default=0.0)
    events.sort(key=lambda e: (e["time"], e["event"], str(e.get("task", "")),
                               str(e.get("node", e.get("dst", "")))))
    return events, ledger


# ------------------------------------------------------------ volume math

@dataclass(frozen=True)
class VolumeBreakdown:
    strategy: str
    data_cells: int
    index_cells: int

    @property
    def total_cells(self) -> int:
        return self.data_cells + self.index_cells


def data_volume(n_rows: int, m_features: int, k_trees: int,
                strategy: str) -> VolumeBreakdown:
    """Training-data cell counts under both sampling strategies.

    Horizontal copying materializes every bootstrap sample (N*M*k cells);
    multiplexed column subsets hold N*2*(M-1) data cells regardless of k,
    plus k*N index cells.
    """
    if n_rows < 1 or m_features < 1 or k_trees < 1:
        raise SimulationError("n_rows, m_features, k_trees must all be >= 1")
    if strategy == "horizontal-copy":
        return VolumeBreakdown(strategy, n_rows * m_features * k_trees, 0)
    if strategy == "prf-multiplex":
        return VolumeBreakdown(strategy, n_rows * 2 * (m_features - 1),
                               k_trees * n_rows)
    raise SimulationError(f"unknown strategy {strategy!r}")


def speedup_report(times: dict, standalone: float) -> dict:
    """Normalize the standalone makespan to 1 and report reciprocal speedups."""
    if standalone <= 0:
        raise SimulationError("standalone time must be positive")
    report = {}
    for scenario, t in times.items():
        if t <= 0:
            raise SimulationError(f"non-positive time for scenario {scenario!r}")
        report[scenario] = {
            "normalized_time": t / standalone,
            "speedup": standalone / t,
        }
    return report
