"""Cycle model for specialized loop kernels.

Per kernel the model derives, for one cache line's worth of iterations
(delta = elements per line): the in-core arithmetic time T_OL, the load/store
time T_nOL, and per level-pair data-transfer contributions.  The single-core
prediction per residency level is

    T_ECM(level) = max(T_OL, T_nOL + T_data(level))

and the multicore value divides by the core count, floored by the saturated
memory-transfer cost taken from the benchmark bandwidth table.

Execution-unit classes are assumed to schedule independently, so class times
combine by max, not by sum.  Store traffic is charged write-allocate: a cache
line that is written without having been read is loaded first.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import expressions as ex
from .codegen import GeneratedKernel
from .documents import MEM, MachineModel
from .errors import ModelError


class EvalCounter:
    """Counts model evaluations so reuse tests can assert cold/warm behavior."""

    def __init__(self) -> None:
        self.count = 0

    def bump(self) -> None:
        self.count += 1

    def reset(self) -> None:
        self.count = 0


EVALUATIONS = EvalCounter()


@dataclass(frozen=True)
class ArrayStream:
    name: str
    elements: int
    read: bool
    written: bool
    load_lines_per_unit: float  # cache lines loaded per delta iterations
    store_lines_per_unit: float


@dataclass(frozen=True)
class KernelCharacterization:
    """Per-iteration operation counts plus the streamed arrays."""

    adds: float
    muls: float
    fmas: float
    divs: float
    loads: float
    stores: float
    streams: tuple[ArrayStream, ...]

    def stream(self, name: str) -> ArrayStream:
        for s in self.streams:
            if s.name == name:
                return s
        raise ModelError(f"no stream named {name!r}")


def _count_flops(expr: ex.Expr, fuse_fma: bool) -> tuple[float, float, float, float]:
    """(adds, muls, fmas, divs) for one evaluation of ``expr``.

    FMA fusion greedily pairs a multiply operand feeding an add or subtract.
    Calls are charged to the divider (slow-path unit); negation is free.
    """
    if isinstance(expr, (ex.Num, ex.Name)):
        return (0.0, 0.0, 0.0, 0.0)
    if isinstance(expr, ex.Index):
        totals = [0.0, 0.0, 0.0, 0.0]
        for idx in expr.indices:
            part = _count_flops(idx, fuse_fma)
            totals = [a + b for a, b in zip(totals, part)]
        return tuple(totals)
    if isinstance(expr, ex.Neg):
        return _count_flops(expr.operand, fuse_fma)
    if isinstance(expr, ex.Call):
        totals = [0.0, 0.0, 0.0, 1.0]
        for arg in expr.args:
            part = _count_flops(arg, fuse_fma)
            totals = [a + b for a, b in zip(totals, part)]
        return tuple(totals)
    if isinstance(expr, ex.Bin):
        left = expr.left
        right = expr.right
        if expr.op in ("+", "-") and fuse_fma:
            for mul, other in ((right, left), (left, right)):
                if isinstance(mul, ex.Bin) and mul.op == "*":
                    a1, m1, f1, d1 = _count_flops(mul.left, fuse_fma)
                    a2, m2, f2, d2 = _count_flops(mul.right, fuse_fma)
                    a3, m3, f3, d3 = _count_flops(other, fuse_fma)
                    return (a1 + a2 + a3, m1 + m2 + m3, f1 + f2 + f3 + 1.0,
                            d1 + d2 + d3)
        a1, m1, f1, d1 = _count_flops(left, fuse_fma)
        a2, m2, f2, d2 = _count_flops(right, fuse_fma)
        adds = a1 + a2 + (1.0 if expr.op in ("+", "-") else 0.0)
        muls = m1 + m2 + (1.0 if expr.op == "*" else 0.0)
        divs = d1 + d2 + (1.0 if expr.op == "/" else 0.0)
        return (adds, muls, f1 + f2, divs)
    raise TypeError(f"not an expression node: {expr!r}")


def _count_array_reads(expr: ex.Expr) -> int:
    return sum(1 for node in ex.iter_nodes(expr) if isinstance(node, ex.Index))


def characterize(g: GeneratedKernel, machine: MachineModel) -> KernelCharacterization:
    """Walk the specialized statements and normalize counts to one iteration.

    Traffic counts the distinct index instantiations of every access: reuse
    across loops that do not index an array is assumed to hit its residency
    level for free (no reuse-distance analysis).
    """
    if g.n is None:
        raise ModelError(f"kernel {g.kernel_id}: characterization needs a fixed n")
    declared = {name: (ctype, extents) for name, ctype, extents in g.decls}
    fuse = (machine.throughput_of("FMA") or 0.0) > 0.0

    flops = [0.0, 0.0, 0.0, 0.0]
    loads = 0.0
    stores = 0.0
    touched: dict[str, dict[str, object]] = {}

    for path, stmts in g.statement_groups():
        group_execs = 1.0
        loop_vars = []
        for loop in path:
            group_execs *= loop.trips.value
            loop_vars.append((loop.var, loop.trips.value))
        reads: dict[str, set[str]] = {}
        writes: dict[str, set[str]] = {}
        for stmt in stmts:
            for node in ex.iter_nodes(stmt.rhs):
                if isinstance(node, ex.Index):
                    if node.base not in declared:
                        raise ModelError(
                            f"kernel {g.kernel_id}: statement references "
                            f"undeclared array {node.base!r}"
                        )
                    reads.setdefault(node.base, set()).add(
                        "|".join(ex.to_c(i) for i in node.indices))
            part = _count_flops(stmt.rhs, fuse)
            flops = [a + b * group_execs for a, b in zip(flops, part)]
            loads += _count_array_reads(stmt.rhs) * group_execs
            if isinstance(stmt.lhs, ex.Index):
                if stmt.lhs.base not in declared:
                    raise ModelError(
                        f"kernel {g.kernel_id}: statement writes "
                        f"undeclared array {stmt.lhs.base!r}"
                    )
                stores += group_execs
                loads += sum(_count_array_reads(i) for i in stmt.lhs.indices) * group_execs
                writes.setdefault(stmt.lhs.base, set()).add(
                    "|".join(ex.to_c(i) for i in stmt.lhs.indices))

        def distinct(tuple_text: str) -> float:
            count = 1.0
            for var, trips in loop_vars:
                names = set()
                for part_text in tuple_text.split("|"):
                    names |= ex.free_names(ex.parse_expr(part_text))
                if var in names:
                    count *= trips
            return count

        for base in sorted(set(reads) | set(writes)):
            info = touched.setdefault(
                base, {"read": False, "written": False, "load_elems": 0.0,
                       "store_elems": 0.0})
            r = reads.get(base, set())
            w = writes.get(base, set())
            info["read"] = info["read"] or bool(r)
            info["written"] = info["written"] or bool(w)
            info["load_elems"] += sum(distinct(t) for t in r | w)
            info["store_elems"] += sum(distinct(t) for t in w)

    beta = g.beta if g.beta > 0 else 1.0
    streams = []
    for base in sorted(touched):
        ctype, extents = declared[base]
        if any(e < 0 for e in extents):
            raise ModelError(f"kernel {g.kernel_id}: array {base} has symbolic extent")
        elements = 1
        for e in extents:
            elements *= e
        info = touched[base]
        streams.append(ArrayStream(
            name=base,
            elements=elements,
            read=bool(info["read"]),
            written=bool(info["written"]),
            load_lines_per_unit=info["load_elems"] / beta,
            store_lines_per_unit=info["store_elems"] / beta,
        ))

    return KernelCharacterization(
        adds=flops[0] / beta,
        muls=flops[1] / beta,
        fmas=flops[2] / beta,
        divs=flops[3] / beta,
        loads=loads / beta,
        stores=stores / beta,
        streams=tuple(streams),
    )


# --------------------------------------------------------------------------
# Single-core prediction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ECMPrediction:
    t_ol: float
    t_nol: float
    contributions: tuple[tuple[str, float], ...]  # pair key -> transfer cycles
    penalties: tuple[tuple[str, float], ...]  # pair key -> penalty cycles
    overlapped: tuple[tuple[str, float], ...]  # contributions hidden by overlap
    t_data: tuple[tuple[str, float], ...]  # level -> cumulative cycles
    t_ecm: tuple[tuple[str, float], ...]  # level -> max(T_OL, T_nOL + T_data)
    deepest_level: str
    mem_lines_per_unit: float
    delta: int

    def t_data_at(self, level: str) -> float:
        return dict(self.t_data)[level]

    def t_ecm_at(self, level: str) -> float:
        return dict(self.t_ecm)[level]

    @property
    def value(self) -> float:
        """Single-core prediction at the level the data actually lives at."""
        return self.t_ecm_at(self.deepest_level)


def _class_time(count: float, klass: str, delta: int, machine: MachineModel) -> float:
    if count <= 0:
        return 0.0
    throughput = machine.throughput_of(klass)
    if not throughput:
        raise ModelError(
            f"machine {machine.name} has no throughput entry for {klass} "
            f"but the kernel issues such operations"
        )
    return count * delta / throughput


def ecm_single(
    c: KernelCharacterization,
    residency: dict[str, str],
    machine: MachineModel,
    delta: int | None = None,
) -> ECMPrediction:
    """Single-core prediction from per-iteration counts and per-array residency."""
    EVALUATIONS.bump()
    delta = delta if delta is not None else machine.elements_per_line()

    t_ol = max(
        _class_time(c.adds, "ADD", delta, machine),
        _class_time(c.muls, "MUL", delta, machine),
        _class_time(c.fmas, "FMA", delta, machine),
        _class_time(c.divs, "DIV", delta, machine),
    )
    t_nol = max(
        _class_time(c.loads, "LOAD", delta, machine),
        _class_time(c.stores, "STORE", delta, machine),
    )

    depth_of = {}
    for stream in c.streams:
        level = residency.get(stream.name)
        if level is None:
            raise ModelError(f"no residency level assigned to array {stream.name!r}")
        depth_of[stream.name] = machine.level_depth(level)

    pairs = machine.level_pairs()
    contributions = []
    penalties = []
    overlapped = []
    mem_lines = 0.0
    for index, pair in enumerate(pairs):
        lines = sum(
            s.load_lines_per_unit + s.store_lines_per_unit
            for s in c.streams
            if depth_of[s.name] >= index + 1
        )
        cost = lines * machine.transfer_cost(pair)
        pen = lines * machine.penalty(pair)
        key = machine.pair_key(pair)
        if machine.pair_overlaps(pair):
            overlapped.append((key, cost + pen))
            contributions.append((key, 0.0))
            penalties.append((key, 0.0))
        else:
            contributions.append((key, cost))
            penalties.append((key, pen))
        if pair[1] == MEM:
            mem_lines = lines

    level_names = [lvl.name for lvl in machine.caches] + [MEM]
    t_data = []
    t_ecm = []
    running = 0.0
    for index, level in enumerate(level_names):
        if index > 0:
            running += contributions[index - 1][1] + penalties[index - 1][1]
        t_data.append((level, running))
        t_ecm.append((level, max(t_ol, t_nol + running)))

    deepest = max((d for d in depth_of.values()), default=0)

    return ECMPrediction(
        t_ol=t_ol,
        t_nol=t_nol,
        contributions=tuple(contributions),
        penalties=tuple(penalties),
        overlapped=tuple(overlapped),
        t_data=tuple(t_data),
        t_ecm=tuple(t_ecm),
        deepest_level=level_names[deepest],
        mem_lines_per_unit=mem_lines,
        delta=delta,
    )


def ecm_multicore(p: ECMPrediction, tau: int, machine: MachineModel) -> float:
    """Cycles per cache-line unit at tau cores.

    Scales the single-core prediction by the core count; predictions for
    memory-resident data are floored by the saturated transfer cost derived
    from the bandwidth benchmark at tau active cores.
    """
    if not 1 <= tau <= machine.cores:
        raise ModelError(f"core count {tau} outside [1, {machine.cores}]")
    base = p.value / tau
    if p.deepest_level == MEM:
        bytes_per_unit = p.mem_lines_per_unit * machine.cache_line
        t_sat = bytes_per_unit * machine.clock / machine.bandwidth_at(tau)
        return max(base, t_sat)
    return base


def debug_table(p: ECMPrediction) -> str:
    """Cycle terms in the conventional contribution notation."""
    parts = [f"{p.t_ol:.2f}", f"{p.t_nol:.2f}"]
    parts += [f"{cycles:.2f}" for _, cycles in p.contributions]
    head = " | ".join(parts) + " cy/CL"
    ecm = " | ".join(f"{lvl}: {cy:.2f}" for lvl, cy in p.t_ecm)
    return f"{head}\n{ecm} cy/CL"
