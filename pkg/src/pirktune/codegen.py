"""Kernel specialization, variant enumeration and code emission.

Specialization binds a kernel template variant to a concrete method, IVP
component and system size: loop bounds over the stage count become literals,
unroll-flagged loops are expanded, coefficient-table and constant references
are replaced by numeric literals (dropping terms whose coefficient is exactly
zero), and %RHS tokens are substituted by the component right-hand side.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from . import codeblocks as cb
from . import expressions as ex
from .documents import (
    RHS_TOKEN_RE,
    IVP,
    ImplSkeleton,
    KernelTemplate,
    KernelVariantDef,
    ODEMethod,
    expand_components,
)
from .errors import CodegenError, ScenarioError

# array names with engine-assigned meaning: coefficient tables come from the
# ODE method, the rest is solver state
COEFF_ARRAYS = ("A", "b", "c")
STATE_ARRAYS = ("y", "Y", "F", "dy")
SCALARS = ("h", "t")


# --------------------------------------------------------------------------
# Specialized kernels
# --------------------------------------------------------------------------

@dataclass
class GeneratedKernel:
    """A kernel template variant bound to method / IVP component / n."""

    kernel_id: str
    template_name: str
    kernel_name: str
    method_name: str
    ivp_name: str | None
    component_index: int | None
    n: int | None
    stages: int
    code: list[cb.Node]
    beta: float | None  # None while n is symbolic
    decls: tuple[tuple[str, str, tuple[int, ...]], ...]  # (name, ctype, extents)
    working_sets: tuple[str, ...]

    def statement_groups(self) -> list[tuple[tuple[cb.Loop, ...], list[ex.Assign]]]:
        """Statements grouped by their enclosing loop path."""
        groups: dict[tuple[int, ...], tuple[tuple[cb.Loop, ...], list[ex.Assign]]] = {}

        def visit(nodes: list[cb.Node], path: tuple[cb.Loop, ...]) -> None:
            for node in nodes:
                if isinstance(node, cb.Loop):
                    visit(node.body, path + (node,))
                elif isinstance(node, cb.Stmt):
                    key = tuple(id(l) for l in path)
                    groups.setdefault(key, (path, []))[1].append(node.assign)

        visit(self.code, ())
        return list(groups.values())

    def statements(self) -> list[ex.Assign]:
        return [stmt for _, stmts in self.statement_groups() for stmt in stmts]

    def referenced_arrays(self) -> set[str]:
        names: set[str] = set()
        for stmt in self.statements():
            names |= ex.array_names(stmt.rhs) | ex.array_names(stmt.lhs)
            if isinstance(stmt.lhs, ex.Index):
                names.add(stmt.lhs.base)
        return names

    def referenced_scalars(self) -> set[str]:
        loop_vars = {n.var for n in cb.walk(self.code) if isinstance(n, cb.Loop)}
        names: set[str] = set()
        for stmt in self.statements():
            names |= ex.free_names(stmt.rhs) | ex.free_names(stmt.lhs)
        return names - loop_vars


def make_kernel_id(
    kernel_name: str, ivp_name: str | None, component_index: int | None
) -> str:
    if ivp_name is None:
        return kernel_name
    return f"{kernel_name}@{ivp_name}.c{component_index}"


def specialize_kernel(
    template: KernelTemplate,
    variant: KernelVariantDef,
    method: ODEMethod,
    ivp: IVP | None = None,
    component_index: int | None = None,
    n: int | None = None,
    eliminate_zeros: bool = True,
) -> GeneratedKernel:
    if variant.contains_rhs and (ivp is None or component_index is None):
        raise CodegenError(
            f"kernel {variant.name} contains %RHS but no IVP component was supplied"
        )
    if not variant.contains_rhs and component_index is not None:
        raise CodegenError(
            f"kernel {variant.name} has no %RHS; an IVP component does not apply"
        )
    if variant.contains_rhs and n is None:
        raise CodegenError(
            f"kernel {variant.name}: component-restricted specialization needs a fixed n"
        )

    s = method.stages
    size_bindings: dict[str, ex.Expr] = {"s": ex.Num(float(s))}
    if n is not None:
        size_bindings["n"] = ex.Num(float(n))

    comp_start = 0
    comp_trips: int | None = None
    comp_code: str | None = None
    if variant.contains_rhs:
        ranges = expand_components(ivp, n)
        if not 0 <= component_index < len(ranges):
            raise CodegenError(
                f"IVP {ivp.name} has no component {component_index}"
            )
        comp_start, comp_trips = ranges[component_index]
        comp_code = ivp.components[component_index].code

    constants = ivp.constant_values() if ivp is not None else {}
    comp_map = dict(template.computations)

    def resolve_trips(trips: ex.Expr) -> ex.Expr:
        return ex.fold(ex.substitute(trips, size_bindings))

    def literal_coefficients(expr: ex.Expr) -> ex.Expr:
        def rewrite(node: ex.Index) -> ex.Expr:
            node = ex.Index(node.base, tuple(ex.fold(i) for i in node.indices))
            if node.base not in COEFF_ARRAYS:
                return node
            if not all(isinstance(i, ex.Num) for i in node.indices):
                return node
            idx = [int(i.value) for i in node.indices]
            try:
                if node.base == "A":
                    return ex.Num(method.A[idx[0]][idx[1]])
                if node.base == "b":
                    return ex.Num(method.b[idx[0]])
                return ex.Num(method.c[idx[0]])
            except IndexError:
                raise CodegenError(
                    f"kernel {variant.name}: coefficient index {ex.to_c(node)} "
                    f"out of range for s={s}"
                ) from None

        return ex.transform_indices(expr, rewrite)

    def build_statement(comp_id: str, var_bindings: dict[str, ex.Expr]) -> ex.Assign | None:
        text = comp_map.get(comp_id)
        if text is None:
            raise CodegenError(f"unknown computation id {comp_id!r}")
        stage_index_text = None
        if "%RHS" in text:
            def inline_rhs(m) -> str:
                nonlocal stage_index_text
                vec = m.group("vec")
                lbr = vec.find("[")
                if lbr < 0:
                    raise CodegenError(
                        f"%RHS vector {vec!r} must carry a stage index, e.g. Y[i]"
                    )
                stage_index_text = vec[lbr + 1 : vec.rindex("]")]
                return "(" + comp_code.replace("%in", vec) + ")"

            text = RHS_TOKEN_RE.sub(inline_rhs, text)
            if "%RHS" in text:
                raise CodegenError(f"malformed %RHS token in computation {comp_id!r}")
        stmt = ex.parse_statement(text)
        rhs = stmt.rhs
        lhs = stmt.lhs
        if stage_index_text is not None:
            # the IVP right-hand side sees the stage-shifted time t + c[i]*h
            stage_idx = ex.substitute(ex.parse_expr(stage_index_text), var_bindings)
            stage_time = ex.Bin(
                "+", ex.Name("t"),
                ex.Bin("*", ex.Index("c", (stage_idx,)), ex.Name("h")),
            )
            rhs = ex.substitute(rhs, {"t": stage_time})
        mapping = dict(var_bindings)
        for cname, cvalue in constants.items():
            mapping[cname] = ex.Num(cvalue)
        rhs = ex.substitute(rhs, mapping)
        lhs = ex.substitute(lhs, mapping)
        rhs = literal_coefficients(rhs)
        lhs_folded = ex.fold(literal_coefficients(lhs))
        if not isinstance(lhs_folded, (ex.Name, ex.Index)):
            raise CodegenError(f"computation {comp_id!r} target folded away")
        if eliminate_zeros:
            rhs = ex.fold(rhs)
            if rhs == lhs_folded:
                return None  # the whole statement reduced to a self-assignment
        else:
            rhs = ex.transform_indices(rhs, lambda node: ex.Index(
                node.base, tuple(ex.fold(i) for i in node.indices)))
        return ex.Assign(lhs_folded, rhs)

    def process(
        nodes: list[cb.Node], var_bindings: dict[str, ex.Expr], restrict: bool
    ) -> list[cb.Node]:
        out: list[cb.Node] = []
        for node in nodes:
            if isinstance(node, cb.Comp):
                stmt = build_statement(node.ident, var_bindings)
                if stmt is not None:
                    out.append(cb.Stmt(stmt))
            elif isinstance(node, cb.Pragma):
                out.append(cb.Pragma(node.text))
            elif isinstance(node, cb.Loop):
                trips = resolve_trips(node.trips)
                depends_on_n = "n" in ex.free_names(node.trips)
                start = 0
                if restrict and depends_on_n:
                    start, trip_count = comp_start, comp_trips
                    trips = ex.Num(float(trip_count))
                if node.unroll:
                    if not isinstance(trips, ex.Num):
                        raise CodegenError(
                            f"kernel {variant.name}: cannot unroll loop {node.var!r} "
                            f"with symbolic trip count {ex.to_c(node.trips)}"
                        )
                    for k in range(start, start + int(trips.value)):
                        inner = dict(var_bindings)
                        inner[node.var] = ex.Num(float(k))
                        out.extend(process(node.body, inner, restrict))
                else:
                    body = process(node.body, var_bindings, restrict)
                    out.append(cb.Loop(node.var, trips, False, body, start))
            else:
                raise CodegenError(f"unexpected node in kernel block: {node!r}")
        return out

    code = _select_component_phases(
        variant, template, component_index,
        len(ivp.components) if variant.contains_rhs else 0, process,
    )

    beta = _beta_of(code, variant.name)

    decls = []
    for d in template.datastructs:
        extents = []
        for dim in d.dim_exprs():
            resolved = resolve_trips(dim)
            extents.append(int(resolved.value) if isinstance(resolved, ex.Num) else -1)
        decls.append((d.name, d.ctype, tuple(extents)))

    return GeneratedKernel(
        kernel_id=make_kernel_id(
            variant.name, ivp.name if variant.contains_rhs else None, component_index
        ),
        template_name=template.name,
        kernel_name=variant.name,
        method_name=method.name,
        ivp_name=ivp.name if variant.contains_rhs else None,
        component_index=component_index if variant.contains_rhs else None,
        n=n,
        stages=s,
        code=code,
        beta=beta,
        decls=tuple(decls),
        working_sets=variant.working_sets,
    )


def _node_evaluates_rhs(node: cb.Node, rhs_comp_ids: set[str]) -> bool:
    if isinstance(node, cb.Comp):
        return node.ident in rhs_comp_ids
    if isinstance(node, cb.Loop):
        return any(_node_evaluates_rhs(child, rhs_comp_ids) for child in node.body)
    return False


def _select_component_phases(
    variant: KernelVariantDef,
    template: KernelTemplate,
    component_index: int | None,
    n_components: int,
    process,
) -> list[cb.Node]:
    """Assemble the specialized node list for one IVP component.

    Only the phases that evaluate the IVP are replicated and range-restricted
    per component; phases without IVP evaluations (e.g. a trailing stage-vector
    rebuild) run once over the full index range.  They attach to the first or
    last component instance so that executing the instances in component order
    reproduces the template's phase order globally -- interleaving a full-range
    phase between per-slice evaluations would corrupt neighbor reads of IVPs
    with non-zero access distance.
    """
    nodes = variant.code()
    if not variant.contains_rhs:
        return process(nodes, {}, False)

    rhs_ids = {ident for ident, text in template.computations if "%RHS" in text}
    flags = [_node_evaluates_rhs(node, rhs_comp_ids=rhs_ids) for node in nodes]
    rhs_positions = [i for i, f in enumerate(flags) if f]
    first, last = rhs_positions[0], rhs_positions[-1]
    if not all(flags[first:last + 1]):
        raise CodegenError(
            f"kernel {variant.name}: phases without IVP evaluations may not "
            f"sit between evaluating phases"
        )
    out: list[cb.Node] = []
    for idx, node in enumerate(nodes):
        if flags[idx]:
            out.extend(process([node], {}, True))
        elif idx < first and component_index == 0:
            out.extend(process([node], {}, False))
        elif idx > last and component_index == n_components - 1:
            out.extend(process([node], {}, False))
    return out


def _beta_of(code: list[cb.Node], kernel_name: str) -> float | None:
    """Dominant iteration count: the largest enclosing trip product over any
    statement.  For a single loop nest this equals the product of all
    non-unrolled trip counts.  None while a trip count is still symbolic."""
    best = 0.0
    symbolic = False

    def visit(nodes: list[cb.Node], product: float) -> None:
        nonlocal best, symbolic
        for node in nodes:
            if isinstance(node, cb.Loop):
                if not isinstance(node.trips, ex.Num):
                    symbolic = True
                    continue
                visit(node.body, product * node.trips.value)
            elif isinstance(node, cb.Stmt):
                best = max(best, product)

    visit(code, 1.0)
    return None if symbolic else best


# --------------------------------------------------------------------------
# Variant enumeration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImplVariant:
    variant_id: str
    skeleton_name: str
    kernel_choice: tuple[tuple[str, str], ...]  # (template, kernel) in skeleton order

    def kernel_for(self, template_name: str) -> str:
        return dict(self.kernel_choice)[template_name]


def variant_id_for(skeleton_name: str, choices: tuple[tuple[str, str], ...]) -> str:
    tokens = [kernel.replace("_", "") for _, kernel in choices]
    return "_".join([skeleton_name] + tokens)


def enumerate_variants(
    skeletons: list[ImplSkeleton] | tuple[ImplSkeleton, ...],
    templates: list[KernelTemplate] | tuple[KernelTemplate, ...],
) -> list[ImplVariant]:
    """Cartesian product of kernel choices per skeleton, lexicographic order."""
    by_name = {t.name: t for t in templates}
    variants: list[ImplVariant] = []
    for skeleton in skeletons:
        required = skeleton.required_templates
        pools = []
        for tname in required:
            if tname not in by_name:
                raise ScenarioError(
                    f"skeleton {skeleton.name} references unknown template {tname!r}"
                )
            pools.append(sorted(by_name[tname].kernel_names()))
        for combo in itertools.product(*pools):
            choices = tuple(zip(required, combo))
            variants.append(
                ImplVariant(variant_id_for(skeleton.name, choices), skeleton.name, choices)
            )
    return variants


def count_barriers(skeleton: ImplSkeleton, method: ODEMethod) -> int:
    """Barrier executions per timestep, loop trip counts applied."""
    bindings = {"s": float(method.stages), "m": float(method.corrector_steps)}

    def visit(nodes: list[cb.Node], multiplier: int) -> int:
        total = 0
        for node in nodes:
            if isinstance(node, cb.Comm) and node.op == "barrier":
                total += multiplier
            elif isinstance(node, cb.Loop):
                trips = ex.eval_expr(node.trips, bindings)
                total += visit(node.body, multiplier * int(trips))
        return total

    return visit(skeleton.code(), 1)


def template_execution_counts(skeleton: ImplSkeleton, method: ODEMethod) -> dict[str, int]:
    """How often each template's kernel runs per timestep (loop trips applied)."""
    bindings = {"s": float(method.stages), "m": float(method.corrector_steps)}
    counts: dict[str, int] = {}

    def visit(nodes: list[cb.Node], multiplier: int) -> None:
        for node in nodes:
            if isinstance(node, cb.KernelRef):
                counts[node.template] = counts.get(node.template, 0) + multiplier
            elif isinstance(node, cb.Loop):
                trips = ex.eval_expr(node.trips, bindings)
                visit(node.body, multiplier * int(trips))

    visit(skeleton.code(), 1)
    return counts


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------

def _loop_header(loop: cb.Loop, indent: str) -> str:
    lo = loop.start
    hi_expr = loop.trips
    if isinstance(hi_expr, ex.Num):
        hi = ex._fmt_num(lo + hi_expr.value)
    else:
        hi = ex.to_c(hi_expr) if lo == 0 else f"{lo} + {ex.to_c(hi_expr)}"
    return f"{indent}for (int {loop.var} = {lo}; {loop.var} < {hi}; ++{loop.var}) {{"


def _emit_kernel_body(code: list[cb.Node], depth: int, lines: list[str]) -> None:
    indent = "  " * depth
    for node in code:
        if isinstance(node, cb.Loop):
            lines.append(_loop_header(node, indent))
            _emit_kernel_body(node.body, depth + 1, lines)
            lines.append(f"{indent}}}")
        elif isinstance(node, cb.Stmt):
            lines.append(indent + ex.statement_to_c(node.assign))
        elif isinstance(node, cb.Pragma):
            lines.append(f"#pragma {node.text}")
        else:
            raise CodegenError(f"cannot emit node {node!r}")


def emit_analyzer_kernel(g: GeneratedKernel) -> str:
    """Self-contained loop-kernel source for the cycle analyzer: array and
    scalar declarations with literal extents, then the specialized nest."""
    if g.n is None:
        raise CodegenError(f"kernel {g.kernel_id}: analyzer emission needs a fixed n")
    arrays = g.referenced_arrays()
    scalars = g.referenced_scalars()
    lines = [f"// kernel {g.kernel_id} (method {g.method_name}, n = {g.n})"]
    for name, ctype, extents in g.decls:
        if extents and name in arrays:
            if any(e < 0 for e in extents):
                raise CodegenError(f"kernel {g.kernel_id}: symbolic extent in {name}")
            lines.append(f"{ctype} {name}" + "".join(f"[{e}]" for e in extents) + ";")
    declared = {name for name, _, extents in g.decls if not extents}
    for name, ctype, extents in g.decls:
        if not extents and name in scalars:
            lines.append(f"{ctype} {name};")
    for name in sorted(scalars - declared - set(COEFF_ARRAYS)):
        lines.append(f"double {name};")
    _emit_kernel_body(g.code, 0, lines)
    return "\n".join(lines) + "\n"


def analyzer_kernel_filename(g: GeneratedKernel) -> str:
    ivp_part = "none"
    if g.ivp_name is not None:
        ivp_part = g.ivp_name
        if g.component_index is not None:
            ivp_part += f"-c{g.component_index}"
    return f"{g.kernel_name}_{g.method_name}_{ivp_part}_{g.n}.c"


def generate_variant_code(
    variant: ImplVariant,
    method: ODEMethod,
    ivp: IVP,
    n: int,
    templates: list[KernelTemplate] | tuple[KernelTemplate, ...],
    skeleton: ImplSkeleton,
) -> str:
    """Emit the full timestep function for one implementation variant.

    Output is deterministic: identical inputs produce identical bytes.
    """
    by_name = {t.name: t for t in templates}
    specialized: dict[str, list[GeneratedKernel]] = {}
    for tname, kname in variant.kernel_choice:
        template = by_name[tname]
        vdef = template.variant(kname)
        if vdef.contains_rhs:
            specialized[tname] = [
                specialize_kernel(template, vdef, method, ivp, ci, n)
                for ci in range(len(ivp.components))
            ]
        else:
            specialized[tname] = [specialize_kernel(template, vdef, method, n=n)]

    all_kernels = [g for group in specialized.values() for g in group]
    arrays_used: set[str] = set()
    scalars_used: set[str] = set()
    for g in all_kernels:
        arrays_used |= g.referenced_arrays()
        scalars_used |= g.referenced_scalars()

    decl_map: dict[str, tuple[str, tuple[int, ...]]] = {}
    for g in all_kernels:
        for name, ctype, extents in g.decls:
            decl_map.setdefault(name, (ctype, extents))

    def extent_str(name: str) -> str:
        ctype, extents = decl_map[name]
        return f"{ctype} {name}" + "".join(f"[{e}]" for e in extents)

    state_params = [a for a in STATE_ARRAYS if a in arrays_used and a in decl_map]
    other_params = sorted(
        a for a in arrays_used
        if a in decl_map and a not in STATE_ARRAYS and a not in COEFF_ARRAYS
    )
    params = ["double t", "double h"] + [extent_str(a) for a in state_params + other_params]

    lines = [
        f"// variant {variant.variant_id}",
        f"// method {method.name}, ivp {ivp.name}, n = {n}",
        f"void timestep({', '.join(params)}) {{",
    ]

    def matrix_rows(rows) -> str:
        return ", ".join(
            "{" + ", ".join(ex._fmt_num(v) for v in row) + "}" for row in rows
        )

    s = method.stages
    if "A" in arrays_used:
        lines.append(f"  const double A[{s}][{s}] = {{{matrix_rows(method.A)}}};")
    if "b" in arrays_used:
        lines.append(f"  const double b[{s}] = {{{', '.join(ex._fmt_num(v) for v in method.b)}}};")
    if "c" in arrays_used:
        lines.append(f"  const double c[{s}] = {{{', '.join(ex._fmt_num(v) for v in method.c)}}};")

    # predictor: stage vectors start from the incoming approximation and the
    # weighted-sum accumulator starts from zero
    if "Y" in state_params:
        lines += [
            f"  for (int l = 0; l < {s}; ++l) {{",
            f"    for (int j = 0; j < {n}; ++j) {{",
            "      Y[l][j] = y[j];",
            "    }",
            "  }",
        ]
    if "dy" in state_params:
        lines += [
            f"  for (int j = 0; j < {n}; ++j) {{",
            "    dy[j] = 0.0;",
            "  }",
        ]

    def emit_nodes(nodes: list[cb.Node], depth: int) -> None:
        indent = "  " * depth
        for node in nodes:
            if isinstance(node, cb.Comm):
                lines.append(f"#pragma omp {node.op}")
            elif isinstance(node, cb.Loop):
                trips = ex.fold(ex.substitute(
                    node.trips,
                    {"m": ex.Num(float(method.corrector_steps)),
                     "s": ex.Num(float(s)),
                     "n": ex.Num(float(n))},
                ))
                lines.append(_loop_header(cb.Loop(node.var, trips, False, [], 0), indent))
                emit_nodes(node.body, depth + 1)
                lines.append(f"{indent}}}")
            elif isinstance(node, cb.KernelRef):
                for g in specialized[node.template]:
                    tag = f"template {node.template}: kernel {g.kernel_name}"
                    if g.component_index is not None:
                        tag += f" [component {g.component_index}]"
                    lines.append(f"{indent}// {tag}")
                    _emit_kernel_body(g.code, depth, lines)
            else:
                raise CodegenError(f"cannot emit skeleton node {node!r}")

    emit_nodes(skeleton.code(), 1)
    lines.append("}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Misc
# --------------------------------------------------------------------------

def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cbch in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cbch),
            ))
        previous = current
    return previous[-1]


def suggest_nearest(name: str, candidates) -> str | None:
    """Closest candidate by edit distance; ties break lexicographically."""
    ranked = sorted((levenshtein(name, c), c) for c in candidates)
    return ranked[0][1] if ranked else None
