"""Reference interpreter for specialized kernels and full variants.

The interpreter executes kernels sequentially on concrete small states;
barriers are no-ops here because their only modeled effect is cost.  Two
execution paths exist: a tree-walking evaluator that defines the semantics
(explicit bounds checks, classified domain errors, no silent NaN), and a
compiled path that translates a specialized kernel to Python once and runs
it for the many-state equivalence suites.  A direct transcription of the
predictor--corrector timestep serves as the oracle all variants must match.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import codeblocks as cb
from . import expressions as ex
from .codegen import GeneratedKernel, ImplVariant, specialize_kernel
from .documents import IVP, ImplSkeleton, KernelTemplate, ODEMethod, expand_components
from .errors import BoundsError, DomainError, InterpError


def eval_statement(stmt: ex.Assign, env: dict) -> dict:
    """Execute one assignment; only the target cell changes."""
    value = ex.eval_expr(stmt.rhs, env)
    if isinstance(stmt.lhs, ex.Name):
        if stmt.lhs.ident not in env:
            raise InterpError(f"assignment to unbound scalar {stmt.lhs.ident!r}")
        env[stmt.lhs.ident] = value
        return env
    target = env.get(stmt.lhs.base)
    if target is None:
        raise InterpError(f"assignment to unbound array {stmt.lhs.base!r}")
    *outer, last = stmt.lhs.indices
    for idx_expr in outer:
        idx = _check_index(ex.eval_expr(idx_expr, env), len(target))
        target = target[idx]
    idx = _check_index(ex.eval_expr(last, env), len(target))
    target[idx] = value
    return env


def _check_index(value: float, length: int) -> int:
    if isinstance(value, float):
        if not value.is_integer():
            raise BoundsError(f"array index {value!r} is not integral")
        value = int(value)
    if not 0 <= value < length:
        raise BoundsError(f"index {value} out of range [0, {length})")
    return value


def run_kernel(g: GeneratedKernel, env: dict) -> dict:
    """Tree-walking execution of a specialized kernel's loop nest."""

    def visit(nodes: list[cb.Node]) -> None:
        for node in nodes:
            if isinstance(node, cb.Stmt):
                eval_statement(node.assign, env)
            elif isinstance(node, cb.Loop):
                trips = node.trips
                if not isinstance(trips, ex.Num):
                    raise InterpError(
                        f"kernel {g.kernel_id}: symbolic loop bound "
                        f"{ex.to_c(trips)} cannot be interpreted"
                    )
                saved = env.get(node.var)
                for k in range(node.start, node.start + int(trips.value)):
                    env[node.var] = k
                    visit(node.body)
                if saved is None:
                    env.pop(node.var, None)
                else:
                    env[node.var] = saved
            elif isinstance(node, cb.Pragma):
                continue
            else:
                raise InterpError(f"cannot interpret node {node!r}")

    visit(g.code)
    return env


# --------------------------------------------------------------------------
# Compiled path
# --------------------------------------------------------------------------

def _py_expr(
    expr: ex.Expr,
    arrays: dict[str, tuple[int, ...]],
    scalars: set[str],
    local_names: set[str],
) -> str:
    if isinstance(expr, ex.Num):
        return repr(expr.value)
    if isinstance(expr, ex.Name):
        if expr.ident in local_names:
            return expr.ident
        scalars.add(expr.ident)
        return f"_s_{expr.ident}"
    if isinstance(expr, ex.Index):
        if expr.base not in arrays:
            raise InterpError(f"reference to undeclared array {expr.base!r}")
        extents = arrays[expr.base]
        if len(expr.indices) != len(extents):
            raise InterpError(
                f"array {expr.base} has {len(extents)} dimensions, "
                f"indexed with {len(expr.indices)}"
            )
        idx = ", ".join(
            f"_ck({_py_expr(i, arrays, scalars, local_names)}, {extent})"
            for i, extent in zip(expr.indices, extents)
        )
        return f"float(_a_{expr.base}[{idx}])"
    if isinstance(expr, ex.Neg):
        return f"(-{_py_expr(expr.operand, arrays, scalars, local_names)})"
    if isinstance(expr, ex.Call):
        args = ", ".join(_py_expr(a, arrays, scalars, local_names) for a in expr.args)
        return f"_m_{expr.fn}({args})"
    if isinstance(expr, ex.Bin):
        left = _py_expr(expr.left, arrays, scalars, local_names)
        right = _py_expr(expr.right, arrays, scalars, local_names)
        return f"({left} {expr.op} {right})"
    raise TypeError(f"not an expression node: {expr!r}")


def compile_kernel(g: GeneratedKernel) -> Callable[[dict], None]:
    """Translate a specialized kernel to a Python function over an env dict.

    Behaves identically to run_kernel: bounds-checked indices, classified
    domain errors, finite results enforced per assignment.
    """
    arrays = {name: extents for name, _, extents in g.decls if extents}
    scalars: set[str] = set()
    loop_vars = {n.var for n in cb.walk(g.code) if isinstance(n, cb.Loop)}
    lines: list[str] = []

    def emit(nodes: list[cb.Node], depth: int) -> None:
        pad = "    " * depth
        emitted = False
        for node in nodes:
            if isinstance(node, cb.Stmt):
                stmt = node.assign
                rhs = _py_expr(stmt.rhs, arrays, scalars, loop_vars)
                if isinstance(stmt.lhs, ex.Name):
                    scalars.add(stmt.lhs.ident)
                    lines.append(f"{pad}_s_{stmt.lhs.ident} = _fin({rhs})")
                else:
                    if stmt.lhs.base not in arrays:
                        raise InterpError(
                            f"assignment to undeclared array {stmt.lhs.base!r}"
                        )
                    extents = arrays[stmt.lhs.base]
                    idx = ", ".join(
                        f"_ck({_py_expr(i, arrays, scalars, loop_vars)}, {e})"
                        for i, e in zip(stmt.lhs.indices, extents)
                    )
                    lines.append(f"{pad}_a_{stmt.lhs.base}[{idx}] = _fin({rhs})")
                emitted = True
            elif isinstance(node, cb.Loop):
                stop = node.start + int(node.trips.value)
                lines.append(f"{pad}for {node.var} in range({node.start}, {stop}):")
                emit(node.body, depth + 1)
                emitted = True
            elif isinstance(node, cb.Pragma):
                continue
        if not emitted:
            lines.append(f"{pad}pass")

    emit(g.code, 1)
    body = "\n".join(lines) if lines else "    pass"

    scalar_names = sorted(scalars - loop_vars)
    preamble = [f"    _a_{name} = _env[{name!r}]" for name in sorted(arrays)]
    preamble += [f"    _s_{name} = float(_env[{name!r}])" for name in scalar_names]
    source = "def _kernel(_env):\n" + "\n".join(preamble + [body])

    namespace = {
        "_ck": _check_index,
        "_fin": _require_finite,
    }
    for fn_name, fn in ex.CALL_WHITELIST.items():
        namespace[f"_m_{fn_name}"] = fn
    exec(compile(source, f"<kernel {g.kernel_id}>", "exec"), namespace)
    raw = namespace["_kernel"]

    def runner(env: dict) -> None:
        for name in scalar_names:
            if name not in env:
                raise InterpError(f"kernel {g.kernel_id}: unbound scalar {name!r}")
        try:
            raw(env)
        except KeyError as exc:
            raise InterpError(f"kernel {g.kernel_id}: unbound name {exc}") from None
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise DomainError(f"kernel {g.kernel_id}: {exc}") from None

    return runner


def _require_finite(value: float) -> float:
    if not math.isfinite(value):
        raise DomainError(f"evaluation produced {value!r}")
    return value


# --------------------------------------------------------------------------
# IVP right-hand side
# --------------------------------------------------------------------------

def compile_component(ivp: IVP, index: int, n: int) -> Callable:
    """Compile one component block to f(vec, t_stage, out, start, stop)."""
    comp = ivp.components[index]
    expr = ex.parse_expr(comp.code.replace("%in", "_invec"))
    mapping = {name: ex.Num(value) for name, value in ivp.constant_values().items()}
    mapping["t"] = ex.Name("_t")
    expr = ex.substitute(expr, mapping)
    arrays = {"_invec": (n,)}
    scalars: set[str] = set()
    body = _py_expr(expr, arrays, scalars, {"j", "_t"})
    if scalars:
        raise InterpError(
            f"IVP {ivp.name} component {index} uses unbound names {sorted(scalars)}"
        )
    source = (
        "def _component(_invec_raw, _t, _out, _start, _stop):\n"
        "    _a__invec = _invec_raw\n"
        "    for j in range(_start, _stop):\n"
        f"        _out[j] = _fin({body})\n"
    )
    namespace = {"_ck": _check_index, "_fin": _require_finite}
    for fn_name, fn in ex.CALL_WHITELIST.items():
        namespace[f"_m_{fn_name}"] = fn
    exec(compile(source, f"<ivp {ivp.name}.{index}>", "exec"), namespace)
    raw = namespace["_component"]

    def runner(vec, t_stage, out, start, stop):
        try:
            raw(vec, t_stage, out, start, stop)
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise DomainError(f"IVP {ivp.name} component {index}: {exc}") from None

    return runner


class RHSEvaluator:
    """Evaluates y' = f(t, y) from the IVP's component blocks."""

    def __init__(self, ivp: IVP, n: int):
        self.ivp = ivp
        self.n = n
        self.ranges = expand_components(ivp, n)
        self.components = [
            compile_component(ivp, i, n) for i in range(len(ivp.components))
        ]

    def __call__(self, t_stage: float, vec: np.ndarray) -> np.ndarray:
        out = np.empty(self.n)
        for (start, size), component in zip(self.ranges, self.components):
            component(vec, t_stage, out, start, start + size)
        return out


def pirk_reference_step(
    method: ODEMethod, ivp: IVP, y: np.ndarray, t: float, h: float,
    rhs: RHSEvaluator | None = None,
) -> np.ndarray:
    """Direct transcription of the predictor--corrector timestep: all stage
    vectors start at y, each of the m corrector sweeps evaluates the stage
    derivatives and rebuilds the stage vectors from the coefficient matrix,
    and the step closes with the weighted derivative sum."""
    n = len(y)
    s = method.stages
    rhs = rhs if rhs is not None else RHSEvaluator(ivp, n)
    A = np.asarray(method.A)
    b = np.asarray(method.b)
    c = np.asarray(method.c)

    Y = np.tile(np.asarray(y, dtype=float), (s, 1))
    F = np.empty((s, n))
    for _ in range(method.corrector_steps):
        for i in range(s):
            F[i] = rhs(t + c[i] * h, Y[i])
        for l in range(s):
            acc = np.zeros(n)
            for i in range(s):
                acc += A[l][i] * F[i]
            Y[l] = y + h * acc
    for i in range(s):
        F[i] = rhs(t + c[i] * h, Y[i])
    acc = np.zeros(n)
    for i in range(s):
        acc += b[i] * F[i]
    return y + h * acc


# --------------------------------------------------------------------------
# Variant execution
# --------------------------------------------------------------------------

class VariantExecutor:
    """Runs enumerated variants for one (method, IVP, n) configuration.

    Specialization and compilation happen once per kernel and are shared by
    all variants; execution is sequential, so barriers interpret to no-ops.
    """

    def __init__(
        self,
        method: ODEMethod,
        ivp: IVP,
        n: int,
        templates: list[KernelTemplate] | tuple[KernelTemplate, ...],
        eliminate_zeros: bool = True,
    ):
        if n < ivp.n_min:
            raise InterpError(f"n={n} below the smallest valid size of IVP {ivp.name}")
        self.method = method
        self.ivp = ivp
        self.n = n
        self.templates = {t.name: t for t in templates}
        self.eliminate_zeros = eliminate_zeros
        self._compiled: dict[tuple[str, str], list[Callable[[dict], None]]] = {}

    def _kernels_for(self, template_name: str, kernel_name: str):
        key = (template_name, kernel_name)
        if key not in self._compiled:
            template = self.templates[template_name]
            vdef = template.variant(kernel_name)
            if vdef.contains_rhs:
                generated = [
                    specialize_kernel(
                        template, vdef, self.method, self.ivp, ci, self.n,
                        eliminate_zeros=self.eliminate_zeros,
                    )
                    for ci in range(len(self.ivp.components))
                ]
            else:
                generated = [
                    specialize_kernel(
                        template, vdef, self.method, n=self.n,
                        eliminate_zeros=self.eliminate_zeros,
                    )
                ]
            self._compiled[key] = [compile_kernel(g) for g in generated]
        return self._compiled[key]

    def fresh_env(self, y: np.ndarray, t: float, h: float) -> dict:
        n, s = self.n, self.method.stages
        if len(y) != n:
            raise InterpError(f"state length {len(y)} does not match n={n}")
        y = np.asarray(y, dtype=float).copy()
        return {
            "y": y,
            "Y": np.tile(y, (s, 1)),  # predictor: stage vectors start at y
            "F": np.zeros((s, n)),
            "dy": np.zeros(n),  # weighted-sum accumulator
            "A": np.asarray(method_matrix(self.method)),
            "b": np.asarray(self.method.b),
            "c": np.asarray(self.method.c),
            "h": float(h),
            "t": float(t),
        }

    def run(
        self, variant: ImplVariant, skeleton: ImplSkeleton,
        y: np.ndarray, t: float, h: float,
    ) -> np.ndarray:
        if skeleton.name != variant.skeleton_name:
            raise InterpError(
                f"variant {variant.variant_id} belongs to skeleton "
                f"{variant.skeleton_name}, not {skeleton.name}"
            )
        env = self.fresh_env(y, t, h)
        choice = dict(variant.kernel_choice)
        bindings = {
            "m": float(self.method.corrector_steps),
            "s": float(self.method.stages),
            "n": float(self.n),
        }

        def visit(nodes: list[cb.Node]) -> None:
            for node in nodes:
                if isinstance(node, cb.Comm):
                    continue  # sequential execution: synchronization is free
                if isinstance(node, cb.KernelRef):
                    for kernel in self._kernels_for(node.template, choice[node.template]):
                        kernel(env)
                elif isinstance(node, cb.Loop):
                    trips = int(ex.eval_expr(node.trips, bindings))
                    for k in range(trips):
                        env[node.var] = k
                        visit(node.body)
                    env.pop(node.var, None)
                else:
                    raise InterpError(f"cannot interpret skeleton node {node!r}")

        visit(skeleton.code())
        return env["y"]


def method_matrix(method: ODEMethod) -> list[list[float]]:
    return [list(row) for row in method.A]


def execute_variant(
    variant: ImplVariant,
    skeleton: ImplSkeleton,
    method: ODEMethod,
    ivp: IVP,
    y: np.ndarray,
    t: float,
    h: float,
    templates: list[KernelTemplate] | tuple[KernelTemplate, ...],
    executor: VariantExecutor | None = None,
) -> np.ndarray:
    """One interpreted timestep of a fully specialized variant."""
    if executor is None:
        executor = VariantExecutor(method, ivp, len(y), templates)
    return executor.run(variant, skeleton, y, t, h)
