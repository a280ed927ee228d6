"""Directive DSL used by kernel-template and skeleton code blocks.

One directive per line.  Kernel blocks may use %LOOP_START/%LOOP_END, %COMP
and %PRAGMA; skeleton blocks may use %LOOP_START/%LOOP_END, %COM and %KERNEL.

    %LOOP_START j n [unroll]
    %COMP C1
    %LOOP_END
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from . import expressions as ex
from .errors import CodegenError

KERNEL_KEYWORDS = {"%LOOP_START", "%LOOP_END", "%COMP", "%PRAGMA"}
SKELETON_KEYWORDS = {"%LOOP_START", "%LOOP_END", "%COM", "%KERNEL"}


@dataclass
class Loop:
    var: str
    trips: ex.Expr
    unroll: bool = False
    body: list["Node"] = field(default_factory=list)
    # filled in by specialization when a loop is restricted to an IVP
    # component range; parse always yields 0
    start: int = 0


@dataclass
class Comp:
    ident: str


@dataclass
class Stmt:
    """Specialized statement; never produced by parsing, only by codegen."""

    assign: ex.Assign


@dataclass
class Pragma:
    text: str


@dataclass
class Comm:
    op: str


@dataclass
class KernelRef:
    template: str


Node = Union[Loop, Comp, Stmt, Pragma, Comm, KernelRef]


def parse_code_block(text: str, context: str) -> list[Node]:
    """Parse DSL text into a node list; ``context`` is 'kernel' or 'skeleton'."""
    if context == "kernel":
        allowed = KERNEL_KEYWORDS
    elif context == "skeleton":
        allowed = SKELETON_KEYWORDS
    else:
        raise ValueError(f"unknown context {context!r}")

    root: list[Node] = []
    stack: list[Loop] = []
    vars_in_scope: list[str] = []

    def emit(node: Node) -> None:
        if stack:
            stack[-1].body.append(node)
        else:
            root.append(node)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword not in allowed:
            raise CodegenError(
                f"line {lineno}: keyword {keyword!r} not allowed in {context} blocks"
            )
        if keyword == "%LOOP_START":
            parts = rest.split(None, 2)
            if len(parts) < 2:
                raise CodegenError(
                    f"line {lineno}: %LOOP_START needs a variable and a trip count"
                )
            var, trips_text = parts[0], parts[1]
            unroll = False
            if len(parts) == 3:
                if parts[2] != "unroll":
                    raise CodegenError(
                        f"line {lineno}: unknown %LOOP_START parameter {parts[2]!r}"
                    )
                unroll = True
            if var in vars_in_scope:
                raise CodegenError(
                    f"line {lineno}: loop variable {var!r} reused along nesting path"
                )
            loop = Loop(var=var, trips=ex.parse_expr(trips_text), unroll=unroll)
            emit(loop)
            stack.append(loop)
            vars_in_scope.append(var)
        elif keyword == "%LOOP_END":
            if not stack:
                raise CodegenError(f"line {lineno}: %LOOP_END without open loop")
            stack.pop()
            vars_in_scope.pop()
        elif keyword == "%COMP":
            if not rest:
                raise CodegenError(f"line {lineno}: %COMP needs a computation id")
            emit(Comp(rest))
        elif keyword == "%PRAGMA":
            # text passed through verbatim
            emit(Pragma(rest))
        elif keyword == "%COM":
            if not rest:
                raise CodegenError(f"line {lineno}: %COM needs an operation name")
            emit(Comm(rest))
        elif keyword == "%KERNEL":
            if not rest:
                raise CodegenError(f"line {lineno}: %KERNEL needs a template name")
            emit(KernelRef(rest))

    if stack:
        raise CodegenError(
            f"unmatched %LOOP_START for variable {stack[-1].var!r} (missing %LOOP_END)"
        )
    return root


def walk(nodes: list[Node]):
    """Depth-first iteration over all nodes."""
    for node in nodes:
        yield node
        if isinstance(node, Loop):
            yield from walk(node.body)


def comp_ids(nodes: list[Node]) -> list[str]:
    return [n.ident for n in walk(nodes) if isinstance(n, Comp)]


def kernel_refs(nodes: list[Node]) -> list[str]:
    """Referenced template names in first-occurrence order."""
    seen: list[str] = []
    for node in walk(nodes):
        if isinstance(node, KernelRef) and node.template not in seen:
            seen.append(node.template)
    return seen
