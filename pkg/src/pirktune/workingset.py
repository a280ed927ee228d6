"""Working-set model: cache boundary cut points and sample sizes.

When the system size n is not fixed, predictions stay constant on ranges of
n within which no working-set expression crosses a cache capacity.  The cut
points are the largest n that still fit each level; one size is sampled per
range (its arithmetic midpoint).
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

from . import expressions as ex
from .documents import MEM, MachineModel, ODEMethod
from .errors import ModelError

# caches are modeled at full nominal capacity; lower this to reserve a
# fraction for data outside the kernel's declared working set
CACHE_FILL_FACTOR = 1.0


def eval_ws(expr_text: str, bindings: Mapping[str, int]) -> int:
    """Element count of a working-set expression; real results round up."""
    expr = ex.parse_expr(expr_text)
    unknown = ex.free_names(expr) - set(bindings)
    if unknown:
        raise ModelError(f"working set {expr_text!r} uses unknown names {sorted(unknown)}")
    value = ex.eval_expr(expr, dict(bindings))
    count = math.ceil(value)
    if count <= 0:
        raise ModelError(f"working set {expr_text!r} is not positive at {dict(bindings)}")
    return count


def _effective_capacity(machine: MachineModel, level, tau: int) -> float:
    return machine.effective_capacity(level, tau) * CACHE_FILL_FACTOR


def level_of_bytes(machine: MachineModel, nbytes: float, tau: int = 1) -> str:
    """Smallest cache level holding ``nbytes``; shared levels divide by tau."""
    for level in machine.caches:
        if nbytes <= _effective_capacity(machine, level, tau):
            return level.name
    return MEM


def _largest_fitting_n(
    expr_text: str, s: int, capacity_bytes: float, elem_bytes: int,
    n_limit: int = 2**62,
) -> int | None:
    """Largest n with ws(s, n) * elem_bytes <= capacity; None if none or all.

    Working-set expressions are non-decreasing in n, so exponential search
    plus bisection is exact.
    """
    def fits(n: int) -> bool:
        return eval_ws(expr_text, {"s": s, "n": n}) * elem_bytes <= capacity_bytes

    if not fits(1):
        return None
    hi = 1
    while fits(hi):
        if hi >= n_limit:
            return None  # effectively constant in n at this capacity
        hi = min(hi * 2, n_limit)
    lo = hi // 2  # fits
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


def cache_cutpoints(
    ws_exprs: Iterable[str],
    method: ODEMethod,
    machine: MachineModel,
    elem_bytes: int = 8,
    tau: int = 1,
) -> list[int]:
    """For each expression and cache level, the largest n that still fits.

    The union over all expressions and levels, sorted and deduplicated.
    Expressions constant in n contribute no cut points.
    """
    if elem_bytes <= 0:
        raise ModelError("elem_bytes must be positive")
    exprs = list(ws_exprs)
    if not exprs:
        raise ModelError("at least one working-set expression required")
    cuts: set[int] = set()
    for expr_text in exprs:
        if "n" not in ex.free_names(ex.parse_expr(expr_text)):
            continue
        for level in machine.caches:
            capacity = _effective_capacity(machine, level, tau)
            largest = _largest_fitting_n(expr_text, method.stages, capacity, elem_bytes)
            if largest is not None:
                cuts.add(largest)
    return sorted(cuts)


def sample_sizes(cutpoints: Iterable[int], n_min: int, n_max: int) -> list[int]:
    """One sample per residency range: the floor midpoint of
    [n_min, c1], (c1, c2], ..., (ck, n_max]."""
    if n_min > n_max:
        raise ModelError(f"n_min {n_min} exceeds n_max {n_max}")
    cuts = sorted({c for c in cutpoints if n_min <= c < n_max})
    samples = []
    lo = n_min
    for cut in cuts + [n_max]:
        samples.append((lo + cut) // 2)
        lo = cut + 1
    # adjacent ranges can collapse to the same midpoint when cuts are dense
    out = []
    for sample in samples:
        if not out or sample > out[-1]:
            out.append(sample)
    return out


def classify_arrays(
    array_bytes: Mapping[str, float],
    primary_ws_bytes: float,
    machine: MachineModel,
    tau: int = 1,
) -> dict[str, str]:
    """Residency level per array.

    An array is sourced from the smallest level that holds either the array
    itself or the kernel's whole (primary) working set, whichever is smaller:
    small coefficient tables stay near the core even when the kernel streams
    from memory, while large arrays compete for the level the full set fits.
    """
    return {
        name: level_of_bytes(machine, min(nbytes, primary_ws_bytes), tau)
        for name, nbytes in array_bytes.items()
    }


def kernel_residency(
    g, machine: MachineModel, n: int | None = None,
    elem_bytes: int = 8, tau: int = 1,
) -> dict[str, str]:
    """Residency map for a specialized kernel's streamed arrays."""
    n = n if n is not None else g.n
    bindings = {"s": g.stages, "n": n}
    primary = eval_ws(g.working_sets[0], bindings) * elem_bytes
    sizes = {}
    for name, _, extents in g.decls:
        elements = 1
        for e in extents:
            elements *= e
        sizes[name] = elements * elem_bytes
    return classify_arrays(sizes, primary, machine, tau)
