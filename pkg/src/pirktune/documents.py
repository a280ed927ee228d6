"""Parsers, validators and serializers for the five description documents:
ODE methods, IVPs, machines, kernel templates and implementation skeletons.

All parsers take UTF-8 YAML text and return typed, validated models.  The
serializers invert them up to field-level equality (coefficient expressions
are evaluated at parse time, so a round trip preserves values, not spelling).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import codeblocks as cb
from . import expressions as ex
from .errors import DocumentError, ScenarioError

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")

# %RHS optionally names the vector the IVP placeholder %in binds to
RHS_TOKEN_RE = re.compile(r"%RHS\((?P<vec>[A-Za-z_][A-Za-z0-9_]*(?:\[[^\]()]+\])*)\)")


def _load_yaml(text: str, what: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DocumentError(f"{what}: not well-formed YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise DocumentError(f"{what}: document must be a mapping")
    return doc


def _require(doc: dict, key: str, what: str):
    if key not in doc:
        raise DocumentError(f"{what}: missing key {key!r}")
    return doc[key]


def _name_of(doc: dict, default_name: str | None, what: str) -> str:
    name = doc.get("name", default_name)
    if not name:
        raise DocumentError(f"{what}: no 'name' key and no default name given")
    name = str(name)
    if not _IDENT_RE.match(name):
        raise DocumentError(f"{what}: name {name!r} is not an identifier")
    return name


def _coefficient(entry, what: str) -> float:
    """Coefficient entries may be numbers or arithmetic over literals."""
    if isinstance(entry, (int, float)):
        value = float(entry)
    else:
        try:
            value = ex.eval_scalar(str(entry))
        except Exception as exc:
            raise DocumentError(f"{what}: bad coefficient {entry!r}: {exc}") from None
    if not math.isfinite(value):
        raise DocumentError(f"{what}: coefficient {entry!r} is not finite")
    return value


# --------------------------------------------------------------------------
# ODE method
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ODEMethod:
    name: str
    stages: int
    order: int
    corrector_steps: int
    A: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    c: tuple[float, ...]


def parse_method(text: str, default_name: str | None = None) -> ODEMethod:
    doc = _load_yaml(text, "method")
    name = _name_of(doc, default_name, "method")
    s = int(_require(doc, "stages", name))
    o = int(_require(doc, "order", name))
    m = int(_require(doc, "corrector_steps", name))
    if s < 1 or m < 1 or o < 1:
        raise DocumentError(f"method {name}: stages, order, corrector_steps must be >= 1")
    rows = _require(doc, "A", name)
    if not isinstance(rows, list) or len(rows) != s:
        raise DocumentError(f"method {name}: A must have {s} rows")
    A = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != s:
            raise DocumentError(f"method {name}: A row {i} must have {s} entries")
        A.append(tuple(_coefficient(e, f"method {name} A[{i}]") for e in row))
    vectors = {}
    for key in ("b", "c"):
        vec = _require(doc, key, name)
        if not isinstance(vec, list) or len(vec) != s:
            raise DocumentError(f"method {name}: {key} must have {s} entries")
        vectors[key] = tuple(_coefficient(e, f"method {name} {key}") for e in vec)
    return ODEMethod(name, s, o, m, tuple(A), vectors["b"], vectors["c"])


def method_to_document(method: ODEMethod) -> dict:
    return {
        "name": method.name,
        "stages": method.stages,
        "order": method.order,
        "corrector_steps": method.corrector_steps,
        "A": [list(row) for row in method.A],
        "b": list(method.b),
        "c": list(method.c),
    }


# --------------------------------------------------------------------------
# IVP
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IVPComponent:
    first_text: str
    size_text: str
    code: str

    def first_expr(self) -> ex.Expr:
        return ex.parse_expr(self.first_text)

    def size_expr(self) -> ex.Expr:
        return ex.parse_expr(self.size_text)


@dataclass(frozen=True)
class IVP:
    name: str
    components: tuple[IVPComponent, ...]
    constants: tuple[tuple[str, str, float], ...]  # (name, ctype, value)
    access_distance: int | None  # None means unlimited
    n: int | None  # fixed system size, if the problem prescribes one
    n_min: int

    def constant_values(self) -> dict[str, float]:
        return {name: value for name, _, value in self.constants}


_CONSTANT_RE = re.compile(r"\s*(?P<ctype>\w+)\s+(?P<name>\w+)\s*=\s*(?P<value>.+?)\s*$")


def parse_ivp(text: str, default_name: str | None = None) -> IVP:
    doc = _load_yaml(text, "IVP")
    name = _name_of(doc, default_name, "IVP")

    raw_components = _require(doc, "components", name)
    if isinstance(raw_components, dict):
        raw_components = [raw_components]
    if not isinstance(raw_components, list) or not raw_components:
        raise DocumentError(f"IVP {name}: components must be a non-empty list")
    components = []
    for idx, comp in enumerate(raw_components):
        if not isinstance(comp, dict):
            raise DocumentError(f"IVP {name}: component {idx} must be a mapping")
        first = str(_require(comp, "first", f"IVP {name} component {idx}"))
        size = str(_require(comp, "size", f"IVP {name} component {idx}"))
        code = str(_require(comp, "code", f"IVP {name} component {idx}")).strip()
        if "%in" not in code:
            raise DocumentError(
                f"IVP {name}: component {idx} code does not use the %in placeholder"
            )
        for expr_text, what in ((first, "first"), (size, "size")):
            expr = ex.parse_expr(expr_text)
            bad = ex.free_names(expr) - {"n"}
            if bad or ex.array_names(expr):
                raise DocumentError(
                    f"IVP {name}: component {idx} {what} may only use n: {expr_text!r}"
                )
        # the RHS must parse under the expression grammar once %in is bound
        try:
            ex.parse_expr(code.replace("%in", "_in"))
        except DocumentError as exc:
            raise DocumentError(f"IVP {name}: component {idx} code: {exc}") from None
        components.append(IVPComponent(first, size, code))

    constants = []
    seen = set()
    for entry in doc.get("constants") or []:
        m = _CONSTANT_RE.match(str(entry))
        if not m:
            raise DocumentError(f"IVP {name}: bad constant entry {entry!r}")
        cname = m.group("name")
        if cname in seen:
            raise DocumentError(f"IVP {name}: duplicate constant {cname!r}")
        seen.add(cname)
        if "%in" in m.group("value"):
            raise DocumentError(f"IVP {name}: %in may appear only in component code")
        value_expr = ex.parse_expr(m.group("value"))
        if ex.free_names(value_expr) or ex.array_names(value_expr):
            raise DocumentError(
                f"IVP {name}: constant {cname!r} must be a literal value"
            )
        constants.append((cname, m.group("ctype"), ex.eval_expr(value_expr, {})))

    access = doc.get("access_distance")
    if access in (None, "unlimited"):
        access_distance = None
    else:
        access_distance = int(access)
        if access_distance < 0:
            raise DocumentError(f"IVP {name}: access_distance must be >= 0")

    fixed_n = doc.get("n")
    if fixed_n is not None:
        fixed_n = int(fixed_n)
        if fixed_n < 1:
            raise DocumentError(f"IVP {name}: fixed n must be positive")

    ivp = IVP(name, tuple(components), tuple(constants), access_distance, fixed_n, 1)
    n_min = _compute_n_min(ivp)
    ivp = IVP(name, tuple(components), tuple(constants), access_distance, fixed_n, n_min)
    _check_coverage(ivp)
    return ivp


def _compute_n_min(ivp: IVP, search_limit: int = 65536) -> int:
    """Smallest n >= 1 (or the fixed n) for which all size expressions are positive."""
    if ivp.n is not None:
        candidates = [ivp.n]
    else:
        candidates = range(1, search_limit + 1)
    sizes = [comp.size_expr() for comp in ivp.components]
    for n in candidates:
        try:
            if all(ex.eval_expr(sz, {"n": n}) >= 1 for sz in sizes):
                return n
        except Exception:
            continue
    raise DocumentError(
        f"IVP {ivp.name}: no n <= {search_limit} makes all component sizes positive"
    )


def expand_components(ivp: IVP, n: int) -> list[tuple[int, int]]:
    """Concrete 0-based ``(start, size)`` ranges for system size ``n``.

    Documents index components 1-based; everything downstream is 0-based.
    """
    ranges = []
    for idx, comp in enumerate(ivp.components):
        first = ex.eval_expr(comp.first_expr(), {"n": n})
        size = ex.eval_expr(comp.size_expr(), {"n": n})
        if first != int(first) or size != int(size):
            raise DocumentError(
                f"IVP {ivp.name}: component {idx} range is not integral at n={n}"
            )
        ranges.append((int(first) - 1, int(size)))
    return ranges


def _check_coverage(ivp: IVP) -> None:
    """Components must tile [1, n] exactly once.

    The grammar only produces low-degree polynomial ranges, so agreement on a
    handful of sample sizes is an identity check in practice.
    """
    base = ivp.n_min
    if ivp.n is not None:
        samples = [ivp.n]
    else:
        samples = sorted({base, base + 1, base + 2, base + 7, 2 * base + 23})
    for n in samples:
        ranges = expand_components(ivp, n)
        covered = []
        for idx, (start, size) in enumerate(ranges):
            if size < 1:
                raise DocumentError(
                    f"IVP {ivp.name}: component {idx} has non-positive size at n={n}"
                )
            covered.append((start, start + size))
        covered.sort()
        cursor = 0
        for start, stop in covered:
            if start < cursor:
                raise DocumentError(
                    f"IVP {ivp.name}: components overlap at n={n} (index {start + 1})"
                )
            if start > cursor:
                raise DocumentError(
                    f"IVP {ivp.name}: components leave a gap at n={n} (index {cursor + 1})"
                )
            cursor = stop
        if cursor != n:
            raise DocumentError(
                f"IVP {ivp.name}: components cover [1, {cursor}] but n={n}"
            )


def ivp_to_document(ivp: IVP) -> dict:
    doc = {
        "name": ivp.name,
        "components": [
            {"first": c.first_text, "size": c.size_text, "code": c.code}
            for c in ivp.components
        ],
        "constants": [f"{ctype} {name} = {value!r}" for name, ctype, value in ivp.constants],
    }
    if ivp.access_distance is None:
        doc["access_distance"] = "unlimited"
    else:
        doc["access_distance"] = ivp.access_distance
    if ivp.n is not None:
        doc["n"] = ivp.n
    return doc


# --------------------------------------------------------------------------
# Machine
# --------------------------------------------------------------------------

_QUANTITY_RE = re.compile(r"\s*(?P<num>[-+0-9.eE]+)\s*(?P<unit>[A-Za-z/]*)\s*$")

# cache capacities use binary prefixes, rates and frequencies decimal ones
_UNIT_SCALE = {
    "": 1.0,
    "Hz": 1.0,
    "kHz": 1e3,
    "MHz": 1e6,
    "GHz": 1e9,
    "B": 1.0,
    "kB": 1024.0,
    "MB": 1024.0**2,
    "GB": 1024.0**3,
    "B/s": 1.0,
    "kB/s": 1e3,
    "MB/s": 1e6,
    "GB/s": 1e9,
    "cy/CL": 1.0,
}


def parse_quantity(value, what: str) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    m = _QUANTITY_RE.match(str(value))
    if not m or m.group("unit") not in _UNIT_SCALE:
        raise DocumentError(f"{what}: cannot parse quantity {value!r}")
    try:
        return float(m.group("num")) * _UNIT_SCALE[m.group("unit")]
    except ValueError:
        raise DocumentError(f"{what}: cannot parse quantity {value!r}") from None


@dataclass(frozen=True)
class CacheLevel:
    name: str
    size: int  # bytes
    shared: bool


MEM = "MEM"

_THROUGHPUT_CLASSES = ("ADD", "MUL", "FMA", "DIV", "LOAD", "STORE")
_REQUIRED_THROUGHPUT = ("ADD", "MUL", "LOAD", "STORE")


@dataclass(frozen=True)
class MachineModel:
    name: str
    clock: float  # Hz
    cores: int
    cache_line: int  # bytes
    caches: tuple[CacheLevel, ...]
    throughput: tuple[tuple[str, float], ...]  # ops/cycle, double precision
    transfers: tuple[tuple[str, float], ...]  # cycles per cache line, per pair
    penalties: tuple[tuple[str, float], ...]  # extra cycles per cache line
    overlap: tuple[tuple[str, bool], ...]  # pair overlaps with in-core execution
    bandwidth: tuple[tuple[int, float], ...]  # bytes/s by active-core count
    compiler: str = ""

    # -- derived views ------------------------------------------------

    def throughput_of(self, klass: str) -> float | None:
        return dict(self.throughput).get(klass)

    def level_pairs(self) -> tuple[tuple[str, str], ...]:
        names = [c.name for c in self.caches] + [MEM]
        return tuple(zip(names[:-1], names[1:]))

    @staticmethod
    def pair_key(pair: tuple[str, str]) -> str:
        return f"{pair[0]}-{pair[1]}"

    def transfer_cost(self, pair: tuple[str, str]) -> float:
        return dict(self.transfers)[self.pair_key(pair)]

    def penalty(self, pair: tuple[str, str]) -> float:
        return dict(self.penalties).get(self.pair_key(pair), 0.0)

    def pair_overlaps(self, pair: tuple[str, str]) -> bool:
        return dict(self.overlap).get(self.pair_key(pair), False)

    def bandwidth_at(self, tau: int) -> float:
        table = dict(self.bandwidth)
        if tau not in table:
            raise DocumentError(f"machine {self.name}: no bandwidth entry for {tau} cores")
        return table[tau]

    def elements_per_line(self, elem_bytes: int = 8) -> int:
        return self.cache_line // elem_bytes

    def effective_capacity(self, level: CacheLevel, tau: int = 1) -> float:
        return level.size / tau if (level.shared and tau > 1) else float(level.size)

    def fitting_level(self, nbytes: float, tau: int = 1) -> str:
        """Smallest level whose (shared-adjusted) capacity holds ``nbytes``."""
        for level in self.caches:
            if nbytes <= self.effective_capacity(level, tau):
                return level.name
        return MEM

    def level_depth(self, name: str) -> int:
        for i, level in enumerate(self.caches):
            if level.name == name:
                return i
        if name == MEM:
            return len(self.caches)
        raise DocumentError(f"machine {self.name}: unknown level {name!r}")

    def fingerprint(self) -> str:
        """Hash over every model-relevant field; name and compiler are
        provenance only and excluded, so renaming a file does not stale data
        but editing any modeled value does."""
        payload = {
            "clock": self.clock,
            "cores": self.cores,
            "cache_line": self.cache_line,
            "caches": [(c.name, c.size, c.shared) for c in self.caches],
            "throughput": sorted(self.throughput),
            "transfers": sorted(self.transfers),
            "penalties": sorted(self.penalties),
            "overlap": sorted(self.overlap),
            "bandwidth": sorted(self.bandwidth),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_machine(text: str, default_name: str | None = None) -> MachineModel:
    doc = _load_yaml(text, "machine")
    name = _name_of(doc, default_name, "machine")
    clock = parse_quantity(_require(doc, "clock", name), f"machine {name} clock")
    cores = int(_require(doc, "cores", name))
    cache_line = int(parse_quantity(_require(doc, "cache_line", name), f"machine {name} cache_line"))
    if cores < 1 or clock <= 0 or cache_line <= 0:
        raise DocumentError(f"machine {name}: clock, cores and cache_line must be positive")

    raw_caches = _require(doc, "caches", name)
    caches = []
    prev_size = 0
    for entry in raw_caches:
        level = CacheLevel(
            name=str(_require(entry, "name", f"machine {name} cache")),
            size=int(parse_quantity(_require(entry, "size", name), f"machine {name} cache size")),
            shared=bool(entry.get("shared", False)),
        )
        if level.size <= prev_size:
            raise DocumentError(
                f"machine {name}: cache capacities must strictly increase "
                f"({level.name} has {level.size} B)"
            )
        prev_size = level.size
        caches.append(level)
    if not caches:
        raise DocumentError(f"machine {name}: at least one cache level required")

    raw_tp = _require(doc, "throughput", name)
    throughput = {}
    for klass, value in raw_tp.items():
        if klass not in _THROUGHPUT_CLASSES:
            raise DocumentError(f"machine {name}: unknown throughput class {klass!r}")
        if value is None:
            continue  # explicit "unit not present"
        value = float(value)
        if value <= 0:
            raise DocumentError(f"machine {name}: throughput {klass} must be > 0")
        throughput[klass] = value
    for klass in _REQUIRED_THROUGHPUT:
        if klass not in throughput:
            raise DocumentError(f"machine {name}: missing throughput entry {klass}")

    raw_bw = _require(doc, "bandwidth", name)
    if not raw_bw:
        raise DocumentError(f"machine {name}: empty bandwidth table")
    bandwidth = {}
    for tau, value in raw_bw.items():
        bandwidth[int(tau)] = parse_quantity(value, f"machine {name} bandwidth[{tau}]")
    for tau in range(1, cores + 1):
        if tau not in bandwidth:
            raise DocumentError(f"machine {name}: bandwidth table must cover 1..{cores}")

    pair_keys = [MachineModel.pair_key(p) for p in
                 zip([c.name for c in caches], [c.name for c in caches][1:] + [MEM])]
    transfers = {}
    for key, value in (doc.get("transfers") or {}).items():
        if key not in pair_keys:
            raise DocumentError(f"machine {name}: unknown transfer pair {key!r}")
        transfers[key] = parse_quantity(value, f"machine {name} transfers[{key}]")
    mem_pair = pair_keys[-1]
    if mem_pair not in transfers:
        # cycles/CL = cache_line * f / bandwidth
        transfers[mem_pair] = cache_line * clock / bandwidth[1]
    for key in pair_keys:
        if key not in transfers:
            raise DocumentError(f"machine {name}: missing transfer cost for {key}")

    penalties = {}
    for key, value in (doc.get("penalties") or {}).items():
        if key not in pair_keys:
            raise DocumentError(f"machine {name}: unknown penalty pair {key!r}")
        penalties[key] = parse_quantity(value, f"machine {name} penalties[{key}]")

    overlap = {}
    for key, value in (doc.get("overlap") or {}).items():
        if key not in pair_keys:
            raise DocumentError(f"machine {name}: unknown overlap pair {key!r}")
        overlap[key] = bool(value)

    return MachineModel(
        name=name,
        clock=clock,
        cores=cores,
        cache_line=cache_line,
        caches=tuple(caches),
        throughput=tuple(sorted(throughput.items())),
        transfers=tuple(sorted(transfers.items())),
        penalties=tuple(sorted(penalties.items())),
        overlap=tuple(sorted(overlap.items())),
        bandwidth=tuple(sorted(bandwidth.items())),
        compiler=str(doc.get("compiler", "")),
    )


def machine_to_document(machine: MachineModel) -> dict:
    return {
        "name": machine.name,
        "clock": machine.clock,
        "cores": machine.cores,
        "cache_line": machine.cache_line,
        "compiler": machine.compiler,
        "caches": [
            {"name": c.name, "size": c.size, "shared": c.shared} for c in machine.caches
        ],
        "throughput": dict(machine.throughput),
        "transfers": dict(machine.transfers),
        "penalties": dict(machine.penalties),
        "overlap": dict(machine.overlap),
        "bandwidth": dict(machine.bandwidth),
    }


# --------------------------------------------------------------------------
# Kernel templates
# --------------------------------------------------------------------------

_DATASTRUCT_RE = re.compile(
    r"\s*(?P<ctype>\w+)\s+(?P<name>\w+)\s*(?P<dims>(?:\[[^\]]+\])*)\s*$"
)


@dataclass(frozen=True)
class DataStruct:
    name: str
    ctype: str
    dims: tuple[str, ...]  # dimension expressions over {s, n}; empty = scalar

    def dim_exprs(self) -> tuple[ex.Expr, ...]:
        return tuple(ex.parse_expr(d) for d in self.dims)


@dataclass(frozen=True)
class KernelVariantDef:
    name: str
    code_text: str
    working_sets: tuple[str, ...]  # element counts over {s, n}; first is primary
    contains_rhs: bool

    def code(self) -> list[cb.Node]:
        return cb.parse_code_block(self.code_text, "kernel")


@dataclass(frozen=True)
class KernelTemplate:
    name: str
    datastructs: tuple[DataStruct, ...]
    computations: tuple[tuple[str, str], ...]  # (id, statement text)
    variants: tuple[KernelVariantDef, ...]

    @property
    def contains_rhs(self) -> bool:
        return any(v.contains_rhs for v in self.variants)

    def computation(self, ident: str) -> str:
        return dict(self.computations)[ident]

    def datastruct(self, name: str) -> DataStruct | None:
        for d in self.datastructs:
            if d.name == name:
                return d
        return None

    def kernel_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variants)

    def variant(self, name: str) -> KernelVariantDef:
        for v in self.variants:
            if v.name == name:
                return v
        raise ScenarioError(f"template {self.name}: no kernel named {name!r}")


def _mask_rhs(text: str) -> str:
    """Replace %RHS(vec) tokens by a dummy literal so the text parses."""
    masked = RHS_TOKEN_RE.sub("(0.0)", text)
    if "%RHS" in masked:
        raise DocumentError(f"malformed %RHS token in {text!r} (expected %RHS(vector))")
    return masked


def parse_kernel_template(text: str, default_name: str | None = None) -> KernelTemplate:
    doc = _load_yaml(text, "kernel template")
    name = _name_of(doc, default_name, "kernel template")

    datastructs = []
    for entry in _require(doc, "datastructs", name):
        m = _DATASTRUCT_RE.match(str(entry))
        if not m:
            raise DocumentError(f"template {name}: bad datastruct {entry!r}")
        dims = tuple(d for d in re.findall(r"\[([^\]]+)\]", m.group("dims")))
        for d in dims:
            expr = ex.parse_expr(d)
            bad = ex.free_names(expr) - {"s", "n"}
            if bad:
                raise DocumentError(
                    f"template {name}: dimension {d!r} uses unknown names {sorted(bad)}"
                )
        datastructs.append(DataStruct(m.group("name"), m.group("ctype"), dims))

    raw_comps = _require(doc, "computations", name)
    if not isinstance(raw_comps, dict) or not raw_comps:
        raise DocumentError(f"template {name}: computations must be a non-empty mapping")
    computations = []
    for ident, stmt_text in raw_comps.items():
        stmt_text = str(stmt_text).strip()
        try:
            ex.parse_statement(_mask_rhs(stmt_text))
        except DocumentError as exc:
            raise DocumentError(f"template {name}: computation {ident}: {exc}") from None
        computations.append((str(ident), stmt_text))
    comp_map = dict(computations)

    variants = []
    raw_variants = _require(doc, "variants", name)
    if not isinstance(raw_variants, list) or not raw_variants:
        raise DocumentError(f"template {name}: variants must be a non-empty list")
    for entry in raw_variants:
        vname = str(_require(entry, "name", f"template {name} variant"))
        code_text = str(_require(entry, "code", f"template {name} variant {vname}"))
        nodes = cb.parse_code_block(code_text, "kernel")
        referenced = cb.comp_ids(nodes)
        for ident in referenced:
            if ident not in comp_map:
                raise DocumentError(
                    f"template {name} variant {vname}: %COMP references "
                    f"unknown computation {ident!r}"
                )
        # accept the paper's flow-set spelling { "expr", ... } (a YAML mapping
        # with null values) as well as a plain list
        raw_ws = entry.get("working sets", entry.get("working_sets"))
        if isinstance(raw_ws, dict):
            ws = tuple(str(k) for k in raw_ws)
        elif isinstance(raw_ws, list):
            ws = tuple(str(w) for w in raw_ws)
        else:
            ws = ()
        if not ws:
            raise DocumentError(
                f"template {name} variant {vname}: non-empty working sets required"
            )
        for w in ws:
            expr = ex.parse_expr(w)
            bad = ex.free_names(expr) - {"s", "n"}
            if bad:
                raise DocumentError(
                    f"template {name} variant {vname}: working set {w!r} "
                    f"uses unknown names {sorted(bad)}"
                )
        contains_rhs = any("%RHS" in comp_map[ident] for ident in referenced)
        variants.append(KernelVariantDef(vname, code_text, ws, contains_rhs))

    return KernelTemplate(name, tuple(datastructs), tuple(computations), tuple(variants))


def template_to_document(template: KernelTemplate) -> dict:
    return {
        "name": template.name,
        "datastructs": [
            f"{d.ctype} {d.name}" + "".join(f"[{dim}]" for dim in d.dims)
            for d in template.datastructs
        ],
        "computations": {ident: text for ident, text in template.computations},
        "variants": [
            {
                "name": v.name,
                "code": v.code_text,
                "working sets": list(v.working_sets),
            }
            for v in template.variants
        ],
    }


# --------------------------------------------------------------------------
# Implementation skeletons
# --------------------------------------------------------------------------

SUPPORTED_COMM_OPS = {"barrier"}


@dataclass(frozen=True)
class ImplSkeleton:
    name: str
    code_text: str

    def code(self) -> list[cb.Node]:
        return cb.parse_code_block(self.code_text, "skeleton")

    @property
    def required_templates(self) -> tuple[str, ...]:
        """Referenced template names in first-occurrence order."""
        return tuple(cb.kernel_refs(self.code()))


def parse_skeleton(text: str, default_name: str | None = None) -> ImplSkeleton:
    doc = _load_yaml(text, "skeleton")
    name = _name_of(doc, default_name, "skeleton")
    code_text = str(_require(doc, "code", name))
    nodes = cb.parse_code_block(code_text, "skeleton")
    for node in cb.walk(nodes):
        if isinstance(node, cb.Comm) and node.op not in SUPPORTED_COMM_OPS:
            raise DocumentError(
                f"skeleton {name}: unsupported communication operation {node.op!r}"
            )
        if isinstance(node, cb.Loop):
            bad = ex.free_names(node.trips) - {"s", "m", "n"}
            if bad:
                raise DocumentError(
                    f"skeleton {name}: loop bound uses unknown names {sorted(bad)}"
                )
    return ImplSkeleton(name, code_text)


def skeleton_to_document(skeleton: ImplSkeleton) -> dict:
    return {"name": skeleton.name, "code": skeleton.code_text}


# --------------------------------------------------------------------------
# Serialization entry points (round-trip: parse(serialize(m)) == m)
# --------------------------------------------------------------------------

def serialize_method(m: ODEMethod) -> str:
    return yaml.safe_dump(method_to_document(m), sort_keys=False)


def serialize_ivp(ivp: IVP) -> str:
    return yaml.safe_dump(ivp_to_document(ivp), sort_keys=False)


def serialize_machine(m: MachineModel) -> str:
    return yaml.safe_dump(machine_to_document(m), sort_keys=False)


def serialize_template(t: KernelTemplate) -> str:
    return yaml.safe_dump(template_to_document(t), sort_keys=False)


def serialize_skeleton(s: ImplSkeleton) -> str:
    return yaml.safe_dump(skeleton_to_document(s), sort_keys=False)


# --------------------------------------------------------------------------
# Tuning scenario
# --------------------------------------------------------------------------

@dataclass
class TuningScenario:
    machine: MachineModel
    methods: list[ODEMethod]
    ivps: list[IVP]
    templates: list[KernelTemplate]
    skeletons: list[ImplSkeleton]
    taus: list[int]
    deviation: float = 5.0
    n: int | None = None
    n_max: int | None = None


@dataclass(frozen=True)
class ValidatedScenario:
    machine: MachineModel
    methods: tuple[ODEMethod, ...]
    ivps: tuple[IVP, ...]
    templates: tuple[KernelTemplate, ...]
    skeletons: tuple[ImplSkeleton, ...]
    taus: tuple[int, ...]
    deviation: float
    n: int | None
    n_max: int | None

    def template_by_name(self, name: str) -> KernelTemplate:
        for t in self.templates:
            if t.name == name:
                return t
        raise ScenarioError(f"unknown template {name!r}")

    def fixed_n_for(self, ivp: IVP) -> int | None:
        return self.n if self.n is not None else ivp.n


def validate_scenario(scenario: TuningScenario) -> ValidatedScenario:
    if not scenario.methods or not scenario.ivps:
        raise ScenarioError("scenario needs at least one method and one IVP")
    if not scenario.templates or not scenario.skeletons:
        raise ScenarioError("scenario needs kernel templates and skeletons")

    for group, what in (
        (scenario.methods, "method"),
        (scenario.ivps, "IVP"),
        (scenario.templates, "template"),
        (scenario.skeletons, "skeleton"),
    ):
        names = [g.name for g in group]
        if len(names) != len(set(names)):
            raise ScenarioError(f"duplicate {what} names: {sorted(names)}")

    template_names = {t.name for t in scenario.templates}
    used = set()
    for sk in scenario.skeletons:
        for ref in sk.required_templates:
            if ref not in template_names:
                raise ScenarioError(
                    f"skeleton {sk.name} references unknown template {ref!r}"
                )
            used.add(ref)
    unused = template_names - used
    if unused:
        raise ScenarioError(f"templates not used by any skeleton: {sorted(unused)}")

    if not scenario.taus:
        raise ScenarioError("scenario needs at least one core count")
    for tau in scenario.taus:
        if not 1 <= tau <= scenario.machine.cores:
            raise ScenarioError(
                f"core count {tau} outside [1, {scenario.machine.cores}]"
            )
    if scenario.deviation < 0:
        raise ScenarioError("deviation must be >= 0")

    if (scenario.n is None) == (scenario.n_max is None):
        raise ScenarioError("exactly one of n and n_max must be given")
    for ivp in scenario.ivps:
        if ivp.n is not None:
            if scenario.n_max is not None:
                raise ScenarioError(
                    f"IVP {ivp.name} fixes n={ivp.n}; working-set sampling does not apply"
                )
            if scenario.n is not None and scenario.n != ivp.n:
                raise ScenarioError(
                    f"IVP {ivp.name} fixes n={ivp.n} but the scenario requests n={scenario.n}"
                )
        if scenario.n is not None and scenario.n < ivp.n_min:
            raise ScenarioError(
                f"n={scenario.n} below the smallest valid size {ivp.n_min} of IVP {ivp.name}"
            )

    return ValidatedScenario(
        machine=scenario.machine,
        methods=tuple(scenario.methods),
        ivps=tuple(scenario.ivps),
        templates=tuple(scenario.templates),
        skeletons=tuple(scenario.skeletons),
        taus=tuple(sorted(set(scenario.taus))),
        deviation=float(scenario.deviation),
        n=scenario.n,
        n_max=scenario.n_max,
    )


# --------------------------------------------------------------------------
# File helpers
# --------------------------------------------------------------------------

def _read(path: str | Path) -> tuple[str, str]:
    p = Path(path)
    return p.read_text(encoding="utf-8"), p.stem


def load_method(path: str | Path) -> ODEMethod:
    text, stem = _read(path)
    return parse_method(text, default_name=stem)


def load_ivp(path: str | Path) -> IVP:
    text, stem = _read(path)
    return parse_ivp(text, default_name=stem)


def load_machine(path: str | Path) -> MachineModel:
    text, stem = _read(path)
    return parse_machine(text, default_name=stem)


def load_template(path: str | Path) -> KernelTemplate:
    text, stem = _read(path)
    return parse_kernel_template(text, default_name=stem)


def load_skeleton(path: str | Path) -> ImplSkeleton:
    text, stem = _read(path)
    return parse_skeleton(text, default_name=stem)
