"""End-to-end tuning workflow.

parse -> enumerate variants -> (working-set sampling when n is open) ->
kernel specialization -> cycle model -> kernel runtimes -> variant runtimes
-> ranking -> subset selection -> code emission -> persistence.

Kernel predictions are cached in the store keyed by (kernel, machine
fingerprint, method, IVP, tau, n, frequency); a warm rerun touches the cycle
model zero times and reproduces the report byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import codegen, ecm, predict, workingset
from .documents import IVP, ODEMethod, ValidatedScenario
from .errors import ScenarioError
from .store import PredictionStore


@dataclass(frozen=True)
class TuneResult:
    method: str
    ivp: str
    tau: int
    n: int
    selection: predict.Selection
    kernel_phis: tuple[tuple[str, float], ...]


@dataclass
class TuneReport:
    document: dict
    results: list[TuneResult]
    ecm_evaluations: int
    emitted: list[str]

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        doc = self.document
        lines = [
            f"machine {doc['machine']} (fingerprint {doc['machine_fingerprint']})",
            f"variants: {doc['variants_total']}   kernels: {len(doc['kernels'])}   "
            f"deviation: {doc['deviation']}%",
        ]
        for result in doc["results"]:
            lines.append("")
            lines.append(
                f"== method {result['method']}, ivp {result['ivp']}, "
                f"tau {result['tau']}, n {result['n']}"
            )
            lines.append(f"{'rank':>4}  {'variant':<42} {'theta [s]':>12} {'t_com [s]':>12}")
            for rank, row in enumerate(result["ranking"], start=1):
                lines.append(
                    f"{rank:>4}  {row['variant']:<42} {row['theta']:>12.6e} "
                    f"{row['t_com']:>12.6e}"
                )
            lines.append("selected: " + ", ".join(result["selected"]))
        return "\n".join(lines) + "\n"


class TunePipeline:
    def __init__(
        self,
        scenario: ValidatedScenario,
        store: PredictionStore,
        comm_samples: list[tuple[int, float]] | None = None,
    ):
        self.scenario = scenario
        self.store = store
        self.machine = scenario.machine
        self.machine_fp = self.machine.fingerprint()
        self.variants = codegen.enumerate_variants(scenario.skeletons, scenario.templates)
        self.templates = {t.name: t for t in scenario.templates}
        self.skeletons = {s.name: s for s in scenario.skeletons}
        self._spec_cache: dict[tuple, codegen.GeneratedKernel] = {}
        self._char_cache: dict[tuple, ecm.KernelCharacterization] = {}

        if comm_samples is not None:
            self.comm = predict.fit_comm_model(comm_samples)
            self.store.put_comm_model(self.machine_fp, self.comm)
        else:
            self.comm = self.store.get_comm_model(self.machine_fp) or predict.ZERO_COMM

    # -- kernel inventory -------------------------------------------------

    def used_templates(self) -> list[str]:
        used: list[str] = []
        for sk in self.scenario.skeletons:
            for name in sk.required_templates:
                if name not in used:
                    used.append(name)
        return sorted(used)

    def distinct_kernels(self) -> list[tuple[str, str]]:
        """(template, kernel) pairs the scenario can ever instantiate."""
        pairs = []
        for tname in self.used_templates():
            for kname in sorted(self.templates[tname].kernel_names()):
                pairs.append((tname, kname))
        return pairs

    # -- sizing -----------------------------------------------------------

    def sizes_for(self, method: ODEMethod, ivp: IVP) -> list[int]:
        fixed = self.scenario.fixed_n_for(ivp)
        if fixed is not None:
            return [fixed]
        exprs = self._cut_expressions()
        cuts: set[int] = set()
        for tau in self.scenario.taus:
            cuts.update(
                workingset.cache_cutpoints(exprs, method, self.machine, tau=tau)
            )
        return workingset.sample_sizes(sorted(cuts), ivp.n_min, self.scenario.n_max)

    def _cut_expressions(self) -> list[str]:
        """Declared working sets plus array footprints of every used kernel.

        Footprints are included so per-array residency is constant inside
        each sampled range, not only the declared kernel-level sets.
        """
        exprs: list[str] = []
        for tname in self.used_templates():
            template = self.templates[tname]
            for variant in template.variants:
                exprs.extend(variant.working_sets)
            for d in template.datastructs:
                if d.dims:
                    exprs.append("(" + ") * (".join(d.dims) + ")")
        seen = set()
        out = []
        for expr in exprs:
            if expr not in seen:
                seen.add(expr)
                out.append(expr)
        return out

    # -- kernel predictions -------------------------------------------------

    def _specialized(
        self, tname: str, kname: str, method: ODEMethod, ivp: IVP, n: int
    ) -> list[codegen.GeneratedKernel]:
        template = self.templates[tname]
        vdef = template.variant(kname)
        if vdef.contains_rhs:
            keys = [
                (tname, kname, method.name, ivp.name, ci, n)
                for ci in range(len(ivp.components))
            ]
        else:
            keys = [(tname, kname, method.name, None, None, n)]
        out = []
        for key in keys:
            if key not in self._spec_cache:
                ci = key[4]
                self._spec_cache[key] = codegen.specialize_kernel(
                    template, vdef, method,
                    ivp if ci is not None else None, ci, n,
                )
            out.append(self._spec_cache[key])
        return out

    def kernel_prediction(
        self, g: codegen.GeneratedKernel, method: ODEMethod, tau: int
    ) -> predict.KernelPrediction:
        key = PredictionStore.key(
            g.kernel_id, self.machine_fp, method.name, g.ivp_name,
            tau, g.n, self.machine.clock,
        )
        cached = self.store.get_prediction(key)
        if cached is not None:
            return cached
        ckey = (g.kernel_id, method.name, g.n)
        if ckey not in self._char_cache:
            self._char_cache[ckey] = ecm.characterize(g, self.machine)
        characterization = self._char_cache[ckey]
        residency = workingset.kernel_residency(g, self.machine, tau=tau)
        prediction = ecm.ecm_single(characterization, residency, self.machine)
        alpha = ecm.ecm_multicore(prediction, tau, self.machine)
        delta = self.machine.elements_per_line()
        if g.beta > 0 and alpha > 0:
            phi = predict.kernel_runtime(alpha, g.beta, delta, self.machine.clock)
        else:
            phi = 0.0
        record = predict.KernelPrediction(
            kernel_id=g.kernel_id, tau=tau, n=g.n, alpha=alpha, beta=g.beta,
            delta=delta, frequency=self.machine.clock, phi=phi,
        )
        self.store.put_prediction(key, record)
        return record

    # -- the full run -------------------------------------------------------

    def run(self, out_dir: str | Path | None = None) -> TuneReport:
        scenario = self.scenario
        eval_start = ecm.EVALUATIONS.count
        results: list[TuneResult] = []
        emitted: list[str] = []
        emit_root = Path(out_dir) if out_dir is not None else None
        emitted_kernels: set[str] = set()

        for method in scenario.methods:
            for ivp in scenario.ivps:
                for n in self.sizes_for(method, ivp):
                    if n < ivp.n_min:
                        raise ScenarioError(
                            f"n={n} below smallest valid size of IVP {ivp.name}"
                        )
                    generated: dict[tuple[str, str], list[codegen.GeneratedKernel]] = {}
                    for tname, kname in self.distinct_kernels():
                        generated[(tname, kname)] = self._specialized(
                            tname, kname, method, ivp, n
                        )
                    if emit_root is not None:
                        for group in generated.values():
                            for g in group:
                                fname = codegen.analyzer_kernel_filename(g)
                                if fname not in emitted_kernels:
                                    emitted_kernels.add(fname)
                                    path = emit_root / "kernels" / fname
                                    path.parent.mkdir(parents=True, exist_ok=True)
                                    path.write_text(codegen.emit_analyzer_kernel(g))
                                    emitted.append(str(Path("kernels") / fname))

                    barrier_cache = {
                        sk.name: codegen.count_barriers(sk, method)
                        for sk in scenario.skeletons
                    }
                    exec_counts = {
                        sk.name: codegen.template_execution_counts(sk, method)
                        for sk in scenario.skeletons
                    }
                    selected_per_n: set[str] = set()
                    for tau in scenario.taus:
                        preds = {}
                        for pair, group in generated.items():
                            preds[pair] = [
                                self.kernel_prediction(g, method, tau) for g in group
                            ]
                        variant_preds = []
                        for variant in self.variants:
                            counts = exec_counts[variant.skeleton_name]
                            kernel_preds = []
                            for pair in variant.kernel_choice:
                                # a kernel inside the corrector loop runs once
                                # per sweep; its phi enters the sum per run
                                kernel_preds.extend(preds[pair] * counts[pair[0]])
                            variant_preds.append(
                                predict.variant_prediction(
                                    variant.variant_id,
                                    kernel_preds,
                                    barrier_cache[variant.skeleton_name],
                                    self.comm,
                                    tau,
                                )
                            )
                        selection = predict.rank_and_select(
                            variant_preds, scenario.deviation
                        )
                        phis = sorted(
                            {
                                kp.kernel_id: kp.phi
                                for group in preds.values()
                                for kp in group
                            }.items()
                        )
                        results.append(
                            TuneResult(
                                method=method.name, ivp=ivp.name, tau=tau, n=n,
                                selection=selection, kernel_phis=tuple(phis),
                            )
                        )
                        selected_per_n.update(selection.selected)

                    if emit_root is not None:
                        by_id = {v.variant_id: v for v in self.variants}
                        for vid in sorted(selected_per_n):
                            variant = by_id[vid]
                            rel = Path("variants") / method.name / ivp.name / f"n{n}"
                            path = emit_root / rel / f"{vid}.c"
                            path.parent.mkdir(parents=True, exist_ok=True)
                            path.write_text(
                                codegen.generate_variant_code(
                                    variant, method, ivp, n,
                                    scenario.templates,
                                    self.skeletons[variant.skeleton_name],
                                )
                            )
                            emitted.append(str(rel / f"{vid}.c"))

        document = self._document(results, emitted)
        return TuneReport(
            document=document,
            results=results,
            ecm_evaluations=ecm.EVALUATIONS.count - eval_start,
            emitted=emitted,
        )

    def _document(self, results: list[TuneResult], emitted: list[str]) -> dict:
        kernel_names = [k for _, k in self.distinct_kernels()]
        comm_doc = None
        if self.comm.samples:
            comm_doc = {
                "intercept": self.comm.intercept,
                "slope": self.comm.slope,
                "samples": self.comm.samples,
                "residual_norm": self.comm.residual_norm,
            }
        return {
            "schema": 1,
            "machine": self.machine.name,
            "machine_fingerprint": self.machine_fp,
            "deviation": self.scenario.deviation,
            "taus": list(self.scenario.taus),
            "variants_total": len(self.variants),
            "kernels": kernel_names,
            "comm_model": comm_doc,
            "results": [
                {
                    "method": r.method,
                    "ivp": r.ivp,
                    "tau": r.tau,
                    "n": r.n,
                    "ranking": [
                        {
                            "variant": p.variant_id,
                            "theta": p.theta,
                            "t_com": p.t_com,
                            "barriers": p.barriers,
                        }
                        for p in r.selection.ranking
                    ],
                    "selected": list(r.selection.selected),
                    "kernel_phis": {k: phi for k, phi in r.kernel_phis},
                }
                for r in results
            ],
            "emitted": sorted(emitted),
        }


def run_tune(
    scenario: ValidatedScenario,
    store: PredictionStore,
    out_dir: str | Path | None = None,
    comm_samples: list[tuple[int, float]] | None = None,
) -> TuneReport:
    return TunePipeline(scenario, store, comm_samples).run(out_dir)
