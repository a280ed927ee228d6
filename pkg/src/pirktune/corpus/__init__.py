"""Access to the description documents shipped with the package."""

from __future__ import annotations

from importlib.resources import files
from pathlib import Path

from .. import documents as docs


def corpus_root() -> Path:
    return Path(str(files("pirktune").joinpath("corpus")))


def _load_dir(kind: str, loader) -> list:
    root = corpus_root() / kind
    return [loader(path) for path in sorted(root.glob("*.yml"))]


def load_corpus_scenario(
    machine: str = "hsw",
    methods: tuple[str, ...] = ("radau2a7",),
    ivps: tuple[str, ...] = ("decay",),
    taus: tuple[int, ...] = (8,),
    deviation: float = 5.0,
    n: int | None = None,
    n_max: int | None = None,
) -> docs.TuningScenario:
    """Assemble a scenario from shipped documents (all templates/skeletons)."""
    root = corpus_root()
    return docs.TuningScenario(
        machine=docs.load_machine(root / "machines" / f"{machine}.yml"),
        methods=[docs.load_method(root / "methods" / f"{m}.yml") for m in methods],
        ivps=[docs.load_ivp(root / "ivps" / f"{i}.yml") for i in ivps],
        templates=_load_dir("templates", docs.load_template),
        skeletons=_load_dir("skeletons", docs.load_skeleton),
        taus=list(taus),
        deviation=deviation,
        n=n,
        n_max=n_max,
    )


def barrier_benchmark_path(machine: str = "hsw") -> Path:
    return corpus_root() / "benchmarks" / f"barrier_{machine}.csv"
