import numpy as np
import pytest
import yaml

from pirktune import corpus, documents


@pytest.fixture(scope="session")
def corpus_scenario():
    """Full shipped corpus, fixed n = 161, single-component IVP, one tau."""
    return documents.validate_scenario(corpus.load_corpus_scenario(n=161, taus=(8,)))


@pytest.fixture(scope="session")
def radau(corpus_scenario):
    return corpus_scenario.methods[0]


@pytest.fixture(scope="session")
def hsw(corpus_scenario):
    return corpus_scenario.machine


def make_machine(
    name="testbox",
    clock=2.3e9,
    cores=8,
    cache_line=64,
    caches=((32 * 1024, False), (256 * 1024, False), (20 * 1024 * 1024, True)),
    throughput=None,
    transfers=None,
    penalties=None,
    overlap=None,
    bandwidth=None,
):
    """Build a machine document programmatically and run it through the parser."""
    doc = {
        "name": name,
        "clock": clock,
        "cores": cores,
        "cache_line": cache_line,
        "caches": [
            {"name": f"L{i + 1}", "size": size, "shared": shared}
            for i, (size, shared) in enumerate(caches)
        ],
        "throughput": throughput or {
            "ADD": 2, "MUL": 1, "FMA": 1, "DIV": 0.125, "LOAD": 2, "STORE": 1,
        },
        "transfers": transfers or {
            f"L{i + 1}-L{i + 2}": 2.0 for i in range(len(caches) - 1)
        },
        "bandwidth": bandwidth or {
            tau: 10e9 + 8e9 * (tau - 1) for tau in range(1, cores + 1)
        },
    }
    if penalties:
        doc["penalties"] = penalties
    if overlap:
        doc["overlap"] = overlap
    return documents.parse_machine(yaml.safe_dump(doc))


def make_method(name="euler", stages=1, order=1, m=1, A=None, b=None, c=None):
    doc = {
        "name": name,
        "stages": stages,
        "order": order,
        "corrector_steps": m,
        "A": A if A is not None else [["0"] * stages for _ in range(stages)],
        "b": b if b is not None else ["1"] + ["0"] * (stages - 1),
        "c": c if c is not None else ["0"] * stages,
    }
    return documents.parse_method(yaml.safe_dump(doc))


def random_method(rng: np.random.Generator, stages=None, zero_fraction=0.0):
    stages = stages if stages is not None else int(rng.integers(2, 5))
    A = rng.uniform(-0.6, 0.8, (stages, stages))
    if zero_fraction > 0:
        mask = rng.uniform(size=(stages, stages)) < zero_fraction
        A[mask] = 0.0
    b = rng.uniform(0.05, 0.5, stages)
    c = A.sum(axis=1)
    return documents.parse_method(yaml.safe_dump({
        "name": "rndm",
        "stages": stages,
        "order": 2,
        "corrector_steps": int(rng.integers(1, 4)),
        "A": [[repr(float(v)) for v in row] for row in A],
        "b": [repr(float(v)) for v in b],
        "c": [repr(float(v)) for v in c],
    }))


def make_template(doc: dict):
    return documents.parse_kernel_template(yaml.safe_dump(doc))


def make_ivp(doc: dict):
    return documents.parse_ivp(yaml.safe_dump(doc))
