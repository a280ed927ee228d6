import pytest
import yaml

from pirktune import documents as docs
from pirktune.corpus import corpus_root
from pirktune.errors import DocumentError, ScenarioError

from conftest import make_machine, make_method


# -- ODE methods -------------------------------------------------------------

def test_parse_method_corpus_table(radau):
    assert radau.stages == 4
    assert radau.order == 7
    assert radau.corrector_steps == 6
    assert radau.b[0] == pytest.approx(0.2205)
    assert radau.A[0] == (0.1130, -0.0403, 0.0258, -0.0099)
    # node values are spelled as row sums of A
    assert radau.c[0] == pytest.approx(0.1130 - 0.0403 + 0.0258 - 0.0099)
    assert radau.c[3] == pytest.approx(1.0)


def test_parse_method_degenerate_euler():
    m = docs.parse_method(yaml.safe_dump({
        "name": "euler", "stages": 1, "order": 1, "corrector_steps": 1,
        "A": [["0"]], "b": ["1"], "c": ["0"],
    }))
    assert m.stages == 1 and m.b == (1.0,)


def test_parse_method_arity_error():
    with pytest.raises(DocumentError):
        docs.parse_method(yaml.safe_dump({
            "name": "bad", "stages": 4, "order": 1, "corrector_steps": 1,
            "A": [["0"] * 4] * 4, "b": ["1", "0", "0"], "c": ["0"] * 4,
        }))


def test_parse_method_nonfinite_coefficient():
    with pytest.raises(DocumentError):
        docs.parse_method(yaml.safe_dump({
            "name": "bad", "stages": 1, "order": 1, "corrector_steps": 1,
            "A": [["1 / 0"]], "b": ["1"], "c": ["0"],
        }))


# -- IVPs ---------------------------------------------------------------------

def test_parse_ivp_corpus_chain():
    ivp = docs.load_ivp(corpus_root() / "ivps" / "invchain.yml")
    assert ivp.components[1].first_text == "2"
    assert ivp.components[1].size_text == "n-1"
    assert ("R", "double", 1.0) in ivp.constants
    assert ivp.access_distance == 1
    assert ivp.n_min == 2


def test_parse_ivp_full_range_block():
    ivp = docs.parse_ivp(yaml.safe_dump({
        "name": "neg", "components": [
            {"first": 1, "size": "n", "code": "-%in[j]"},
        ],
    }))
    assert ivp.n_min == 1
    assert docs.expand_components(ivp, 7) == [(0, 7)]


def test_parse_ivp_overlap_error():
    with pytest.raises(DocumentError):
        docs.parse_ivp(yaml.safe_dump({
            "name": "bad", "components": [
                {"first": 1, "size": "n", "code": "-%in[j]"},
                {"first": 1, "size": 1, "code": "%in[j]"},
            ],
        }))


def test_parse_ivp_gap_error():
    with pytest.raises(DocumentError):
        docs.parse_ivp(yaml.safe_dump({
            "name": "bad", "components": [
                {"first": 1, "size": 1, "code": "-%in[j]"},
                {"first": 3, "size": "n-2", "code": "%in[j]"},
            ],
        }))


def test_parse_ivp_duplicate_constant():
    with pytest.raises(DocumentError):
        docs.parse_ivp(yaml.safe_dump({
            "name": "bad",
            "components": [{"first": 1, "size": "n", "code": "-%in[j]"}],
            "constants": ["double a = 1.0", "double a = 2.0"],
        }))


def test_parse_ivp_constant_must_be_literal():
    with pytest.raises(DocumentError):
        docs.parse_ivp(yaml.safe_dump({
            "name": "bad",
            "components": [{"first": 1, "size": "n", "code": "-%in[j]"}],
            "constants": ["double a = b + 1"],
        }))


def test_parse_ivp_bad_rhs_code():
    with pytest.raises(DocumentError):
        docs.parse_ivp(yaml.safe_dump({
            "name": "bad",
            "components": [{"first": 1, "size": "n", "code": "%in[j] +"}],
        }))


def test_component_coverage_many_sizes():
    ivp = docs.load_ivp(corpus_root() / "ivps" / "invchain.yml")
    for n in (2, 3, 17, 161, 4096):
        ranges = docs.expand_components(ivp, n)
        cells = sorted(j for start, size in ranges for j in range(start, start + size))
        assert cells == list(range(n))


# -- machines ------------------------------------------------------------------

def test_parse_machine_corpus_hsw(hsw):
    assert hsw.clock == pytest.approx(2.3e9)
    assert hsw.cores == 8
    assert hsw.caches[0].size == 32768
    assert hsw.cache_line == 64
    assert hsw.throughput_of("ADD") == 2
    assert hsw.throughput_of("FMA") == 1
    assert hsw.throughput_of("MUL") == 1
    assert hsw.caches[2].shared


def test_machine_memory_transfer_derived_from_bandwidth():
    m = make_machine(clock=2.3e9, cache_line=64,
                     bandwidth={t: 73.6e9 for t in range(1, 9)})
    assert m.transfer_cost(("L3", "MEM")) == pytest.approx(2.0)


def test_machine_cache_ordering_error():
    with pytest.raises(DocumentError):
        make_machine(caches=((32 * 1024, False), (16 * 1024, False)))


def test_machine_missing_throughput_error():
    with pytest.raises(DocumentError):
        make_machine(throughput={"ADD": 1, "MUL": 1, "LOAD": 2})  # STORE missing


def test_machine_bandwidth_must_cover_cores():
    with pytest.raises(DocumentError):
        make_machine(bandwidth={1: 10e9})


def test_machine_fingerprint_tracks_model_fields_only():
    base = make_machine()
    renamed = make_machine(name="other")
    assert base.fingerprint() == renamed.fingerprint()
    slowed = make_machine(bandwidth={t: 9e9 for t in range(1, 9)})
    assert base.fingerprint() != slowed.fingerprint()


def test_quantity_units():
    assert docs.parse_quantity("2.3 GHz", "x") == pytest.approx(2.3e9)
    assert docs.parse_quantity("32 kB", "x") == 32768
    assert docs.parse_quantity("20 MB", "x") == 20 * 1024 * 1024
    assert docs.parse_quantity("73.6 GB/s", "x") == pytest.approx(73.6e9)
    assert docs.parse_quantity(64, "x") == 64.0
    with pytest.raises(DocumentError):
        docs.parse_quantity("12 parsecs", "x")


# -- kernel templates -----------------------------------------------------------

def test_parse_template_corpus_aprx(corpus_scenario):
    aprx = corpus_scenario.template_by_name("APRX")
    assert aprx.computation("C1") == "dy[j] = dy[j] + b[i] * F[i][j]"
    assert aprx.kernel_names() == ("APRX_ij", "APRX_ji")
    assert not aprx.contains_rhs
    # the flow-set spelling of working sets parses and keeps order
    assert aprx.variant("APRX_ij").working_sets == ("(s+1)*n + s", "2*n")


def test_template_rhs_marking(corpus_scenario):
    assert corpus_scenario.template_by_name("RHS").contains_rhs
    assert corpus_scenario.template_by_name("RHSLC").contains_rhs
    for v in corpus_scenario.template_by_name("RHSAPRX").variants:
        assert v.contains_rhs
    assert not corpus_scenario.template_by_name("UPD").contains_rhs


def test_template_unknown_comp_reference():
    with pytest.raises(DocumentError):
        docs.parse_kernel_template(yaml.safe_dump({
            "name": "T",
            "datastructs": ["double a[n]"],
            "computations": {"C1": "a[j] = a[j]"},
            "variants": [{
                "name": "T_j",
                "code": "%LOOP_START j n\n%COMP C9\n%LOOP_END",
                "working sets": ["n"],
            }],
        }))


def test_template_requires_working_sets():
    with pytest.raises(DocumentError):
        docs.parse_kernel_template(yaml.safe_dump({
            "name": "T",
            "datastructs": ["double a[n]"],
            "computations": {"C1": "a[j] = a[j]"},
            "variants": [{
                "name": "T_j",
                "code": "%LOOP_START j n\n%COMP C1\n%LOOP_END",
            }],
        }))


# -- skeletons -------------------------------------------------------------------

def test_parse_skeleton_corpus_a(corpus_scenario):
    a = next(s for s in corpus_scenario.skeletons if s.name == "A")
    assert a.required_templates == ("RHS", "LC", "APRX", "UPD")


def test_skeleton_without_comm_is_valid():
    sk = docs.parse_skeleton(yaml.safe_dump({
        "name": "S", "code": "%KERNEL UPD\n",
    }))
    assert sk.required_templates == ("UPD",)


def test_skeleton_rejects_kernel_keywords():
    with pytest.raises((DocumentError, Exception)):
        docs.parse_skeleton(yaml.safe_dump({
            "name": "S", "code": "%PRAGMA omp simd\n%KERNEL UPD\n",
        }))


def test_skeleton_rejects_unknown_comm_op():
    with pytest.raises(DocumentError):
        docs.parse_skeleton(yaml.safe_dump({
            "name": "S", "code": "%COM reduce\n%KERNEL UPD\n",
        }))


# -- round trips -------------------------------------------------------------------

def test_round_trip_all_document_kinds(corpus_scenario):
    machine = corpus_scenario.machine
    assert docs.parse_machine(docs.serialize_machine(machine)) == machine
    for method in corpus_scenario.methods:
        assert docs.parse_method(docs.serialize_method(method)) == method
    for ivp in corpus_scenario.ivps:
        assert docs.parse_ivp(docs.serialize_ivp(ivp)) == ivp
    for template in corpus_scenario.templates:
        assert docs.parse_kernel_template(docs.serialize_template(template)) == template
    for skeleton in corpus_scenario.skeletons:
        assert docs.parse_skeleton(docs.serialize_skeleton(skeleton)) == skeleton


def test_round_trip_ivp_with_metadata():
    ivp = docs.load_ivp(corpus_root() / "ivps" / "invchain.yml")
    assert docs.parse_ivp(docs.serialize_ivp(ivp)) == ivp


# -- scenario validation ---------------------------------------------------------

def _scenario(corpus_scenario, **overrides):
    base = dict(
        machine=corpus_scenario.machine,
        methods=list(corpus_scenario.methods),
        ivps=list(corpus_scenario.ivps),
        templates=list(corpus_scenario.templates),
        skeletons=list(corpus_scenario.skeletons),
        taus=[8],
        deviation=5.0,
        n=161,
        n_max=None,
    )
    base.update(overrides)
    return docs.TuningScenario(**base)


def test_validate_scenario_corpus_ok(corpus_scenario):
    validated = docs.validate_scenario(_scenario(corpus_scenario))
    assert len(validated.templates) == 8
    assert len(validated.skeletons) == 8


def test_validate_scenario_dangling_template(corpus_scenario):
    templates = [t for t in corpus_scenario.templates if t.name != "APRX"]
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, templates=templates))


def test_validate_scenario_unused_template(corpus_scenario):
    extra = docs.parse_kernel_template(yaml.safe_dump({
        "name": "ORPHAN",
        "datastructs": ["double a[n]"],
        "computations": {"C": "a[j] = a[j] + 1"},
        "variants": [{"name": "ORPHAN_j",
                      "code": "%LOOP_START j n\n%COMP C\n%LOOP_END",
                      "working sets": ["n"]}],
    }))
    templates = list(corpus_scenario.templates) + [extra]
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, templates=templates))


def test_validate_scenario_tau_bounds(corpus_scenario):
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, taus=[12]))


def test_validate_scenario_sizing_mode(corpus_scenario):
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, n=None, n_max=None))
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, n=100, n_max=1000))


def test_validate_scenario_ivp_fixed_n_conflict(corpus_scenario):
    fixed = docs.parse_ivp(yaml.safe_dump({
        "name": "fixed", "n": 32,
        "components": [{"first": 1, "size": "n", "code": "-%in[j]"}],
    }))
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, ivps=[fixed], n=64))
    with pytest.raises(ScenarioError):
        docs.validate_scenario(_scenario(corpus_scenario, ivps=[fixed], n=None, n_max=4096))
    ok = docs.validate_scenario(_scenario(corpus_scenario, ivps=[fixed], n=32))
    assert ok.fixed_n_for(ok.ivps[0]) == 32


def test_method_defaults_from_filename(tmp_path):
    path = tmp_path / "mymethod.yml"
    path.write_text(yaml.safe_dump({
        "stages": 1, "order": 1, "corrector_steps": 1,
        "A": [["0"]], "b": ["1"], "c": ["0"],
    }))
    assert docs.load_method(path).name == "mymethod"
