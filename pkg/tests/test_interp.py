import numpy as np
import pytest

from pirktune import codegen, expressions as ex, interp
from pirktune.errors import BoundsError, DomainError, InterpError

from conftest import make_ivp, make_method, make_template, random_method

ZERO_IVP = {"name": "zero", "components": [
    {"first": 1, "size": "n", "code": "0 * %in[j]"}]}
CONST_IVP = {"name": "constfield", "components": [
    {"first": 1, "size": "n", "code": "ck + 0 * %in[j]"}],
    "constants": ["double ck = 2.5"]}
DECAY_IVP = {"name": "decay", "components": [
    {"first": 1, "size": "n", "code": "-rate * %in[j]"}],
    "constants": ["double rate = 0.35"]}


# -- statement evaluation ---------------------------------------------------------

def test_eval_statement_updates_single_cell():
    env = {"dy": np.array([1.0, 9.0]), "F": np.array([[2.0, 0.0]])}
    stmt = ex.parse_statement("dy[0] = dy[0] + 0.2205 * F[0][0]")
    interp.eval_statement(stmt, env)
    assert env["dy"][0] == pytest.approx(1.441)
    assert env["dy"][1] == 9.0


def test_eval_statement_identity_noop():
    env = {"a": np.array([3.0, 4.0]), "j": 1}
    before = env["a"].copy()
    interp.eval_statement(ex.parse_statement("a[j] = a[j]"), env)
    assert np.array_equal(env["a"], before)


def test_eval_statement_bounds():
    env = {"a": np.zeros(4), "j": 4}
    with pytest.raises(BoundsError):
        interp.eval_statement(ex.parse_statement("a[j] = 1.0"), env)


def test_eval_statement_unbound_target():
    with pytest.raises(InterpError):
        interp.eval_statement(ex.parse_statement("q[0] = 1.0"), {})


# -- compiled path matches the tree walk ---------------------------------------------

def test_compiled_kernel_matches_tree_walk(corpus_scenario, radau):
    rng = np.random.default_rng(17)
    lc = corpus_scenario.template_by_name("LC")
    n = 9
    for kernel in lc.kernel_names():
        g = codegen.specialize_kernel(lc, lc.variant(kernel), radau, n=n)
        seed = {
            "Y": rng.uniform(-1, 1, (4, n)),
            "F": rng.uniform(-1, 1, (4, n)),
            "y": rng.uniform(-1, 1, n),
            "A": np.asarray(radau.A),
            "h": 0.01,
        }
        env_walk = {k: (v.copy() if hasattr(v, "copy") else v) for k, v in seed.items()}
        env_fast = {k: (v.copy() if hasattr(v, "copy") else v) for k, v in seed.items()}
        interp.run_kernel(g, env_walk)
        interp.compile_kernel(g)(env_fast)
        assert np.array_equal(env_walk["Y"], env_fast["Y"])


def test_compiled_kernel_bounds_checked(radau):
    t = make_template({
        "name": "T",
        "datastructs": ["double a[n]"],
        "computations": {"C": "a[j] = a[j + 1]"},
        "variants": [{"name": "T_j",
                      "code": "%LOOP_START j n\n%COMP C\n%LOOP_END",
                      "working sets": ["n"]}],
    })
    g = codegen.specialize_kernel(t, t.variant("T_j"), radau, n=4)
    with pytest.raises(BoundsError):
        interp.compile_kernel(g)({"a": np.zeros(4)})


def test_compiled_kernel_domain_error_not_nan(radau):
    t = make_template({
        "name": "T",
        "datastructs": ["double a[n]"],
        "computations": {"C": "a[j] = sqrt(a[j])"},
        "variants": [{"name": "T_j",
                      "code": "%LOOP_START j n\n%COMP C\n%LOOP_END",
                      "working sets": ["n"]}],
    })
    g = codegen.specialize_kernel(t, t.variant("T_j"), radau, n=3)
    with pytest.raises(DomainError):
        interp.compile_kernel(g)({"a": np.array([1.0, -1.0, 4.0])})


def test_compiled_division_by_zero_raises(radau):
    t = make_template({
        "name": "T",
        "datastructs": ["double a[n]"],
        "computations": {"C": "a[j] = 1 / a[j]"},
        "variants": [{"name": "T_j",
                      "code": "%LOOP_START j n\n%COMP C\n%LOOP_END",
                      "working sets": ["n"]}],
    })
    g = codegen.specialize_kernel(t, t.variant("T_j"), radau, n=2)
    with pytest.raises(DomainError):
        interp.compile_kernel(g)({"a": np.array([2.0, 0.0])})


# -- reference step --------------------------------------------------------------------

def test_reference_step_zero_rhs(radau):
    ivp = make_ivp(ZERO_IVP)
    y = np.linspace(-1, 1, 12)
    out = interp.pirk_reference_step(radau, ivp, y, 0.0, 0.05)
    assert np.array_equal(out, y)


def test_reference_step_constant_rhs(radau):
    # the weights sum to one, so a constant field advances y by h * ck
    assert sum(radau.b) == pytest.approx(1.0)
    ivp = make_ivp(CONST_IVP)
    y = np.linspace(0, 1, 9)
    out = interp.pirk_reference_step(radau, ivp, y, 0.0, 0.05)
    assert np.allclose(out, y + 0.05 * 2.5, rtol=1e-14)


def _textbook_step(A, b, c, m, lam, y, h):
    """Independent transcription of the predictor--corrector recurrence for
    the scalar linear test field, kept free of package code on purpose."""
    s = len(b)
    Y = [y.copy() for _ in range(s)]
    for _ in range(m):
        F = [lam * Yi for Yi in Y]
        Y = [y + h * sum(A[l][i] * F[i] for i in range(s)) for l in range(s)]
    F = [lam * Yi for Yi in Y]
    return y + h * sum(b[i] * F[i] for i in range(s))


def test_reference_step_matches_textbook_linear_field(radau):
    ivp = make_ivp(DECAY_IVP)
    rng = np.random.default_rng(31)
    for _ in range(10):
        y = rng.uniform(-2, 2, 17)
        h = float(rng.uniform(1e-3, 0.1))
        got = interp.pirk_reference_step(radau, ivp, y, 0.0, h)
        want = _textbook_step(radau.A, radau.b, radau.c,
                              radau.corrector_steps, -0.35, y, h)
        assert np.allclose(got, want, rtol=1e-14)


def test_reference_step_time_dependent_rhs():
    method = make_method(stages=2, m=2, A=[["0", "0"], ["0.5", "0"]],
                         b=["0.5", "0.5"], c=["0", "0.5"])
    ivp = make_ivp({"name": "drift", "components": [
        {"first": 1, "size": "n", "code": "t + 0 * %in[j]"}]})
    y = np.zeros(3)
    t0, h = 1.0, 0.2

    def f(t, y):
        return np.full_like(y, t)

    s, m = 2, 2
    Y = [y.copy() for _ in range(s)]
    A = [[0.0, 0.0], [0.5, 0.0]]
    b = [0.5, 0.5]
    c = [0.0, 0.5]
    for _ in range(m):
        F = [f(t0 + c[i] * h, Y[i]) for i in range(s)]
        Y = [y + h * sum(A[l][i] * F[i] for i in range(s)) for l in range(s)]
    F = [f(t0 + c[i] * h, Y[i]) for i in range(s)]
    want = y + h * sum(b[i] * F[i] for i in range(s))
    got = interp.pirk_reference_step(method, ivp, y, t0, h)
    assert np.allclose(got, want, rtol=1e-14)


# -- variant execution ------------------------------------------------------------------

def _all_variants(scenario):
    variants = codegen.enumerate_variants(scenario.skeletons, scenario.templates)
    skeletons = {s.name: s for s in scenario.skeletons}
    return variants, skeletons


def test_variants_zero_rhs_fixed_point(corpus_scenario, radau):
    ivp = make_ivp(ZERO_IVP)
    n = 8
    y = np.linspace(-1, 1, n)
    variants, skeletons = _all_variants(corpus_scenario)
    executor = interp.VariantExecutor(radau, ivp, n, corpus_scenario.templates)
    for v in variants:
        out = executor.run(v, skeletons[v.skeleton_name], y, 0.0, 0.1)
        assert np.array_equal(out, y), v.variant_id


def test_variant_pairs_agree(corpus_scenario, radau):
    ivp = make_ivp(DECAY_IVP)
    n = 11
    rng = np.random.default_rng(41)
    y = rng.uniform(-1, 1, n)
    variants, skeletons = _all_variants(corpus_scenario)
    executor = interp.VariantExecutor(radau, ivp, n, corpus_scenario.templates)
    ref = interp.pirk_reference_step(radau, ivp, y, 0.0, 0.02)

    def run(vid):
        v = next(x for x in variants if x.variant_id == vid)
        return executor.run(v, skeletons[v.skeleton_name], y, 0.0, 0.02)

    a = run("A_RHSij_LCjli_APRXji_UPDj")
    f = run("F_RHSLCij_RHSAPRXUPDji")
    aprx_ij = run("A_RHSij_LCjli_APRXij_UPDj")
    for out in (a, f, aprx_ij):
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-300)
    assert np.allclose(a, f, rtol=1e-12)
    assert np.allclose(a, aprx_ij, rtol=1e-12)


def test_random_methods_all_variants_match_reference(corpus_scenario):
    rng = np.random.default_rng(53)
    ivp = make_ivp({
        "name": "band",
        "components": [
            {"first": 1, "size": 1, "code": "0.3 - %in[j]"},
            {"first": 2, "size": "n-2", "code": "0.5 * (%in[j-1] - %in[j+1]) - %in[j]"},
            {"first": "n", "size": 1, "code": "-%in[j]"},
        ],
        "access_distance": 1,
    })
    variants, skeletons = _all_variants(corpus_scenario)
    for _ in range(3):
        method = random_method(rng)
        n = int(rng.integers(5, 24))
        y = rng.uniform(-1, 1, n)
        h = float(rng.uniform(0.001, 0.05))
        ref = interp.pirk_reference_step(method, ivp, y, 0.0, h)
        executor = interp.VariantExecutor(method, ivp, n, corpus_scenario.templates)
        for v in variants:
            out = executor.run(v, skeletons[v.skeleton_name], y, 0.0, h)
            err = np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-30))
            assert err < 1e-12, (v.variant_id, err)


def test_executor_rejects_mismatched_state(corpus_scenario, radau):
    ivp = make_ivp(DECAY_IVP)
    executor = interp.VariantExecutor(radau, ivp, 8, corpus_scenario.templates)
    variants, skeletons = _all_variants(corpus_scenario)
    with pytest.raises(InterpError):
        executor.run(variants[0], skeletons[variants[0].skeleton_name],
                     np.zeros(9), 0.0, 0.1)
