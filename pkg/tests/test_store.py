import pytest

from pirktune import predict, store as store_mod
from pirktune.corpus import corpus_root
from pirktune.documents import load_ivp
from pirktune.errors import StoreError
from pirktune.store import PredictionStore, stale_kernels_on_ivp_change


def _record(phi=1e-4):
    return predict.KernelPrediction(
        kernel_id="APRX_ji", tau=8, n=161, alpha=4.0, beta=161.0,
        delta=8, frequency=2.3e9, phi=phi,
    )


def _key(phi_free="fp0", method="radau2a7", ivp=None):
    return PredictionStore.key("APRX_ji", phi_free, method, ivp, 8, 161, 2.3e9)


def test_put_get_round_trip(tmp_path):
    with PredictionStore(tmp_path / "p.db") as store:
        store.put_prediction(_key(), _record())
        assert store.get_prediction(_key()) == _record()


def test_get_absent_returns_none(tmp_path):
    with PredictionStore(tmp_path / "p.db") as store:
        assert store.get_prediction(_key()) is None


def test_overwrite_latest_wins(tmp_path):
    with PredictionStore(tmp_path / "p.db") as store:
        store.put_prediction(_key(), _record(1e-4))
        store.put_prediction(_key(), _record(2e-4))
        assert store.get_prediction(_key()).phi == 2e-4
        assert store.prediction_count() == 1


def test_rhs_free_kernels_store_no_ivp(tmp_path):
    key = _key(ivp=None)
    assert key[3] == store_mod.NO_IVP
    with PredictionStore(tmp_path / "p.db") as store:
        store.put_prediction(key, _record())
        # a different IVP name does not shadow the shared record
        assert store.get_prediction(_key(ivp="decay")) is None
        assert store.get_prediction(_key(ivp=None)) is not None


def test_store_persists_across_connections(tmp_path):
    path = tmp_path / "p.db"
    with PredictionStore(path) as store:
        store.put_prediction(_key(), _record())
    with PredictionStore(path) as store:
        assert store.get_prediction(_key()) == _record()


def test_schema_version_mismatch_rejected(tmp_path):
    import sqlite3

    path = tmp_path / "p.db"
    db = sqlite3.connect(path)
    db.execute("PRAGMA user_version = 99")
    db.commit()
    db.close()
    with pytest.raises(StoreError):
        PredictionStore(path)


def test_comm_model_round_trip(tmp_path):
    model = predict.CommModel(1e-6, 2e-7, 4, 1e-9, 1, 8)
    with PredictionStore(tmp_path / "p.db") as store:
        assert store.get_comm_model("fp") is None
        store.put_comm_model("fp", model)
        assert store.get_comm_model("fp") == model


def test_export_csv(tmp_path):
    out = tmp_path / "dump.csv"
    with PredictionStore(tmp_path / "p.db") as store:
        assert store.export_csv(out) == 0
        assert out.read_text().startswith("kernel_id,machine_fp,method,ivp,tau,n")
        store.put_prediction(_key(), _record())
        assert store.export_csv(out) == 1
        assert "APRX_ji" in out.read_text()


# -- staleness ---------------------------------------------------------------------

def test_ivp_change_marks_exactly_rhs_kernels(corpus_scenario):
    decay = load_ivp(corpus_root() / "ivps" / "decay.yml")
    cubic = load_ivp(corpus_root() / "ivps" / "cubicdamp.yml")
    stale = stale_kernels_on_ivp_change(corpus_scenario.templates, decay, cubic)
    assert stale == {
        "RHS_ij", "RHSLC_ij",
        "RHSAPRX_ij", "RHSAPRX_ji",
        "RHSAPRXUPD_ij", "RHSAPRXUPD_ji",
    }
    assert len(stale) == 6


def test_identical_ivp_marks_nothing(corpus_scenario):
    decay = load_ivp(corpus_root() / "ivps" / "decay.yml")
    assert stale_kernels_on_ivp_change(corpus_scenario.templates, decay, decay) == set()


def test_templates_without_rhs_mark_nothing(corpus_scenario):
    decay = load_ivp(corpus_root() / "ivps" / "decay.yml")
    cubic = load_ivp(corpus_root() / "ivps" / "cubicdamp.yml")
    plain = [t for t in corpus_scenario.templates if not t.contains_rhs]
    assert stale_kernels_on_ivp_change(plain, decay, cubic) == set()
