import math

import numpy as np
import pytest

import modalchain as mc


def test_scenarios_listed():
    assert "naive" in mc.scenario_names()
    assert len(mc.scenario_names()) == 8


def test_ontic_probs_match_reduced_spectrum():
    psi = mc.haar_state(12, 3)
    d = mc.ontic_decompose(psi, [3, 4], [0])
    rho = mc.reduced_density(psi, [3, 4], [0])
    ev = np.sort(np.linalg.eigvalsh(rho))[::-1]
    np.testing.assert_allclose(d["probs"], ev, atol=1e-12)


def test_propagate_is_unitary():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    h = (a + a.conj().T) / 2
    u = mc.propagate(h, 0.3)
    w, v = np.linalg.eigh(h)
    np.testing.assert_allclose(u, v @ np.diag(np.exp(-0.3j * w)) @ v.conj().T, atol=1e-12)


def test_transition_columns_stochastic():
    v = np.array([[0.4, 0.05], [0.15, 0.4]])
    cond, ok = mc.transition_matrix(v, np.array([0.45, 0.55]), 1.0)
    assert ok
    np.testing.assert_allclose(cond.sum(axis=0), 1.0)


def test_singlet_chsh():
    s = 1 / math.sqrt(2)
    val = mc.chsh(s, -s, (0.0, math.pi / 2), (math.pi / 4, 3 * math.pi / 4))
    assert abs(val - 2 * math.sqrt(2)) < 1e-12
    j = mc.epr_joint(s, -s, 0.0, math.pi / 3)
    assert abs(j[0, 0] - 0.125) < 1e-14


def test_typicality_purity():
    r = mc.typicality(2, 64, 200)
    assert abs(r["mean_purity"] - 66 / 129) < 4 * r["purity_stderr"]


def test_toy_chain_converges():
    r = mc.equilibrium_convergence(8, 0.01, 1, 1250)
    assert r["converged"]
    assert abs(r["decay_steps"] - 25) < 2.5


def test_run_config(tmp_path):
    text = 'scenario = "naive"\n[parameters]\nc = [1.0, 0.0]\nn_dev = 4\n'
    r = mc.run_config(text, tmp_path / "out")
    assert r["exit_code"] == 0
    assert "p = (1, 0)" in r["summary"]
    assert (tmp_path / "out" / "manifest.json").exists()


def test_config_error():
    with pytest.raises(ValueError):
        mc.run_config('scenario = "nope"\n', "unused")
