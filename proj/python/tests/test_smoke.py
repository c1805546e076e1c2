import numpy as np
import pytest

import dform


def test_system_round_trip_and_eval():
    A = dform.random_linear(4, 3)
    f = dform.linear(A)
    assert f.dim == 4 and f.kind == "linear"
    X = np.random.default_rng(0).normal(size=(5, 4))
    np.testing.assert_allclose(f.eval(X), X @ A.T, atol=1e-12)
    g = dform.system_from_dict(dform.system_to_dict(f))
    np.testing.assert_allclose(g.eval(X), f.eval(X), atol=0)


def test_signature_generator():
    A = dform.linear_with_signature(5, 3, 0, 1)
    assert dform.signature(A) == (5, 3, 0)


def test_self_alignment():
    f = dform.linear(dform.random_linear(3, 5))
    report, phi = dform.align(f, f, {"n_batch_linear": 1000, "seed": 2})
    best = report["reps"][report["selected"]]
    assert best["scores"]["orbital_similarity"] >= 0.99
    assert phi.dim == 3 and not phi.has_flow


def test_orthogonal_pushforward_scores_one():
    f = dform.linear(dform.random_linear(4, 1))
    H = dform.random_orthogonal(4, 2)
    g = dform.affine_transformed(f, H, np.zeros(4))
    phi = dform.Diffeomorphism.affine(H, np.zeros(4))
    rng = np.random.default_rng(1)
    s = dform.alignment_scores(f, g, phi, rng.normal(size=(64, 4)), rng.normal(size=(64, 4)))
    assert s["orbital_similarity"] == pytest.approx(1.0, abs=1e-9)
    assert dform.jacobian_similarity(f, g, phi) == pytest.approx(1.0, abs=1e-6)
    Y = phi.forward(np.eye(4))
    np.testing.assert_allclose(phi.inverse(Y), np.eye(4), atol=1e-10)


def test_fixed_points_of_bla():
    pts, stab = dform.fixed_points(dform.bla(0.0, 0.3), seed=1)
    assert len(pts) == 3
    assert stab.count("stable") == 2


def test_presets_and_tiny_experiment(tmp_path):
    ids = dform.preset_ids()
    assert "vdp" in ids and len(ids) == 10
    assert dform.preset_parameters("vdp", "paper")["mu_g"] == 2.0
    s = dform.run_experiment(
        "linear_equiv", seed=1, out_dir=str(tmp_path),
        overrides={"dims": [4], "pairs": 1, "n_rep": 1, "n_batch_linear": 20},
    )
    assert s["preset"] == "linear_equiv"
    assert (tmp_path / "summary.json").exists()


def test_errors_are_python_exceptions():
    with pytest.raises(ValueError):
        dform.run_experiment("nope")
    with pytest.raises(ValueError):
        dform.linear(np.eye(3)).eval(np.zeros((2, 4)))
