import json
import math

import numpy as np
import pytest

import bsnn


def rot2(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_cayley_round_trip():
    rng = np.random.default_rng(0)
    for n in (2, 3, 4):
        a = rng.uniform(-1, 1, (n, n))
        a = a - a.T
        p = bsnn.cayley(a)
        assert np.allclose(p.T @ p, np.eye(n), atol=1e-12)
        assert abs(np.linalg.det(p) - 1) < 1e-12
        assert np.allclose(bsnn.cayley_inverse(p), a, atol=1e-10)
    with pytest.raises(bsnn.ContractViolation):
        bsnn.cayley(np.eye(2))


def test_cayley_kl_and_samples():
    assert bsnn.kl_cayley_uniform(0.5, 2) == pytest.approx(-math.log(0.75), abs=1e-14)
    assert bsnn.kl_cayley_uniform(0.5, 3) == pytest.approx(0.6739764, abs=1e-7)
    with pytest.raises(bsnn.UnsupportedDimension):
        bsnn.kl_cayley_uniform(0.5, 4)
    m = bsnn.sample_uniform_so(3, seed=1)
    draws = bsnn.sample_cayley(m, 0.99, count=200, seed=2)
    assert len(draws) == 200
    assert np.mean([np.linalg.norm(d - m) for d in draws]) < 0.2


def cycle(features=None):
    x = np.zeros((4, 1)) if features is None else features
    return bsnn.Graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)], x, [0, 0, 1, 1], 2)


def test_identity_sheaf_is_graph_laplacian():
    g = cycle()
    a = np.zeros((4, 4))
    for u, v in g.edges:
        a[u, v] = a[v, u] = 1
    lap = np.diag(a.sum(1)) - a
    s = bsnn.identity_sheaf(g, 1)
    assert np.array_equal(bsnn.sheaf_laplacian(s), lap)
    delta = bsnn.coboundary(s)
    assert np.allclose(delta.T @ delta, lap)
    d = np.diag(1 / np.sqrt(a.sum(1)))
    assert np.allclose(bsnn.normalized_sheaf_laplacian(s), np.eye(4) - d @ a @ d, atol=1e-12)


def pi_sheaf(g):
    maps = []
    for u, v in g.edges:
        twist = g.labels[u] != g.labels[v]
        maps.append((np.eye(2), rot2(math.pi if twist else 0.0)))
    return bsnn.Sheaf(g, "special_orthogonal", maps)


def test_diffusion_limit_and_separation():
    g = cycle()
    rng = np.random.default_rng(3)
    for s in (pi_sheaf(g), bsnn.identity_sheaf(g, 2)):
        x0 = rng.normal(size=(8, 2))
        r = bsnn.diffuse(s, x0, alpha=0.5, tol=1e-12)
        assert r["converged"]
        assert np.allclose(r["x"], bsnn.kernel_projection_limit(s, x0), atol=1e-8)
        assert bsnn.dirichlet_energy(s, r["x"]) < 1e-12
    x0 = rng.normal(size=(8, 1))
    limit = bsnn.kernel_projection_limit(pi_sheaf(g), x0).reshape(4, 2)
    assert bsnn.linear_separation_check(limit, g.labels) == [True, True]
    limit = bsnn.kernel_projection_limit(bsnn.identity_sheaf(g, 2), x0).reshape(4, 2)
    assert bsnn.linear_separation_check(limit, g.labels) == [False, False]


def test_uq_identities():
    assert bsnn.predictive_entropy(np.full(3, 1 / 3)) == pytest.approx(math.log(3), abs=1e-12)
    stack = np.tile([0.2, 0.8], (5, 1))
    assert bsnn.mutual_information(stack) == 0.0
    assert bsnn.epistemic_variance(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(0.25)
    assert bsnn.expected_calibration_error([0.9], [1], [1]) == pytest.approx(0.1, abs=1e-12)


def test_train_evaluate_round_trip(tmp_path):
    ds = bsnn.generate_sbm(n=80, homophily=0.2, feature_dim=4, seed=5)
    assert ds.graph.num_nodes == 80
    assert len(ds.train) + len(ds.valid) + len(ds.test) == 80
    cfg = {"channels": 4, "epochs": 15, "T": 3, "seeds": 2}
    out = bsnn.train(ds, cfg)
    assert 1 <= len(out["log"]) <= 15
    again = bsnn.train(ds, json.dumps(cfg))
    assert out["log"] == again["log"]

    model = out["model"]
    probs = model.predict_proba(ds, seed=1)
    assert probs.shape == (80, 2)
    assert np.allclose(probs.sum(1), 1)
    accs = bsnn.evaluate(model, ds, cfg)
    assert len(accs) == 2 and all(0 <= a <= 1 for a in accs)
    report = bsnn.uncertainty(model, ds, cfg)
    assert len(report["nodes"]) == len(ds.test)
    assert all(0 <= n["entropy"] <= math.log(2) + 1e-12 for n in report["nodes"])

    path = tmp_path / "model.json"
    model.save(str(path))
    loaded = bsnn.load_model(str(path))
    assert np.array_equal(loaded.predict_proba(ds, seed=1), probs)

    data_path = tmp_path / "ds.json"
    ds.save(str(data_path))
    assert bsnn.load_dataset(str(data_path)).to_json() == ds.to_json()


def test_errors():
    ds = bsnn.generate_sbm(n=40, seed=1)
    with pytest.raises(bsnn.ConfigError):
        bsnn.train(ds, {"epoch": 3})
    with pytest.raises(bsnn.ConfigError):
        bsnn.generate_sbm(n=40, homophily=1.5)
    with pytest.raises(bsnn.ParseError):
        bsnn.parse_dataset('{"num_nodes": 2')
    with pytest.raises(bsnn.NumericalFailure):
        bsnn.train(ds, {"lr": 1e300, "epochs": 10})
