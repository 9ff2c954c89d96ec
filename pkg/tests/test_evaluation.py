import io

import numpy as np
import pytest

from vinn import evaluation as ev
from vinn import sim
from vinn.encoder import EncoderSpec, IdentityEncoder, embed_demoset
from vinn.policy import NeighborIndex, PolicyConfig, RandomPolicy, VinnPolicy, build_index, open_loop_fit


def test_mse_is_per_component():
    # one frame off by (1, 1, 1): squared error 3 over 3 components
    assert ev.mse([[1, 1, 1]], [[0, 0, 0]]) == 1.0
    assert ev.mse([[2, 0, 0], [0, 0, 0]], [[0, 0, 0], [0, 0, 0]]) == pytest.approx(4 / 6)
    with pytest.raises(ValueError):
        ev.mse(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ev.mse(np.zeros((0, 3)), np.zeros((0, 3)))


def test_report_units():
    r = ev.MseReport("vinn", 0.0613, 10)
    assert r.scaled == pytest.approx(0.613)
    with pytest.raises(ValueError):
        ev.MseReport("x", -1.0, 1)


def test_sweep_curve_validation():
    with pytest.raises(ValueError):
        ev.SweepCurve("a", (ev.SweepPoint(2, 0.1, 0), ev.SweepPoint(1, 0.1, 0)), (0,))
    with pytest.raises(ValueError):
        ev.SweepCurve("a", (ev.SweepPoint(1, 0.1, -1),), (0,))
    c = ev.SweepCurve("a", (ev.SweepPoint(1, 0.2, 0), ev.SweepPoint(3, 0.1, 0)), (0,))
    assert c.xs == [1, 3] and c.mses == [0.2, 0.1] and c.at(3).mse == 0.1
    with pytest.raises(KeyError):
        c.at(2)


def test_eval_vinn_matches_manual(small_train, small_test):
    enc = IdentityEncoder(small_train.obs_dim)
    index = build_index(embed_demoset(enc, small_train))
    pol = VinnPolicy(index, enc, PolicyConfig(k=3))
    rep = ev.eval_policy(pol, small_test)
    obs, truth = small_test.stacked()[:2]
    from vinn.policy import lwr_action, nearest

    pred = np.array([lwr_action(nearest(index, o.astype(np.float32), 3))[0] for o in obs])
    assert rep.mse == pytest.approx(np.mean((pred - truth) ** 2), rel=1e-12)
    assert rep.config["k"] == 3 and rep.n_frames == len(truth)


def test_sweep_k_equals_independent_evals(small_train, small_test):
    enc = IdentityEncoder(small_train.obs_dim)
    index = build_index(embed_demoset(enc, small_train))
    curve = ev.sweep_k(index, enc, small_test, [4, 1, 2])
    assert curve.xs == [1, 2, 4]
    for k in curve.xs:
        want = ev.eval_policy(VinnPolicy(index, enc, PolicyConfig(k=k)), small_test).mse
        assert curve.at(k).mse == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        ev.sweep_k(index, enc, small_test, [len(index) + 1])


def test_open_loop_and_random_eval(small_train, small_test):
    ol = ev.eval_policy(open_loop_fit(small_train), small_test)
    rnd = ev.eval_policy(RandomPolicy(0), small_test)
    assert ol.mse < rnd.mse
    assert ev.eval_policy(RandomPolicy(0), small_test).mse == rnd.mse


def test_dataset_size_sweep_shapes(small_train, small_test):
    settings = ev.SweepSettings(EncoderSpec("whitening", sim.OBS_DIM, 8), bc_epochs=50)
    curves, cells = ev.dataset_size_sweep(small_train, small_test, [3, 2], [0, 1], list(ev.POLICIES), settings)
    assert set(curves) == set(ev.POLICIES)
    assert len(cells) == 2 * 2 * 4
    for name, curve in curves.items():
        assert curve.xs == [2, 3]
        vals = [c.mse for c in cells if c.policy == name and c.x == 3]
        assert curve.at(3).mse == pytest.approx(np.mean(vals))
        assert curve.at(3).std == pytest.approx(np.std(vals))
    with pytest.raises(ValueError):
        ev.dataset_size_sweep(small_train, small_test, [2], [0], ["knn"], settings)
    with pytest.raises(ValueError):
        ev.dataset_size_sweep(small_train, small_test, [99], [0], ["vinn"], settings)


def test_latency_report(rng):
    idx = NeighborIndex(rng.normal(size=(500, 8)), rng.normal(size=(500, 3)), np.zeros(500))
    rep = ev.latency_report(idx, IdentityEncoder(8), n_queries=100)
    assert rep.n_index == 500 and rep.embed_dim == 8 and rep.k == 10
    assert rep.query_time > 0 and rep.encode_time > 0
    with pytest.raises(ValueError):
        ev.latency_report(idx, None, n_queries=10)


def test_tables():
    cells = [ev.Cell("vinn", 5, 0, 0.02), ev.Cell("random", 5, 0, 0.0667)]
    buf = io.StringIO()
    ev.write_cells(cells, buf, "size")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "policy\tsize\tseed\tmse_e-1"
    assert lines[1] == "vinn\t5\t0\t0.200000"
    curve = ev.SweepCurve("vinn", (ev.SweepPoint(5, 0.02, 0.001),), (0, 1))
    buf = io.StringIO()
    ev.write_summary({"vinn": curve}, buf, "size")
    assert buf.getvalue().splitlines()[1] == "vinn\t5\t0.200000\t0.010000\t2"
    buf = io.StringIO()
    ev.write_reports([ev.MseReport("vinn", 0.05, 7)], buf)
    assert buf.getvalue().splitlines()[1] == "vinn\t7\t0.500000"
