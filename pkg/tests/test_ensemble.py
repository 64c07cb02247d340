import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ybmodel import advance_two, bounds, ensemble, storage
from ybmodel.ensemble import (ClampWarning, SnapshotFile, dispersion, divergence_time,
                              file_seed, generate_file, make_rng, perturb, random_initial,
                              sensitivity, sup_distance)


def test_random_initial_deterministic(params):
    a = random_initial(make_rng(file_seed(3, 1)), params)
    b = random_initial(make_rng(file_seed(3, 1)), params)
    assert np.array_equal(a, b)
    assert np.all(a[:200] >= 500 / 55000) and np.all(a[:200] < 200500 / 55000)


def test_file_seeds_differ():
    seeds = {file_seed(2018, k) for k in range(1, 200)}
    assert len(seeds) == 199
    assert file_seed(2018, 1) != file_seed(2019, 1)


def test_labels_default_layout(params):
    f = generate_file(1, 5, params, burn_pairs=10_000, snapshot_count=1024)
    assert len(f.post_burn) == 1024
    assert f.post_burn_labels[0] == 20000 and f.post_burn_labels[-1] == 22046
    assert len(f.labels) == 1025


def test_labels_small(params):
    f = generate_file(1, 5, params, burn_pairs=1, snapshot_count=2)
    assert list(f.labels) == [0, 2, 4]


def test_generate_rejects_empty(params):
    with pytest.raises(ValueError):
        generate_file(1, 5, params, burn_pairs=0, snapshot_count=2)


def test_chain_validity(small_ensemble, params):
    for f in small_ensemble:
        post = f.post_burn
        for k in range(len(post) - 1):
            assert np.array_equal(advance_two(post[k], params), post[k + 1])


def test_snapshots_within_bounds(small_ensemble, params):
    b = bounds(params)
    for f in small_ensemble:
        assert np.all(f.post_burn >= b.permanence_floor)
        assert np.all(f.post_burn <= b.n_max)


def test_roundtrip_and_byte_determinism(tmp_path, params):
    f = generate_file(2, file_seed(11, 2), params, burn_pairs=20, snapshot_count=5)
    f.write(tmp_path / "a.ybv")
    generate_file(2, file_seed(11, 2), params, burn_pairs=20, snapshot_count=5).write(tmp_path / "b.ybv")
    assert (tmp_path / "a.ybv").read_bytes() == (tmp_path / "b.ybv").read_bytes()
    g = SnapshotFile.read(tmp_path / "a.ybv", 2, f.seed, params)
    assert np.array_equal(g.states, f.states) and np.array_equal(g.labels, f.labels)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 201), elements=st.floats(1e-300, 1e300)),
       st.lists(st.integers(0, 2**40), min_size=3, max_size=3))
def test_snapshot_format_roundtrip(tmp_path_factory, states, labels):
    path = tmp_path_factory.mktemp("rt") / "x.ybv"
    storage.write_snapshots(path, 100, np.array(labels), states)
    p, lab, st_ = storage.read_snapshots(path)
    assert p == 100
    assert np.array_equal(lab, labels)
    assert np.array_equal(st_.view(np.uint64), states.view(np.uint64))


def test_corrupt_file(tmp_path):
    path = tmp_path / "bad.ybv"
    path.write_bytes(b"nope")
    with pytest.raises(storage.FormatError):
        storage.read_snapshots(path)


def test_ensemble_written_and_loaded(tmp_path, params):
    files = ensemble.generate_ensemble(4, 2, params, burn_pairs=10, snapshot_count=3, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.ybv")) == ["datos_0001.ybv", "datos_0002.ybv"]
    index = json.loads((tmp_path / "ensemble.json").read_text())
    assert index["master_seed"] == 4
    back = ensemble.load_ensemble(tmp_path, params)
    assert [f.file_id for f in back] == [1, 2]
    for a, b in zip(files, back):
        assert np.array_equal(a.states, b.states)


def test_load_missing(tmp_path, params):
    with pytest.raises(FileNotFoundError):
        ensemble.load_ensemble(tmp_path, params)


def test_perturb_magnitude(small_ensemble, params):
    x = small_ensemble[0].states[1]
    y = perturb(x, 1e-15, make_rng(1), params)
    assert sup_distance(x, y, params) <= 1e-15
    assert np.array_equal(perturb(x, 0.0, make_rng(1), params), x)


def test_perturb_extended_keeps_tiny_noise(small_ensemble, params):
    x = small_ensemble[0].states[1]
    y = perturb(x, 1e-18, make_rng(1), params, extended=True)
    assert y.dtype == np.longdouble
    d = sup_distance(x.astype(np.longdouble), y, params)
    assert 0 < d <= 1e-18 * (1 + 1e-3)


def test_perturb_clamps(params):
    x = np.full(201, 1e-3)
    with pytest.warns(ClampWarning):
        y = perturb(x, 1.0, make_rng(0), params)
    assert np.all(y > 0)


def test_sup_distance_ignores_last(params):
    a = np.ones(201)
    b = a.copy()
    b[200] = 100
    assert sup_distance(a, b, params) == 0
    b[0] = 1.5
    assert sup_distance(a, b, params) == 0.5


def test_divergence_identical_caps(small_ensemble, params):
    x = small_ensemble[0].states[1]
    assert divergence_time(x, x, 0.1, 50, params) == 51


def test_divergence_extended_matches_binary64_for_large_gap(small_ensemble, params):
    x = small_ensemble[0].states[1]
    y = perturb(x, 1e-9, make_rng(3), params)
    b64 = divergence_time(x, y, 0.1, 500, params)
    ext = divergence_time(x, y, 0.1, 500, params, extended=True)
    assert abs(b64 - ext) <= 2


def test_sensitivity_zero_perturbation(small_ensemble, params):
    rep = sensitivity(small_ensemble, 0.0, 0.1, 30, 1, params)
    assert np.all(rep.per_file_b == 31)


def test_sensitivity_bound(small_ensemble, params):
    rep = sensitivity(small_ensemble, 1e-9, 0.1, 1000, 1, params)
    assert np.all(rep.per_file_b <= 80)
    assert np.all(rep.realized_norms <= 1e-9)


def test_dispersion_constant():
    states = np.full((4, 201), 2.5)
    f = SnapshotFile(1, 0, np.arange(4), states)
    rep = dispersion([f])
    assert rep.grand_mean == 2.5 and rep.abs_deviation == 0


def test_dispersion_oracle(small_ensemble):
    blocks = np.vstack([f.post_burn[:, :200] for f in small_ensemble])
    rep = dispersion(small_ensemble)
    assert rep.grand_mean == pytest.approx(blocks.mean(), rel=1e-12)
    assert rep.abs_deviation == pytest.approx(np.abs(blocks - blocks.mean()).mean(), rel=1e-12)


def test_dispersion_empty():
    with pytest.raises(ValueError):
        dispersion([])
