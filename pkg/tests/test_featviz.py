import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wmx import featviz, nets, numerics
from wmx.classes import default_palette
from wmx.errors import ShapeError
from wmx.model_store import LayerSpec, read_ppm, render_frame
from oracles import jacobi_eigenvalues

PAL = default_palette()


@pytest.fixture(scope="module")
def small_vae():
    return nets.init_vae(seed=1, channels=(6, 8, 8, 8), latent_dim=10)


@pytest.fixture(scope="module")
def frame():
    return np.random.default_rng(0).integers(0, 24, (45, 85)).astype(np.uint8)


def test_extract_maps_full_model(frame):
    maps = featviz.extract_maps(nets.init_vae(seed=0), frame)
    assert [m.layer for m in maps] == [1, 2, 3, 4]
    assert maps[-1].maps.shape == (128, 2, 2)
    again = featviz.extract_maps(nets.init_vae(seed=0), frame)
    assert all(a.maps.tobytes() == b.maps.tobytes() for a, b in zip(maps, again))


def _identity_vae():
    layers = [
        LayerSpec("conv", "c1", "identity", 24, 24, [1, 1], role="encoder"),
        LayerSpec("dense", "mu", "identity", 24 * 3 * 4, 2, role="mean"),
        LayerSpec("dense", "dec", "identity", 2, 24 * 3 * 4, out_shape=[24, 3, 4], role="decoder"),
    ]
    w = np.eye(24).reshape(24, 24, 1, 1)
    params = {"c1.weight": w, "c1.bias": np.zeros(24), "mu.weight": np.zeros((2, 288)),
              "mu.bias": np.zeros(2), "dec.weight": np.zeros((288, 2)), "dec.bias": np.zeros(288)}
    return nets.VAE(layers, params, 2, (24, 3, 4))


def test_extract_maps_identity_fixture():
    f = np.random.default_rng(1).integers(0, 24, (3, 4)).astype(np.uint8)
    maps = featviz.extract_maps(_identity_vae(), f)
    assert len(maps) == 1
    assert np.array_equal(maps[0].maps, nets.one_hot(f, 24))


def test_rgb_mask_conventions(frame):
    assert not featviz.rgb_mask(np.full((4, 5), 3.0), frame, PAL).any()
    m = np.zeros((4, 5))
    m[0, 0] = 1.0
    out = featviz.rgb_mask(m, frame, PAL)
    rgb = render_frame(frame, PAL)
    assert np.array_equal(out[0, 0], rgb[0, 0])
    assert not out[-1, -1].any()


def test_rgb_mask_per_pixel_oracle(frame):
    rng = np.random.default_rng(2)
    fmap = rng.normal(size=(5, 10))
    out = featviz.rgb_mask(fmap, frame, PAL)
    rgb = render_frame(frame, PAL)
    lo, hi = fmap.min(), fmap.max()
    h, w = fmap.shape
    for y in range(0, 45, 4):
        for x in range(0, 85, 7):
            # bilinear, corners aligned
            sy, sx = y * (h - 1) / 44, x * (w - 1) / 84
            y0, x0 = min(int(sy), h - 2), min(int(sx), w - 2)
            fy, fx = sy - y0, sx - x0
            n = (fmap - lo) / (hi - lo)
            v = (n[y0, x0] * (1 - fx) * (1 - fy) + n[y0, x0 + 1] * fx * (1 - fy)
                 + n[y0 + 1, x0] * (1 - fx) * fy + n[y0 + 1, x0 + 1] * fx * fy)
            for ch in range(3):
                assert out[y, x, ch] == int(np.rint(v * rgb[y, x, ch]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rgb_mask_black_where_map_is_min(seed):
    rng = np.random.default_rng(seed)
    fmap = rng.normal(size=(3, 4))
    f = rng.integers(0, 24, (45, 85)).astype(np.uint8)
    out = featviz.rgb_mask(fmap, f, PAL, mode="nearest")
    weight = featviz.upsample(numerics.minmax_normalize(fmap), 45, 85, "nearest")
    assert not out[weight == 0].any()
    assert out.dtype == np.uint8


def test_eigen_maps_single_and_duplicate():
    m = np.random.default_rng(3).normal(size=(1, 3, 4))
    vecs, s = featviz.eigen_maps(featviz.LayerMaps(1, m), 1)
    assert np.allclose(np.abs(vecs[0]), np.abs(m[0]) / np.linalg.norm(m[0]), atol=1e-12)
    dup = np.concatenate([m, m])
    _, s = featviz.eigen_maps(featviz.LayerMaps(1, dup), 1)
    assert s[1] <= 1e-9
    with pytest.raises(ValueError):
        featviz.eigen_maps(featviz.LayerMaps(1, dup), 3)


def test_eigen_maps_gram_oracle():
    m = np.random.default_rng(4).normal(size=(8, 3, 5))
    vecs, s = featviz.eigen_maps(featviz.LayerMaps(1, m), 3)
    flat = m.reshape(8, -1)
    assert np.allclose(s ** 2, jacobi_eigenvalues(flat @ flat.T), atol=1e-8, rtol=0)
    assert np.all(np.diff(s) <= 0)
    for v in vecs:
        assert abs(np.linalg.norm(v) - 1) <= 1e-9
        assert v.ravel()[np.argmax(np.abs(v))] > 0


def test_self_pairing_is_identity(small_vae, frame):
    for layer in (1, 2, 3):
        p = featviz.pair_filters(small_vae, small_vae, layer, frame)
        live = [u for u, _, _ in p.pairs]
        assert [(u, v) for u, v, _ in p.pairs] == [(u, u) for u in live]
        assert all(r < 1e-9 for _, _, r in p.pairs)


def test_permuted_clone_recovered(small_vae, frame):
    perm = np.random.default_rng(5).permutation(8)
    clone = nets.permute_channels(small_vae, "conv2", perm)
    p = featviz.pair_filters(clone, small_vae, 2, frame)
    for u, v, r in p.pairs:
        assert v == perm[u] and r < 1e-9


def test_pairing_matches_exhaustive_scan(frame):
    a = nets.init_vae(seed=2, channels=(5, 6, 6, 6), latent_dim=10)
    b = nets.init_vae(seed=3, channels=(5, 6, 6, 6), latent_dim=10)
    p = featviz.pair_filters(a, b, 1, frame)
    ma = featviz.extract_maps(a, frame)[0].maps.reshape(5, -1)
    mb = featviz.extract_maps(b, frame)[0].maps.reshape(5, -1)
    for u, v, r in p.pairs:
        scored = []
        for cand in range(5):
            if cand in p.excluded_b:
                continue
            x, y = ma[u] - ma[u].mean(), mb[cand] - mb[cand].mean()
            scored.append((1 - x @ y / np.sqrt((x @ x) * (y @ y)), np.linalg.norm(ma[u] - mb[cand]), cand))
        best = min(d for d, _, _ in scored)
        _, best_v = min((g, c) for d, g, c in scored if d <= best + 1e-12)
        assert v == best_v and abs(r - best) < 1e-12
        assert 0 <= r <= 2


def test_pairing_scan_order_invariant(frame):
    a = nets.init_vae(seed=2, channels=(5, 6, 6, 6), latent_dim=10)
    b = nets.init_vae(seed=3, channels=(5, 6, 6, 6), latent_dim=10)
    perm = np.array([4, 2, 0, 3, 1])
    p1 = featviz.pair_filters(a, b, 1, frame)
    p2 = featviz.pair_filters(nets.permute_channels(a, "conv1", perm), b, 1, frame)
    d1 = {u: r for u, _, r in p1.pairs}
    d2 = {int(perm[u]): r for u, _, r in p2.pairs}
    assert d1.keys() == d2.keys()
    assert all(abs(d1[k] - d2[k]) < 1e-12 for k in d1)


def test_constant_maps_excluded_with_warning(small_vae, frame, caplog):
    params = dict(small_vae.params)
    params["conv1.weight"] = params["conv1.weight"].copy()
    params["conv1.weight"][2] = 0.0
    dead = nets.VAE(small_vae.layers, params, small_vae.latent_dim, small_vae.input_shape, small_vae.config)
    with caplog.at_level(logging.WARNING):
        p = featviz.pair_filters(dead, small_vae, 1, frame)
    assert 2 in p.excluded_a and all(u != 2 for u, _, _ in p.pairs)
    assert "constant" in caplog.text


def test_pairing_shape_mismatch(frame):
    a = nets.init_vae(seed=0, channels=(4, 4, 4, 4), latent_dim=8)
    layers = [LayerSpec("conv", "c1", "relu", 24, 4, [3, 3], role="encoder"),
              LayerSpec("dense", "mu", "identity", 4 * 43 * 83, 8, role="mean"),
              LayerSpec("dense", "dec", "identity", 8, 24 * 45 * 85, out_shape=[24, 45, 85], role="decoder")]
    rng = np.random.default_rng(0)
    params = {"c1.weight": rng.normal(size=(4, 24, 3, 3)), "c1.bias": np.zeros(4),
              "mu.weight": np.zeros((8, 4 * 43 * 83)), "mu.bias": np.zeros(8),
              "dec.weight": np.zeros((24 * 45 * 85, 8)), "dec.bias": np.zeros(24 * 45 * 85)}
    b = nets.VAE(layers, params, 8)
    with pytest.raises(ShapeError):
        featviz.pair_filters(a, b, 1, frame)


def test_layer_report_files(small_vae, frame, tmp_path):
    other = nets.init_vae(seed=9, channels=(6, 8, 8, 8), latent_dim=10)
    files = featviz.layer_report(small_vae, other, frame, PAL, tmp_path, n_pairs=2)
    names = sorted(p.name for p in files)
    assert {n.split("_")[0] for n in names} == {"L1", "L2", "L3"}
    assert "L1_eig0.ppm" in names and "L3_pair1.ppm" in names
    img = read_ppm(tmp_path / "L1_pair0.ppm")
    assert img.shape == (45 * 2 + 2, 85, 3)
    again = featviz.layer_report(small_vae, other, frame, PAL, tmp_path / "b", n_pairs=2)
    for p, q in zip(files, again):
        assert p.read_bytes() == q.read_bytes()


def test_layer_report_single_layer(tmp_path):
    vae = _identity_vae()
    f = np.random.default_rng(1).integers(0, 24, (3, 4)).astype(np.uint8)
    files = featviz.layer_report(vae, vae, f, PAL, tmp_path, n_pairs=1)
    assert sorted(p.name for p in files) == ["L1_eig0.ppm", "L1_pair0.ppm"]


def test_proportional_maps_tie_broken_by_magnitude():
    # two filters that only differ by a positive scale give identical correlation
    vae = _identity_vae()
    params = dict(vae.params)
    w = params["c1.weight"].copy()
    w[5] = 3.0 * w[2]
    params["c1.weight"] = w
    scaled = nets.VAE(vae.layers, params, vae.latent_dim, vae.input_shape, vae.config)
    f = np.random.default_rng(1).integers(0, 24, (3, 4)).astype(np.uint8)
    f[0, 0] = 2
    p = featviz.pair_filters(scaled, scaled, 1, f)
    assert all(u == v for u, v, _ in p.pairs)
