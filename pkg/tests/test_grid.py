"""Grid geometry, transforms, bilinear sampling, and the BEVF container."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevalign.grid import (
    FeatureMap,
    GridMeta,
    MetaMismatchError,
    OutOfBoundsError,
    PlanarTransform,
    apply_transform,
    apply_transform_many,
    bilinear_sample,
    clamp_to_grid,
    default_meta,
    grid_to_world,
    identity_transform,
    load_feature_map,
    read_bevf,
    require_same_meta,
    save_feature_map,
    world_to_grid,
    write_bevf,
)
from bevalign.oracles import apply_transform_mp, bilinear_oracle, world_to_grid_exact

coords = st.floats(-54.0, 54.0, allow_nan=False, allow_infinity=False)
angles = st.floats(-math.pi, math.pi, allow_nan=False, allow_infinity=False)


def small_map(h=4, w=5, c=2, seed=0):
    meta = GridMeta(0.0, w * 0.5, 0.0, h * 0.5, 0.5)
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((meta.height, meta.width, c)).astype(np.float32)
    return FeatureMap(meta=meta, data=data)


class TestGridMeta:
    def test_default_meta_shape(self):
        meta = default_meta()
        assert (meta.height, meta.width) == (144, 144)
        assert meta.contains(0.0, 0.0)
        assert not meta.contains(54.1, 0.0)

    def test_derived_shape(self):
        meta = GridMeta(-2.0, 2.0, -1.0, 2.0, 0.5)
        assert (meta.height, meta.width) == (6, 8)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(x_min=1.0, x_max=1.0, y_min=0.0, y_max=1.0, resolution=0.5),
            dict(x_min=0.0, x_max=1.0, y_min=2.0, y_max=1.0, resolution=0.5),
            dict(x_min=0.0, x_max=1.0, y_min=0.0, y_max=1.0, resolution=0.0),
            dict(x_min=0.0, x_max=1.0, y_min=0.0, y_max=1.0, resolution=-0.1),
        ],
    )
    def test_invalid_extents_raise(self, kwargs):
        with pytest.raises(ValueError):
            GridMeta(**kwargs)

    def test_dict_round_trip(self):
        meta = default_meta()
        assert GridMeta.from_dict(meta.to_dict()) == meta


class TestCoordinateMapping:
    def test_corner_maps_to_origin(self):
        meta = default_meta()
        assert world_to_grid((meta.x_min, meta.y_min), meta) == (0.0, 0.0)

    def test_row_is_y_col_is_x(self):
        meta = GridMeta(0.0, 10.0, 0.0, 10.0, 1.0)
        r, c = world_to_grid((3.0, 7.0), meta)
        assert (r, c) == (7.0, 3.0)

    @given(x=coords, y=coords)
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, x, y):
        meta = default_meta()
        gx, gy = grid_to_world(world_to_grid((x, y), meta), meta)
        assert abs(gx - x) < 1e-9 and abs(gy - y) < 1e-9

    @given(x=coords, y=coords)
    @settings(max_examples=100, deadline=None)
    def test_matches_exact_rational_mapping(self, x, y):
        meta = default_meta()
        row, col = world_to_grid((x, y), meta)
        row_f, col_f = world_to_grid_exact((x, y), meta)
        assert abs(row - float(row_f)) < 1e-9
        assert abs(col - float(col_f)) < 1e-9


class TestPlanarTransform:
    def test_identity(self):
        assert identity_transform().is_identity
        assert apply_transform((3.0, -2.0), identity_transform()) == (3.0, -2.0)

    def test_pure_rotation_quarter_turn(self):
        t = PlanarTransform(theta=math.pi / 2.0)
        x, y = apply_transform((1.0, 0.0), t)
        assert abs(x) < 1e-12 and abs(y - 1.0) < 1e-12

    @given(theta=angles, tx=coords, ty=coords, x=coords, y=coords)
    @settings(max_examples=100, deadline=None)
    def test_inverse_round_trip(self, theta, tx, ty, x, y):
        t = PlanarTransform(theta, tx, ty)
        p = apply_transform(apply_transform((x, y), t), t.inverse())
        assert abs(p[0] - x) < 1e-9 and abs(p[1] - y) < 1e-9

    @given(
        t1=st.tuples(angles, coords, coords),
        t2=st.tuples(angles, coords, coords),
        x=coords,
        y=coords,
    )
    @settings(max_examples=100, deadline=None)
    def test_compose_is_self_after_other(self, t1, t2, x, y):
        a = PlanarTransform(*t1)
        b = PlanarTransform(*t2)
        via_compose = apply_transform((x, y), a.compose(b))
        via_chain = apply_transform(apply_transform((x, y), b), a)
        assert abs(via_compose[0] - via_chain[0]) < 1e-9
        assert abs(via_compose[1] - via_chain[1]) < 1e-9

    @given(theta=angles, tx=coords, ty=coords, x=coords, y=coords)
    @settings(max_examples=50, deadline=None)
    def test_matches_high_precision_oracle(self, theta, tx, ty, x, y):
        t = PlanarTransform(theta, tx, ty)
        got = apply_transform((x, y), t)
        want = apply_transform_mp((x, y), t)
        assert abs(got[0] - want[0]) < 1e-12
        assert abs(got[1] - want[1]) < 1e-12

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        t = PlanarTransform(0.3, -1.0, 2.0)
        pts = rng.uniform(-10, 10, size=(50, 2))
        out = apply_transform_many(pts, t)
        for i in range(pts.shape[0]):
            x, y = apply_transform((pts[i, 0], pts[i, 1]), t)
            assert out[i, 0] == x and out[i, 1] == y

    def test_non_finite_theta_raises(self):
        with pytest.raises(ValueError):
            PlanarTransform(theta=float("nan"))


class TestFeatureMap:
    def test_two_dim_data_gets_channel_axis(self):
        meta = GridMeta(0.0, 2.0, 0.0, 2.0, 1.0)
        fmap = FeatureMap(meta=meta, data=np.ones((2, 2)))
        assert fmap.shape == (2, 2, 1)
        assert fmap.channels == 1

    def test_shape_mismatch_raises(self):
        meta = GridMeta(0.0, 2.0, 0.0, 2.0, 1.0)
        with pytest.raises(ValueError, match="does not match meta"):
            FeatureMap(meta=meta, data=np.ones((3, 2, 1)))

    def test_nan_rejected(self):
        meta = GridMeta(0.0, 2.0, 0.0, 2.0, 1.0)
        bad = np.ones((2, 2, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            FeatureMap(meta=meta, data=bad)

    def test_data_is_frozen(self):
        fmap = small_map()
        with pytest.raises(ValueError):
            fmap.data[0, 0, 0] = 5.0

    def test_require_same_meta(self):
        a = small_map()
        b = small_map(h=4, w=5)
        require_same_meta(a, b)
        c = FeatureMap(meta=GridMeta(0.0, 2.0, 0.0, 2.0, 1.0), data=np.ones((2, 2, 1)))
        with pytest.raises(MetaMismatchError):
            require_same_meta(a, c)


class TestBilinearSample:
    def test_integer_coordinates_exact(self):
        fmap = small_map()
        for r in range(fmap.meta.height):
            for c in range(fmap.meta.width):
                got = bilinear_sample(fmap, (float(r), float(c)))
                assert np.array_equal(got, fmap.data[r, c].astype(np.float64))

    def test_midpoint_blend(self):
        meta = GridMeta(0.0, 2.0, 0.0, 1.0, 1.0)
        fmap = FeatureMap(meta=meta, data=np.array([[1.0, 3.0]])[:, :, None])
        assert bilinear_sample(fmap, (0.0, 0.5))[0] == pytest.approx(2.0)

    def test_out_of_bounds_raises(self):
        fmap = small_map()
        with pytest.raises(OutOfBoundsError):
            bilinear_sample(fmap, (-0.01, 0.0))
        with pytest.raises(OutOfBoundsError):
            bilinear_sample(fmap, (0.0, float(fmap.meta.width)))

    def test_matches_four_term_oracle(self):
        rng = np.random.default_rng(11)
        fmap = small_map(h=7, w=6, c=3, seed=11)
        for _ in range(200):
            q = (
                float(rng.uniform(0, fmap.meta.height - 1)),
                float(rng.uniform(0, fmap.meta.width - 1)),
            )
            got = bilinear_sample(fmap, q)
            want = bilinear_oracle(fmap, q)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_single_row_and_column_grids(self):
        meta_row = GridMeta(0.0, 1.5, 0.0, 0.5, 0.5)
        fmap = FeatureMap(meta=meta_row, data=np.array([[0.0, 1.0, 4.0]])[:, :, None])
        assert bilinear_sample(fmap, (0.0, 1.5))[0] == pytest.approx(2.5)
        meta_col = GridMeta(0.0, 0.5, 0.0, 1.5, 0.5)
        fmap = FeatureMap(meta=meta_col, data=np.array([[0.0], [2.0], [6.0]])[:, :, None])
        assert bilinear_sample(fmap, (1.5, 0.0))[0] == pytest.approx(4.0)

    def test_clamp_to_grid(self):
        meta = GridMeta(0.0, 2.0, 0.0, 3.0, 1.0)
        assert clamp_to_grid((-1.0, 5.0), meta) == (0.0, 1.0)
        assert clamp_to_grid((1.5, 0.5), meta) == (1.5, 0.5)


class TestBevfContainer:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(5)
        arr = rng.standard_normal((6, 4, 3)).astype(np.float32)
        path = tmp_path / "map.bevf"
        write_bevf(path, arr)
        assert np.array_equal(read_bevf(path), arr)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "map.bevf"
        write_bevf(path, np.zeros((2, 3, 4), dtype=np.float32))
        raw = path.read_bytes()
        assert raw[:4] == b"BEVF"
        assert np.frombuffer(raw[4:16], dtype="<u4").tolist() == [2, 3, 4]
        assert len(raw) == 16 + 2 * 3 * 4 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bevf"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(ValueError, match="not a BEVF container"):
            read_bevf(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "map.bevf"
        write_bevf(path, np.zeros((2, 2, 2), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="payload"):
            read_bevf(path)

    def test_feature_map_save_load(self, tmp_path):
        fmap = small_map(seed=9)
        save_feature_map(tmp_path / "m", fmap)
        sidecar = json.loads((tmp_path / "m.json").read_text())
        assert sidecar["modality"] == "lidar"
        loaded = load_feature_map(tmp_path / "m")
        assert loaded.meta == fmap.meta
        assert loaded.modality == fmap.modality
        assert np.array_equal(loaded.data, fmap.data)
