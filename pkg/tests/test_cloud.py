import itertools

import numpy as np
import pytest

from rtnpose import so3
from rtnpose.cloud import (
    CloudFormatError,
    PointCloud,
    centralize,
    chamfer_distance,
    farthest_point_sampling,
    knn,
    normalize_unit_sphere,
    read_cloud,
    write_cloud,
)


def random_cloud(n, seed):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, 3)))


def chamfer_loops(a, b):
    """Double-loop reference."""
    def directed(p, q):
        total = 0.0
        for x in p:
            total += min(float(np.sqrt(np.sum((x - y) ** 2))) for y in q)
        return total / len(p)

    return directed(a, b) + directed(b, a)


class TestPointCloud:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud([[0, 0, np.inf]])
        with pytest.raises(ValueError):
            PointCloud([[0, 0]])

    def test_points_read_only(self):
        c = PointCloud([[1.0, 2.0, 3.0]])
        with pytest.raises(ValueError):
            c.points[0, 0] = 5.0


class TestCentralizeNormalize:
    def test_centered_is_fixed(self):
        c = PointCloud([[-1.0, 0, 0], [1.0, 0, 0]])
        np.testing.assert_array_equal(centralize(c).points, c.points)

    def test_two_points(self):
        np.testing.assert_array_equal(centralize(PointCloud([[1, 1, 1], [3, 1, 1]])).points, [[-1, 0, 0], [1, 0, 0]])

    def test_random_centroid(self):
        for s in range(20):
            c = PointCloud(np.random.default_rng(s).uniform(-5, 50, (200, 3)))
            assert np.linalg.norm(centralize(c).centroid) < 1e-12

    def test_unit_sphere_examples(self):
        c = PointCloud([[0, 0, 1.0], [0, 0.6, -0.8]])
        np.testing.assert_array_equal(normalize_unit_sphere(c).points, c.points)
        np.testing.assert_array_equal(normalize_unit_sphere(PointCloud([[0, 0, 2.0], [0, 0, -2.0]])).points, [[0, 0, 1], [0, 0, -1]])

    def test_unit_sphere_similarity(self):
        c = centralize(random_cloud(50, 3))
        out = normalize_unit_sphere(c)
        assert abs(np.linalg.norm(out.points, axis=1).max() - 1.0) < 1e-12
        d0 = np.linalg.norm(c.points[:, None] - c.points[None], axis=2)
        d1 = np.linalg.norm(out.points[:, None] - out.points[None], axis=2)
        mask = d0 > 0
        ratio = d1[mask] / d0[mask]
        assert np.ptp(ratio) < 1e-12

    def test_degenerate(self):
        with pytest.raises(ValueError):
            normalize_unit_sphere(PointCloud(np.zeros((4, 3))))


class TestFarthestPointSampling:
    def test_all(self):
        c = random_cloud(30, 0)
        assert sorted(farthest_point_sampling(c, 30).tolist()) == list(range(30))

    def test_cube_corners(self):
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
        idx = farthest_point_sampling(corners, 2)
        # brute-force: every corner is equally far from the centroid, so the
        # tie rule picks index 0; the max-min partner is its antipode
        d = np.linalg.norm(corners - corners[0], axis=1)
        assert idx.tolist() == [0, int(np.argmax(d))]
        assert corners[idx[1]].tolist() == [1.0, 1.0, 1.0]

    def test_beats_random_subsets(self):
        pts = np.random.default_rng(1).uniform(-1, 1, (200, 3))
        m = 16

        def min_pair(ix):
            p = pts[ix]
            d = np.linalg.norm(p[:, None] - p[None], axis=2)
            return d[np.triu_indices(len(ix), 1)].min()

        fps = min_pair(farthest_point_sampling(pts, m))
        rng = np.random.default_rng(2)
        for _ in range(100):
            assert fps >= min_pair(rng.choice(200, m, replace=False))

    def test_deterministic(self):
        c = random_cloud(100, 4)
        np.testing.assert_array_equal(farthest_point_sampling(c, 20), farthest_point_sampling(c, 20))

    def test_too_many(self):
        with pytest.raises(ValueError):
            farthest_point_sampling(random_cloud(5, 0), 6)


class TestKnn:
    def test_collinear_tie(self):
        nb = knn(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), 1)
        assert nb[1].tolist() == [0]
        assert nb[0].tolist() == [1] and nb[2].tolist() == [1]

    def test_all_others(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        nb = knn(pts, 9)
        for i in range(10):
            assert sorted(nb[i].tolist()) == [j for j in range(10) if j != i]
            d = np.linalg.norm(pts[nb[i]] - pts[i], axis=1)
            assert np.all(np.diff(d) >= 0)

    @pytest.mark.parametrize("n,k", [(64, 8), (256, 20)])
    def test_matches_exhaustive_sort(self, n, k):
        pts = np.random.default_rng(n).normal(size=(n, 3))
        nb = knn(pts, k)
        for i in range(n):
            cand = sorted((float(np.sum((pts[j] - pts[i]) ** 2)), j) for j in range(n) if j != i)
            assert nb[i].tolist() == [j for _, j in cand[:k]]

    @pytest.mark.parametrize("k", [0, 5, 6])
    def test_bad_k(self, k):
        with pytest.raises(ValueError):
            knn(random_cloud(5, 0), k)


class TestChamfer:
    def test_self(self):
        c = random_cloud(40, 0)
        assert chamfer_distance(c, c) == 0.0

    def test_singletons(self):
        assert chamfer_distance([[0.0, 0, 0]], [[1.0, 0, 0]]) == 2.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loops(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(rng.integers(1, 64), 3))
        b = rng.normal(size=(rng.integers(1, 64), 3))
        assert abs(chamfer_distance(a, b) - chamfer_loops(a, b)) < 1e-12

    def test_symmetric_and_rotation_invariant(self):
        a, b = random_cloud(60, 1), random_cloud(70, 2)
        assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-15)
        R = so3.haar_rotations(1, 3)[0]
        ra, rb = so3.rotate_points(R, a), so3.rotate_points(R, b)
        assert abs(chamfer_distance(ra, rb) - chamfer_distance(a, b)) < 1e-9

    def test_zero_iff_mutual_cover(self):
        a = np.array([[0.0, 0, 0], [1, 0, 0]])
        assert chamfer_distance(a, np.vstack([a, a[::-1]])) == 0.0
        assert chamfer_distance(a, a[:1]) > 0

    def test_empty(self):
        with pytest.raises(ValueError):
            chamfer_distance(np.zeros((0, 3)), np.zeros((2, 3)))


class TestIO:
    def test_xyz_round_trip_bitwise(self, tmp_path):
        c = PointCloud(np.random.default_rng(0).normal(size=(100, 3)) * 1e3)
        write_cloud(c, tmp_path / "a.xyz")
        np.testing.assert_array_equal(read_cloud(tmp_path / "a.xyz").points, c.points)

    def test_off_round_trip(self, tmp_path):
        c = PointCloud(np.random.default_rng(1).normal(size=(20, 3)))
        write_cloud(c, tmp_path / "a.off")
        np.testing.assert_array_equal(read_cloud(tmp_path / "a.off").points, c.points)

    def test_xyz_line(self, tmp_path):
        (tmp_path / "p.xyz").write_text("# header comment\n1.0 2.0 3.0\n\n")
        np.testing.assert_array_equal(read_cloud(tmp_path / "p.xyz").points, [[1, 2, 3]])

    def test_off_cube(self, tmp_path):
        verts = "\n".join(" ".join(map(str, v)) for v in itertools.product([0, 1], repeat=3))
        faces = "4 0 1 3 2\n4 4 5 7 6\n4 0 1 5 4\n4 2 3 7 6\n4 0 2 6 4\n4 1 3 7 5\n"
        (tmp_path / "cube.off").write_text(f"OFF\n8 6 0\n{verts}\n{faces}")
        c = read_cloud(tmp_path / "cube.off")
        assert len(c) == 8
        assert c.points.max() == 1.0 and c.points.min() == 0.0

    def test_off_counts_on_header_line(self, tmp_path):
        (tmp_path / "t.off").write_text("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        assert len(read_cloud(tmp_path / "t.off")) == 3

    def test_exact_emission(self, tmp_path):
        write_cloud(PointCloud([[0.1, 1.0, -2.5]]), tmp_path / "e.xyz")
        assert (tmp_path / "e.xyz").read_bytes() == b"0.10000000000000001 1 -2.5\n"

    def test_parse_error_has_line_number(self, tmp_path):
        (tmp_path / "bad.xyz").write_text("1 2 3\n4 five 6\n")
        with pytest.raises(CloudFormatError, match=r"bad.xyz:2"):
            read_cloud(tmp_path / "bad.xyz")

    def test_short_off(self, tmp_path):
        (tmp_path / "s.off").write_text("OFF\n4 0 0\n0 0 0\n")
        with pytest.raises(CloudFormatError):
            read_cloud(tmp_path / "s.off")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            read_cloud(tmp_path / "a.ply")
