import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from continual_sda.landmarks import (
    LandmarkPair,
    LandmarkSchedule,
    kmeans_landmarks,
    kmeans_pair,
    lloyd,
    subsample_tokens,
)
from continual_sda.reference import segment_means
from continual_sda.streams import generate_stream

from oracles import brute_lloyd, replay_landmarks, schedule_update_steps


def pushes(n, m, count, d=2, seed=0):
    sched = LandmarkSchedule(n, m, d)
    q, k, _ = generate_stream(seed, count, d)
    return [sched.push(q[i], k[i]) for i in range(count)], q, k


class TestSchedule:
    def test_every_fifth_push(self):
        events, _, _ = pushes(20, 4, 40)
        fired = [i + 1 for i, e in enumerate(events) if e.updated]
        assert fired == [5, 10, 15, 20, 25, 30, 35, 40]

    def test_m_equals_n_echoes_rows(self):
        events, q, k = pushes(6, 6, 10)
        for i, e in enumerate(events):
            assert e.updated
            assert np.array_equal(e.q_land, q[i]) and np.array_equal(e.k_land, k[i])

    def test_uneven_cycle(self):
        events, _, _ = pushes(7, 3, 14)
        assert [i + 1 for i, e in enumerate(events) if e.updated] == [3, 5, 7, 10, 12, 14]

    @given(st.integers(1, 40), st.data())
    def test_update_positions_match_enumeration(self, n, data):
        m = data.draw(st.integers(1, n))
        count = 3 * n
        sched = LandmarkSchedule(n, m, 1)
        fired = [t for t in range(1, count + 1) if sched.push(np.zeros(1), np.zeros(1)).updated]
        assert fired == schedule_update_steps(n, m, count)

    def test_emitted_landmark_is_segment_mean(self):
        events, q, k = pushes(7, 3, 7)
        assert np.allclose(events[2].q_land, q[0:3].mean(axis=0), atol=1e-15)
        assert np.allclose(events[4].k_land, k[3:5].mean(axis=0), atol=1e-15)

    @pytest.mark.parametrize("n,m", [(20, 4), (7, 3), (16, 5), (9, 9)])
    def test_queue_matches_history_replay(self, n, m):
        # replace-oldest queue vs means of the m most recent completed segments
        d, steps = 3, 4 * n
        q, k, _ = generate_stream(11, n + steps, d)
        ql, kl = segment_means(q[:n], m), segment_means(k[:n], m)
        sched = LandmarkSchedule(n, m, d)
        for t in range(steps):
            before = (ql.copy(), kl.copy())
            e = sched.push(q[n + t], k[n + t])
            if e.updated:
                ql = np.vstack([ql[1:], e.q_land])
                kl = np.vstack([kl[1:], e.k_land])
            else:
                assert np.array_equal(ql, before[0]) and np.array_equal(kl, before[1])
            rq, rk = replay_landmarks(q, k, n, m, t + 1)
            assert np.allclose(ql, rq, atol=1e-14) and np.allclose(kl, rk, atol=1e-14)

    def test_countdown(self):
        sched = LandmarkSchedule(7, 3, 1)
        seen = []
        for _ in range(7):
            seen.append(sched.pushes_until_update())
            sched.push(np.zeros(1), np.zeros(1))
        assert seen == [3, 2, 1, 2, 1, 2, 1]


class TestKMeans:
    @pytest.mark.parametrize("seed", range(8))
    def test_repeated_points_recovered(self, seed):
        rng = np.random.default_rng(100 + seed)
        points = rng.normal(size=(4, 3)) * 5
        tokens = np.repeat(points, 10, axis=0)
        centers = kmeans_landmarks(tokens, 4, seed=seed)
        order = np.lexsort(centers.T)
        assert np.allclose(centers[order], points[np.lexsort(points.T)], atol=1e-12)

    def test_identical_tokens(self):
        tokens = np.tile([1.5, -2.0], (30, 1))
        centers = kmeans_landmarks(tokens, 3, seed=4)
        assert np.array_equal(centers, np.tile([1.5, -2.0], (3, 1)))

    @pytest.mark.parametrize("seed", range(5))
    def test_two_blobs_against_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        tokens = np.vstack([rng.normal(-3, 0.5, size=(40, 2)), rng.normal(3, 0.5, size=(40, 2))])
        init = tokens[np.random.default_rng(seed).choice(80, size=2, replace=False)]
        expected = brute_lloyd(tokens, init)
        assert np.allclose(kmeans_landmarks(tokens, 2, seed=seed), expected, atol=1e-9, rtol=0)

    def test_deterministic(self):
        tokens = generate_stream(3, 200, 4)[0]
        assert np.array_equal(kmeans_landmarks(tokens, 5, seed=9), kmeans_landmarks(tokens, 5, seed=9))

    @settings(deadline=None, max_examples=40)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    def test_inertia_never_increases(self, seed, m):
        tokens = np.random.default_rng(seed).normal(size=(60, 3))
        init = tokens[np.random.default_rng(seed).choice(60, size=m, replace=False)]
        _, history = lloyd(tokens, init)
        assert all(b <= a + 1e-9 * max(a, 1.0) for a, b in zip(history, history[1:]))

    def test_inertia_never_increases_with_empty_clusters(self):
        # duplicate seeds force the re-seeding branch
        tokens = np.vstack([np.zeros((5, 2)), np.ones((5, 2)) * 4, np.array([[10.0, 10.0]])])
        _, history = lloyd(tokens, np.zeros((3, 2)))
        assert all(b <= a for a, b in zip(history, history[1:]))
        assert history[-1] < history[0]

    def test_m_too_large(self):
        with pytest.raises(ValueError):
            kmeans_landmarks(np.ones((3, 2)), 4)

    def test_pair(self):
        q, k, _ = generate_stream(0, 50, 3)
        pair = kmeans_pair(q, k, 4, seed=1)
        assert pair.m == 4
        assert np.array_equal(pair.k_land, kmeans_landmarks(k, 4, seed=1))

    def test_pair_shapes_checked(self):
        with pytest.raises(ValueError):
            LandmarkPair(np.ones((2, 3)), np.ones((3, 3)))


class TestSubsample:
    def test_small_input_unchanged(self):
        tokens = np.arange(10.0).reshape(5, 2)
        assert np.array_equal(subsample_tokens(tokens, 5, 0), tokens)
        assert np.array_equal(subsample_tokens(tokens, 50, 0), tokens)

    def test_seeded_and_ordered(self):
        tokens = np.arange(10.0)[:, None]
        a = subsample_tokens(tokens, 3, 42)
        assert np.array_equal(a, subsample_tokens(tokens, 3, 42))
        assert a.shape == (3, 1)
        assert (np.diff(a[:, 0]) > 0).all()

    def test_uniform_frequency(self):
        tokens = np.arange(10.0)[:, None]
        counts = np.zeros(10)
        for seed in range(1000):
            counts[subsample_tokens(tokens, 3, seed)[:, 0].astype(int)] += 1
        assert np.all(np.abs(counts / 1000 - 0.3) <= 0.05)
