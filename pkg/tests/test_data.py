import numpy as np
import pytest

from fedco import data as dt
from fedco.errors import ConfigError, EmptyBufferError


def rng_(seed=0):
    return np.random.default_rng(seed)


def item_dataset(ids, n_classes=2):
    """1-D feature = item id, so buffer membership is directly observable."""
    ids = np.asarray(ids, dtype=np.float64)
    return dt.Dataset(ids[:, None], np.zeros(len(ids), dtype=np.int64), n_classes)


class TestBlobsAndFileFormat:
    def test_blob_shapes_and_labels(self):
        ds = dt.make_blobs(101, 5, 4, rng_(1))
        assert ds.X.shape == (101, 6)  # bias column appended
        assert np.all(ds.X[:, -1] == 1.0)
        assert set(np.unique(ds.y)) <= set(range(4))

    def test_binary_blobs_signed(self):
        ds = dt.make_blobs(50, 3, 2, rng_(2))
        assert set(np.unique(ds.y)) == {-1, 1}

    def test_roundtrip(self, tmp_path):
        ds = dt.make_blobs(64, 4, 3, rng_(3))
        path = tmp_path / "blob.fcds"
        dt.write_dataset(path, ds)
        back = dt.read_dataset(path)
        assert back.n_classes == 3
        assert np.array_equal(back.y, ds.y)
        assert np.allclose(back.X, ds.X, atol=1e-6)  # float32 storage

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ConfigError):
            dt.read_dataset(path)


class TestPartitionStatic:
    def test_single_client_gets_everything(self):
        ds = dt.make_blobs(40, 3, 4, rng_(4))
        parts = dt.partition_static(ds, 1, 2, rng_(5))
        assert len(parts) == 1 and len(parts[0]) == 40

    def test_one_class_per_client(self):
        # 10 classes, 10 clients, 1 shard each, equal class counts
        ds = dt.make_blobs(200, 3, 10, rng_(6))
        parts = dt.partition_static(ds, 10, 1, rng_(7))
        for part in parts:
            assert len(np.unique(part.y)) == 1

    def test_partition_property(self):
        ds = dt.make_blobs(203, 3, 10, rng_(8))
        parts = dt.partition_static(ds, 5, 2, rng_(9))
        assert sum(len(p) for p in parts) == 203
        # limited class spread per client: 2 shards cover at most 4 of 10 classes
        for part in parts:
            assert len(np.unique(part.y)) <= 4

    def test_more_clients_than_samples_rejected(self):
        ds = dt.make_blobs(4, 2, 2, rng_(10))
        with pytest.raises(ConfigError):
            dt.partition_static(ds, 5, 1, rng_(11))


class TestArrivals:
    def make_stream(self, pattern="smooth", class_mode="iid", n=2000, classes=10, **kw):
        ds = dt.make_blobs(n, 3, classes, rng_(12), signed_binary=False)
        cfg = dt.StreamConfig(pattern=pattern, class_mode=class_mode, **kw)
        return dt.ClientStream(ds, cfg, rng_(13))

    def test_smooth_fires_on_interval(self):
        st = self.make_stream(arrival_count=500, interval=100)
        assert len(st.arrivals_for_round(99)) == 0
        assert len(st.arrivals_for_round(100)) == 500
        assert len(st.arrivals_for_round(101)) == 0

    def test_burst_only_at_burst_round(self):
        st = self.make_stream(pattern="burst", arrival_count=600, burst_round=500)
        assert len(st.arrivals_for_round(499)) == 0
        assert len(st.arrivals_for_round(500)) == 600
        assert len(st.arrivals_for_round(501)) == 0

    def test_burst_trickle(self):
        st = self.make_stream(pattern="burst", arrival_count=100, burst_round=5, trickle=3)
        assert len(st.arrivals_for_round(1)) == 3
        assert len(st.arrivals_for_round(5)) == 100

    def test_iid_equal_class_split(self):
        st = self.make_stream(arrival_count=500, interval=1, n=5000)
        got = st.arrivals_for_round(1)
        counts = np.bincount(got.y, minlength=10)
        assert np.all(counts == 50)

    def test_continuous_single_class_runs(self):
        st = self.make_stream(class_mode="continuous", arrival_count=50, interval=1, n=1000)
        seen = []
        for k in range(1, 21):
            got = st.arrivals_for_round(k)
            if len(got):
                classes = np.unique(got.y)
                assert len(classes) <= 2  # at most one class change inside a batch
                seen.extend(classes.tolist())
        assert len(set(seen)) > 1  # cursor advanced across classes

    def test_exhaustion_yields_empty(self):
        st = self.make_stream(arrival_count=1500, interval=1, n=2000)
        assert len(st.arrivals_for_round(1)) == 1500
        assert len(st.arrivals_for_round(2)) == 500
        assert len(st.arrivals_for_round(3)) == 0

    def test_random_counts_within_band(self):
        st = self.make_stream(pattern="random", arrival_count=40, interval=2, n=100000)
        counts = [len(st.arrivals_for_round(k)) for k in range(1, 60)]
        assert all(0 <= c <= 40 for c in counts)
        assert len(set(counts)) > 3

    def test_smooth_total_over_k_rounds(self):
        st = self.make_stream(arrival_count=100, interval=10, n=5000)
        total = sum(len(st.arrivals_for_round(k)) for k in range(1, 101))
        assert total == 100 * 10


class TestBufferPolicies:
    def test_reservoir_short_stream_keeps_everything(self):
        buf = dt.Buffer(10, 1, 2)
        dt.reservoir_update(buf, item_dataset(range(7)), rng_(14))
        assert buf.size == 7 and buf.count == 7
        assert set(buf.contents()[0].ravel()) == set(range(7))

    def test_reservoir_inclusion_frequency(self):
        n, cap, trials = 100, 10, 10_000
        hits = np.zeros(n)
        master = rng_(15)
        for _ in range(trials):
            buf = dt.Buffer(cap, 1, 2)
            dt.reservoir_update(buf, item_dataset(range(n)), master)
            hits[buf.contents()[0].ravel().astype(int)] += 1
        p = cap / n
        sigma = np.sqrt(p * (1 - p) / trials)
        assert np.all(np.abs(hits / trials - p) <= 3 * sigma)

    def test_reservoir_b1_n2_half(self):
        trials, kept_second = 20_000, 0
        master = rng_(16)
        for _ in range(trials):
            buf = dt.Buffer(1, 1, 2)
            dt.reservoir_update(buf, item_dataset([0, 1]), master)
            kept_second += int(buf.contents()[0][0, 0] == 1)
        freq = kept_second / trials
        sigma = np.sqrt(0.25 / trials)
        assert abs(freq - 0.5) <= 3 * sigma

    def test_fifo_keeps_newest(self):
        buf = dt.Buffer(3, 1, 2)
        dt.fifo_update(buf, item_dataset([1, 2, 3, 4, 5]))
        assert set(buf.contents()[0].ravel()) == {3, 4, 5}
        assert buf.count == 5 and buf.size == 3

    def test_random_replace_always_keeps_newcomer(self):
        buf = dt.Buffer(3, 1, 2)
        dt.random_replace_update(buf, item_dataset([1, 2, 3]), rng_(17))
        for newcomer in [4, 5, 6, 7]:
            dt.random_replace_update(buf, item_dataset([newcomer]), rng_(18))
            assert newcomer in set(buf.contents()[0].ravel())

    def test_capacity_never_exceeded(self):
        for policy in dt.SAMPLING_POLICIES:
            buf = dt.Buffer(5, 1, 2)
            g = rng_(19)
            for k in range(20):
                dt.apply_policy(policy, buf, item_dataset(range(3 * k, 3 * k + 3)), g)
                assert buf.size <= 5
            assert buf.count == 60

    def test_count_tracks_arrivals_exactly(self):
        buf = dt.Buffer(4, 1, 2)
        g = rng_(20)
        total = 0
        for m in [0, 3, 5, 1, 7]:
            dt.reservoir_update(buf, item_dataset(range(m)), g)
            total += m
            assert buf.count == total

    def test_seed_initial_respects_capacity(self):
        buf = dt.Buffer(4, 1, 2)
        with pytest.raises(ConfigError):
            buf.seed_initial(item_dataset(range(5)))
        buf.seed_initial(item_dataset(range(4)))
        assert buf.size == buf.count == 4


class TestSampleBatch:
    def make_buf(self, n=8):
        buf = dt.Buffer(10, 1, 2)
        buf.seed_initial(item_dataset(range(n)))
        return buf

    def test_full_draw_is_copy_of_contents(self):
        buf = self.make_buf()
        X, y, short = dt.sample_batch(buf, 8, rng_(21))
        assert not short
        assert set(X.ravel()) == set(range(8))

    def test_oversized_flags_shortfall(self):
        buf = self.make_buf()
        X, _, short = dt.sample_batch(buf, 12, rng_(22))
        assert short and len(X) == 8

    def test_empty_buffer_raises(self):
        buf = dt.Buffer(4, 1, 2)
        with pytest.raises(EmptyBufferError):
            dt.sample_batch(buf, 1, rng_(23))

    def test_single_draw_uniform_marginal(self):
        buf = self.make_buf(5)
        master = rng_(24)
        hits = np.zeros(5)
        trials = 10_000
        for _ in range(trials):
            X, _, _ = dt.sample_batch(buf, 1, master)
            hits[int(X[0, 0])] += 1
        p = 1 / 5
        sigma = np.sqrt(p * (1 - p) / trials)
        assert np.all(np.abs(hits / trials - p) <= 3 * sigma)

    def test_draw_without_replacement(self):
        buf = self.make_buf(8)
        for _ in range(50):
            X, _, _ = dt.sample_batch(buf, 5, rng_(25))
            assert len(np.unique(X.ravel())) == 5


class TestUniformityInversion:
    """FIFO and random-replacement provably fail the reservoir uniformity test."""

    @staticmethod
    def inclusion_frequencies(policy, n=50, cap=5, trials=2000, seed=26):
        master = rng_(seed)
        hits = np.zeros(n)
        for _ in range(trials):
            buf = dt.Buffer(cap, 1, 2)
            dt.apply_policy(policy, buf, item_dataset(range(n)), master)
            hits[buf.contents()[0].ravel().astype(int)] += 1
        return hits / trials

    @classmethod
    def uniformity_holds(cls, policy, n=50, cap=5, trials=2000, seed=26):
        freq = cls.inclusion_frequencies(policy, n, cap, trials, seed)
        p = cap / n
        sigma = np.sqrt(p * (1 - p) / trials)
        return bool(np.all(np.abs(freq - p) <= 3 * sigma))

    def test_reservoir_passes_fifo_and_random_fail(self):
        assert self.uniformity_holds(dt.RESERVOIR)
        assert not self.uniformity_holds(dt.FIFO)
        assert not self.uniformity_holds(dt.RANDOM_REPLACE)
