import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genkv.episodes import (EmbeddingBank, GeneratorParams, PrototypeMode, SupportSet,
                            export_bank, generate_bank, import_bank, mean_between_class_cosine,
                            sample_episode)
from genkv.errors import CapacityError, ParseError, ValidationError


@pytest.fixture(scope="module")
def full_size_bank():
    return generate_bank(GeneratorParams(d=64, num_classes=659, samples_per_class=20, seed=1))


def _bank_with_ids(bank):
    """Map each row back to its position so disjointness can be checked."""
    ids = np.arange(len(bank.labels), dtype=float)
    vectors = np.concatenate([ids[:, None], bank.vectors], axis=1)
    return EmbeddingBank(vectors=vectors, labels=bank.labels)


class TestGenerate:
    @pytest.mark.parametrize("mode", list(PrototypeMode))
    def test_zero_spread_repeats_prototype(self, mode):
        bank = generate_bank(GeneratorParams(d=32, num_classes=5, samples_per_class=4,
                                             within_class_sd=0.0, prototype_mode=mode))
        for k in range(5):
            rows = bank.vectors[bank.class_members(k)]
            np.testing.assert_allclose(rows, np.broadcast_to(rows[0], rows.shape), atol=0)

    def test_unit_norm(self):
        bank = generate_bank(GeneratorParams(d=50, num_classes=10, samples_per_class=7))
        np.testing.assert_allclose(np.linalg.norm(bank.vectors, axis=1), 1.0, atol=1e-10)

    def test_prototypes_quasi_orthogonal(self):
        d = 512
        bank = generate_bank(GeneratorParams(d=d, num_classes=100, samples_per_class=1,
                                             within_class_sd=0.0, seed=4))
        gram = np.abs(bank.vectors @ bank.vectors.T)[np.triu_indices(100, 1)]
        # Oracle: independently drawn random unit vectors.
        rng = np.random.default_rng(99)
        u = rng.standard_normal((4000, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        oracle = np.abs(np.sum(u[::2] * u[1::2], axis=1)).mean()
        assert gram.mean() < 3 / np.sqrt(d)
        assert abs(gram.mean() - oracle) < 0.005

    def test_within_class_closer_than_between(self):
        d = 512
        bank = generate_bank(GeneratorParams(d=d, num_classes=30, samples_per_class=5,
                                             within_class_sd=0.02 / np.sqrt(d) * 10, seed=2))
        g = bank.vectors @ bank.vectors.T
        same = bank.labels[:, None] == bank.labels[None, :]
        off = ~np.eye(len(g), dtype=bool)
        assert g[same & off].mean() > g[~same].mean()
        assert mean_between_class_cosine(bank) < 3 / np.sqrt(d)

    def test_seeded(self):
        a = generate_bank(GeneratorParams(d=16, num_classes=4, samples_per_class=3, seed=7))
        b = generate_bank(GeneratorParams(d=16, num_classes=4, samples_per_class=3, seed=7))
        assert a.vectors.tobytes() == b.vectors.tobytes()

    def test_bad_params(self):
        with pytest.raises(ValidationError):
            GeneratorParams(within_class_sd=-1.0)
        with pytest.raises(ValidationError):
            GeneratorParams(samples_per_class=0)


class TestSampleEpisode:
    def test_full_size_100_way(self, full_size_bank):
        support, queries = sample_episode(full_size_bank, 100, 5, 15,
                                          np.random.default_rng(0))
        assert len(support) == 500 and len(queries) == 1500
        assert np.all(np.bincount(support.class_index) == 5)
        assert np.all(np.bincount(queries.labels) == 15)

    def test_too_many_ways(self, full_size_bank):
        with pytest.raises(CapacityError):
            sample_episode(full_size_bank, 660, 1, 1, np.random.default_rng(0))

    def test_too_many_shots(self, full_size_bank):
        with pytest.raises(CapacityError):
            sample_episode(full_size_bank, 5, 10, 11, np.random.default_rng(0))

    @given(seed=st.integers(0, 2**32), m=st.integers(1, 30), n=st.integers(1, 10))
    @settings(max_examples=40, deadline=None)
    def test_support_and_queries_disjoint(self, full_size_bank, seed, m, n):
        bank = _bank_with_ids(full_size_bank)
        support, queries = sample_episode(bank, m, n, 20 - n, np.random.default_rng(seed))
        s_ids = set(support.vectors[:, 0].astype(int))
        q_ids = set(queries.vectors[:, 0].astype(int))
        assert not s_ids & q_ids
        assert len(s_ids) == m * n
        # Every support and query row of a class comes from the same bank class.
        for k in range(m):
            src = {bank.labels[i] for i in support.vectors[support.class_index == k, 0].astype(int)}
            src |= {bank.labels[i] for i in queries.vectors[queries.labels == k, 0].astype(int)}
            assert len(src) == 1

    def test_deterministic(self, full_size_bank):
        a, qa = sample_episode(full_size_bank, 20, 5, 15, np.random.default_rng(3))
        b, qb = sample_episode(full_size_bank, 20, 5, 15, np.random.default_rng(3))
        assert a.vectors.tobytes() == b.vectors.tobytes()
        assert qa.vectors.tobytes() == qb.vectors.tobytes()


class TestSupportSet:
    def test_exactly_n_per_class(self):
        with pytest.raises(ValidationError):
            SupportSet.from_vectors(np.eye(3), [0, 0, 1])

    def test_normalized(self):
        s = SupportSet.from_vectors([[3.0, 4.0], [0.0, 2.0]], [0, 1])
        np.testing.assert_allclose(np.linalg.norm(s.vectors, axis=1), 1.0, atol=1e-12)


class TestImport:
    def test_two_rows(self, tmp_path):
        path = tmp_path / "bank.csv"
        path.write_text("1,1,0\n2,0,1\n")
        bank = import_bank(path)
        assert bank.d == 2 and bank.num_classes == 2
        np.testing.assert_array_equal(bank.vectors, np.eye(2))

    def test_ragged(self, tmp_path):
        path = tmp_path / "bank.csv"
        path.write_text("1,1,0\n2,0,1,5\n")
        with pytest.raises(ParseError, match="row 2"):
            import_bank(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "bank.csv"
        path.write_text("1,1,0\n2,zero,1\n")
        with pytest.raises(ParseError, match="row 2"):
            import_bank(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            import_bank(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        bank = generate_bank(GeneratorParams(d=24, num_classes=6, samples_per_class=4, seed=5))
        export_bank(bank, tmp_path / "b.csv")
        back = import_bank(tmp_path / "b.csv")
        np.testing.assert_allclose(back.vectors, bank.vectors, atol=1e-9)
        np.testing.assert_array_equal(back.labels, bank.labels)
