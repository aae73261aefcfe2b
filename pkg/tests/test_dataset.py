import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainrec.dataset import (
    DatasetError,
    RatingDataset,
    kfold,
    load_ratings,
    load_social,
    load_tags,
    sample_ratings,
    sample_users,
    save_ratings,
)


@pytest.fixture
def three_lines(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("u1 i1 5\nu1 i2 3\nu2 i1 4\n")
    return p


def _random_ds(n_users, n_items, n, seed):
    rng = np.random.default_rng(seed)
    cells = rng.choice(n_users * n_items, size=n, replace=False)
    return RatingDataset(n_users, n_items, cells // n_items, cells % n_items, rng.integers(1, 6, n).astype(float))


class TestLoadRatings:
    def test_counts(self, three_lines):
        ds = load_ratings(three_lines)
        assert (ds.num_users, ds.num_items, len(ds)) == (2, 2, 3)
        assert ds.user_ids == ("u1", "u2")
        assert ds.triples() == [(0, 0, 5.0), (0, 1, 3.0), (1, 0, 4.0)]

    def test_implicit_mode(self, three_lines):
        ds = load_ratings(three_lines, mode="implicit")
        assert ds.ratings.tolist() == [1.0, 1.0, 1.0]
        assert ds.mode == "implicit"

    def test_duplicate_last_wins(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("u1 i1 5\nu1 i1 2\n")
        ds = load_ratings(p)
        assert len(ds) == 1
        assert ds.ratings[0] == 2.0
        assert ds.n_duplicates == 1

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("u1 i1 5\nu2 i2 five\n")
        with pytest.raises(DatasetError, match=":2:"):
            load_ratings(p)

    def test_short_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("u1 i1 5\nu2\n")
        with pytest.raises(DatasetError, match=":2:"):
            load_ratings(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text("")
        with pytest.raises(DatasetError, match="empty"):
            load_ratings(p)

    def test_hetrec_header_skipped(self, tmp_path):
        p = tmp_path / "user_ratedmovies.dat"
        p.write_text("userID\tmovieID\trating\tdate_day\n75\t3\t1.0\t29\n75\t32\t4.5\t29\n78\t3\t3.5\t1\n")
        ds = load_ratings(p, format="hetrec-tsv")
        assert (ds.num_users, ds.num_items, len(ds)) == (2, 2, 3)
        assert ds.ratings.tolist() == [1.0, 4.5, 3.5]

    def test_movielens_colons(self, tmp_path):
        p = tmp_path / "ratings.dat"
        p.write_text("1::1193::5::978300760\n1::661::3::978302109\n2::1193::4::978300275\n")
        ds = load_ratings(p, format="movielens-colons")
        assert ds.item_ids == ("1193", "661")
        assert ds.triples() == [(0, 0, 5.0), (0, 1, 3.0), (1, 0, 4.0)]

    def test_generic_csv_header_and_commas(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("user,item,rating\na,x,1.5\nb,y,2\n")
        ds = load_ratings(p)
        assert len(ds) == 2 and ds.ratings.tolist() == [1.5, 2.0]

    def test_fixed_vocabulary(self, three_lines, tmp_path):
        train = load_ratings(three_lines)
        p = tmp_path / "test.txt"
        p.write_text("u2 i2 1\nu9 i1 3\n")
        test = load_ratings(p, user_ids=train.user_ids, item_ids=train.item_ids)
        assert test.num_users == 2 and test.triples() == [(1, 1, 1.0)]
        with pytest.raises(DatasetError, match="u9"):
            load_ratings(p, user_ids=train.user_ids, item_ids=train.item_ids, strict_vocab=True)


class TestInvariants:
    def test_rejects_duplicates(self):
        with pytest.raises(DatasetError):
            RatingDataset(2, 2, [0, 0], [1, 1], [1.0, 2.0])

    def test_rejects_out_of_range(self):
        with pytest.raises(DatasetError):
            RatingDataset(2, 2, [0, 2], [1, 1], [1.0, 2.0])

    def test_implicit_requires_unit_ratings(self):
        with pytest.raises(DatasetError):
            RatingDataset(2, 2, [0], [1], [3.0], mode="implicit")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.data())
    def test_csv_round_trip(self, tmp_path_factory, n_users, n_items, data):
        n = data.draw(st.integers(1, n_users * n_items))
        ds = _random_ds(n_users, n_items, n, data.draw(st.integers(0, 2**32 - 1)))
        path = tmp_path_factory.mktemp("rt") / "ds.csv"
        save_ratings(ds, path)
        back = load_ratings(path)
        original = sorted((ds.user_ids[u], ds.item_ids[j], r) for u, j, r in ds.triples())
        reloaded = sorted((back.user_ids[u], back.item_ids[j], r) for u, j, r in back.triples())
        assert original == reloaded


class TestSocial:
    def _load(self, tmp_path, text, vocab=None):
        p = tmp_path / "s.txt"
        p.write_text(text)
        return load_social(p, vocab)

    def test_undirected_dedup(self, tmp_path):
        assert len(self._load(tmp_path, "a b\nb a\n")) == 1

    def test_self_loop_dropped(self, tmp_path):
        assert len(self._load(tmp_path, "a a\n")) == 0

    def test_two_edges(self, tmp_path):
        assert len(self._load(tmp_path, "a b\nb c\n")) == 2

    def test_unknown_user(self, tmp_path):
        with pytest.raises(DatasetError, match="'z'"):
            self._load(tmp_path, "a z\n", vocab=("a", "b"))

    def test_hetrec_header(self, tmp_path):
        s = self._load(tmp_path, "userID\tfriendID\n2\t275\n275\t2\n", vocab=("2", "275"))
        assert s.edges == ((0, 1),)


def test_load_tags(tmp_path):
    p = tmp_path / "t.dat"
    p.write_text("userID\tartistID\ttagID\n1\t10\t7\n2\t10\t8\n1\t11\t7\n1\t99\t7\n")
    tags = load_tags(p, ("10", "11", "12"), entity_column=1, tag_column=2)
    assert tags.tags == (frozenset({"7", "8"}), frozenset({"7"}), frozenset())


class TestSampling:
    def test_zero_fraction_identity(self):
        ds = _random_ds(10, 10, 30, 0)
        assert sample_ratings(ds, 0.0, 1) is ds

    def test_remove_thirty_percent(self):
        ds = _random_ds(20, 20, 100, 1)
        out = sample_ratings(ds, 0.3, 5)
        assert len(out) == 70
        assert (out.num_users, out.num_items) == (20, 20)

    def test_seed_determinism(self):
        ds = _random_ds(20, 20, 100, 1)
        a, b = sample_ratings(ds, 0.45, 9), sample_ratings(ds, 0.45, 9)
        assert a.triples() == b.triples()

    def test_bad_fraction(self):
        with pytest.raises(DatasetError):
            sample_ratings(_random_ds(3, 3, 3, 0), 1.0, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 200), st.floats(0, 0.99), st.integers(0, 2**32 - 1))
    def test_exact_count(self, n, frac, seed):
        ds = _random_ds(20, 20, n, 3)
        out = sample_ratings(ds, frac, seed)
        assert len(out) == n - int(np.floor(n * frac + 0.5))
        assert set(out.triples()) <= set(ds.triples())

    def test_sample_users_identity(self):
        ds = _random_ds(10, 10, 20, 0)
        assert sample_users(ds, 100) is ds

    def test_sample_users_threshold(self):
        users = [0] * 3 + [1] * 10 + [2] * 50
        items = list(range(3)) + list(range(10)) + list(range(50))
        ds = RatingDataset(3, 50, users, items, np.ones(63))
        out = sample_users(ds, 10)
        assert sorted(set(out.users.tolist())) == [0, 1]
        assert len(out) == 13 and out.num_users == 3

    def test_sample_users_everything_removed(self):
        ds = RatingDataset(2, 3, [0, 0, 1, 1], [0, 1, 1, 2], np.ones(4))
        assert len(sample_users(ds, 1)) == 0


class TestKFold:
    def test_sizes(self):
        folds = kfold(_random_ds(5, 5, 10, 0), 5, 0)
        assert [len(f.test) for f in folds] == [2, 2, 2, 2, 2]

    def test_too_many_folds(self):
        with pytest.raises(DatasetError):
            kfold(_random_ds(2, 2, 3, 0), 4, 0)

    def test_determinism(self):
        ds = _random_ds(8, 8, 40, 2)
        a = [f.test.triples() for f in kfold(ds, 4, 11)]
        b = [f.test.triples() for f in kfold(ds, 4, 11)]
        assert a == b

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_partition(self, n, k, seed):
        if k > n:
            return
        ds = _random_ds(10, 10, n, 4)
        folds = kfold(ds, k, seed)
        sizes = [len(f.test) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        tests = [set(f.test.triples()) for f in folds]
        assert set().union(*tests) == set(ds.triples())
        assert sum(sizes) == n
        for f in folds:
            assert not set(f.train.triples()) & set(f.test.triples())
            assert len(f.train) + len(f.test) == n
            assert f.train.user_ids == ds.user_ids
