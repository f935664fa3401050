import numpy as np
import pytest

from labelmoments import ContractError, SourceMatrix, load_source_matrix
from labelmoments.data import matrix_from_state_counts


@pytest.fixture
def small():
    rng = np.random.default_rng(3)
    values = rng.choice([-1, 1], size=(40, 5))
    labels = rng.choice([-1, 1], size=40)
    return SourceMatrix(values, labels)


class TestValidation:
    def test_rejects_non_sign_entries(self):
        with pytest.raises(ContractError):
            SourceMatrix(np.array([[1, 0], [1, -1]]))

    def test_rejects_bad_labels(self):
        with pytest.raises(ContractError):
            SourceMatrix(np.array([[1, -1]]), np.array([2]))
        with pytest.raises(ContractError):
            SourceMatrix(np.array([[1, -1]]), np.array([1, -1]))

    def test_require_labels(self, small):
        assert small.require_labels().shape == (40,)
        with pytest.raises(ContractError):
            small.without_labels().require_labels()


class TestRoundTrips:
    def test_csv(self, tmp_path, small):
        path = tmp_path / "d.csv"
        small.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "lf_0,lf_1,lf_2,lf_3,lf_4,y"
        back = SourceMatrix.from_csv(path)
        np.testing.assert_array_equal(back.values, small.values)
        np.testing.assert_array_equal(back.labels, small.labels)

    def test_csv_unlabeled(self, tmp_path, small):
        path = tmp_path / "d.csv"
        small.without_labels().to_csv(path)
        back = SourceMatrix.from_csv(path)
        assert back.labels is None
        np.testing.assert_array_equal(back.values, small.values)

    def test_binary(self, tmp_path, small):
        path = tmp_path / "d.bin"
        small.to_binary(path)
        back = SourceMatrix.from_binary(path)
        np.testing.assert_array_equal(back.values, small.values)
        np.testing.assert_array_equal(back.labels, small.labels)

    def test_binary_magic_check(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"nope" + b"\x00" * 16)
        with pytest.raises(ContractError):
            SourceMatrix.from_binary(path)

    def test_sniffing_loader(self, tmp_path, small):
        csv_path, bin_path = tmp_path / "d.csv", tmp_path / "d.bin"
        small.to_csv(csv_path)
        small.to_binary(bin_path)
        for path in (csv_path, bin_path):
            back = load_source_matrix(path)
            np.testing.assert_array_equal(back.values, small.values)


class TestStateCounts:
    def test_counts_round_trip(self, small):
        counts = small.state_counts()
        assert counts.sum() == small.n
        back = matrix_from_state_counts(counts, small.m)
        # same multiset of rows (counts ignore order)
        np.testing.assert_array_equal(back.state_counts(), counts)

    def test_config_counts_marginalize(self, small):
        sc = small.state_counts().reshape(2, -1).sum(axis=0)
        np.testing.assert_array_equal(sc, small.config_counts())
