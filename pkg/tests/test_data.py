import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transmuse.data import (
    MinMaxNormalizer,
    NodeDataset,
    NormStats,
    ServiceSeries,
    denormalize,
    load_csv,
    normalize,
    split,
    window,
    window_arrays,
    window_count,
    write_csv,
)
from transmuse.exceptions import ParseError, ValidationError

from conftest import make_node

FULL = """timestamp,node_id,service_id,volume_mb
0,a,0,1.0
0,a,1,2.0
1,a,0,3.0
1,a,1,4.0
2,a,0,5.0
2,a,1,6.0
2,b,1,0.5
0,b,0,7.0
0,b,1,8.0
1,b,0,9.0
1,b,1,10.0
2,b,0,11.0
"""


class TestLoadCsv:
    def test_two_nodes_fully_populated(self, write_csv_text):
        nodes = load_csv(write_csv_text(FULL))
        assert [n.node_id for n in nodes] == ["a", "b"]
        assert all(n.length == 3 and n.num_services == 2 for n in nodes)
        np.testing.assert_array_equal(nodes[0].values, [[1, 2], [3, 4], [5, 6]])
        np.testing.assert_array_equal(nodes[1].values, [[7, 8], [9, 10], [11, 0.5]])

    def test_missing_cell_is_zero(self, write_csv_text):
        text = "\n".join(line for line in FULL.splitlines() if line != "1,a,1,4.0") + "\n"
        a = load_csv(write_csv_text(text))[0]
        assert a.values[1, 1] == 0.0

    def test_negative_volume_rejected(self, write_csv_text):
        with pytest.raises(ValidationError, match="line 3"):
            load_csv(write_csv_text("timestamp,node_id,service_id,volume_mb\n0,a,0,1\n1,a,0,-1.0\n"))

    @pytest.mark.parametrize(
        "row, line",
        [("0,a,0", 2), ("x,a,0,1.0", 2), ("0,a,zero,1.0", 2), ("0,,0,1.0", 2)],
    )
    def test_malformed_row_names_line(self, write_csv_text, row, line):
        with pytest.raises(ParseError) as err:
            load_csv(write_csv_text(f"timestamp,node_id,service_id,volume_mb\n{row}\n"))
        assert err.value.line == line
        assert f"line {line}" in str(err.value)

    def test_bad_header(self, write_csv_text):
        with pytest.raises(ParseError, match="line 1"):
            load_csv(write_csv_text("time,node,svc,vol\n0,a,0,1\n"))

    def test_duplicate_cell(self, write_csv_text):
        with pytest.raises(ParseError, match="duplicate"):
            load_csv(write_csv_text("timestamp,node_id,service_id,volume_mb\n0,a,0,1\n0,a,0,2\n"))

    def test_round_trip_with_writer(self, tmp_path, rng):
        nodes = [NodeDataset(f"n{i}", rng.uniform(0, 50, size=(7, 3))) for i in range(2)]
        back = load_csv(write_csv(nodes, tmp_path / "t.csv"))
        for a, b in zip(nodes, back):
            assert a.node_id == b.node_id
            np.testing.assert_array_equal(a.values, b.values)


class TestTypes:
    def test_service_series_rejects_negative(self):
        with pytest.raises(ValidationError):
            ServiceSeries(0, [1.0, -0.1])

    def test_node_from_series_requires_contiguous_ids(self):
        with pytest.raises(ValidationError, match="contiguous"):
            NodeDataset.from_series("n", [ServiceSeries(0, [1, 2]), ServiceSeries(2, [1, 2])])

    def test_node_from_series_requires_equal_lengths(self):
        with pytest.raises(ValidationError, match="lengths"):
            NodeDataset.from_series("n", [ServiceSeries(0, [1, 2]), ServiceSeries(1, [1, 2, 3])])

    def test_norm_stats_order(self):
        with pytest.raises(ValidationError):
            NormStats([2.0], [1.0])


class TestNormalize:
    def test_endpoints(self):
        out, stats = normalize(make_node([0, 5, 10]))
        np.testing.assert_allclose(out.values[:, 0], [0.0, 0.5, 1.0])
        assert (stats.mins[0], stats.maxs[0]) == (0.0, 10.0)

    def test_constant_series_maps_to_zero(self):
        out, _ = normalize(make_node([7, 7, 7]))
        np.testing.assert_array_equal(out.values[:, 0], [0, 0, 0])

    def test_external_stats_clamp(self):
        out, _ = normalize(make_node([0, 20]), NormStats([0.0], [10.0]))
        np.testing.assert_array_equal(out.values[:, 0], [0.0, 1.0])

    def test_missing_service_in_stats(self):
        with pytest.raises(ValidationError):
            normalize(NodeDataset("n", np.ones((3, 2))), NormStats([0.0], [1.0]))

    def test_denormalize_examples(self):
        assert denormalize(np.array([0.5]), NormStats([0.0], [10.0]))[0] == 5.0
        assert denormalize(np.array([0.0]), NormStats([3.0], [3.0]))[0] == 3.0

    def test_denormalize_dataset(self):
        ds, stats = normalize(make_node([2, 4, 6]))
        np.testing.assert_allclose(denormalize(ds, stats).values[:, 0], [2, 4, 6])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40), st.integers(1, 4))
    def test_round_trip_identity(self, vals, k):
        values = np.tile(np.asarray(vals)[:, None], (1, k)) * np.arange(1, k + 1)
        ds = NodeDataset("n", values)
        scaled, stats = normalize(ds)
        assert np.all((scaled.values >= 0) & (scaled.values <= 1))
        np.testing.assert_allclose(denormalize(scaled, stats).values, values, atol=1e-9, rtol=1e-12)

    def test_estimator_matches_functions(self, rng):
        X = rng.uniform(0, 100, size=(50, 4))
        X[:, 2] = 3.0
        est = MinMaxNormalizer().fit(X)
        out, stats = normalize(NodeDataset("n", X))
        np.testing.assert_allclose(est.transform(X), out.values)
        np.testing.assert_allclose(est.inverse_transform(est.transform(X)), X)
        assert est.get_params() == {"clip": True}


class TestSplit:
    @pytest.mark.parametrize("length, expected", [(100, (80, 10, 10)), (10, (8, 1, 1)), (11, (8, 1, 2))])
    def test_lengths(self, length, expected):
        parts = split(make_node(np.arange(length)), (0.8, 0.1, 0.1))
        assert tuple(p.length for p in parts) == expected

    def test_too_short(self):
        with pytest.raises(ValidationError):
            split(make_node(np.arange(5)), (0.8, 0.1, 0.1))

    @pytest.mark.parametrize("fractions", [(0.8, 0.1), (0.8, 0.3, 0.1), (1.0, 0.0, 0.0)])
    def test_bad_fractions(self, fractions):
        with pytest.raises(ValidationError):
            split(make_node(np.arange(100)), fractions)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(20, 300), st.floats(0.3, 0.8), st.floats(0.05, 0.15))
    def test_concatenation_is_original(self, length, f_train, f_val):
        fr = (f_train, f_val, 1.0 - f_train - f_val)
        ds = make_node(np.arange(length, dtype=float))
        parts = split(ds, fr)
        np.testing.assert_array_equal(np.concatenate([p.values for p in parts]), ds.values)


class TestWindow:
    def test_dense(self):
        samples = window(make_node(np.arange(10)), 3, 2, 1)
        assert len(samples) == 6
        assert [s.origin_index for s in samples] == [0, 1, 2, 3, 4, 5]

    def test_strided(self):
        samples = window(make_node(np.arange(10)), 3, 2, 5)
        assert [s.origin_index for s in samples] == [0, 5]
        np.testing.assert_array_equal(samples[1].input[:, 0], [5, 6, 7])
        np.testing.assert_array_equal(samples[1].target[:, 0], [8, 9])

    def test_too_short(self):
        with pytest.raises(ValidationError):
            window(make_node(np.arange(4)), 3, 2)

    def test_count_matches_enumeration_exhaustively(self):
        for length in range(1, 61):
            for T in range(1, 8):
                for F in range(1, 6):
                    for stride in range(1, 8):
                        enumerated = 0
                        origin = 0
                        while origin + T + F <= length:
                            enumerated += 1
                            origin += stride
                        assert window_count(length, T, F, stride) == enumerated
                        if enumerated:
                            assert window_arrays(np.zeros((length, 1)), T, F, stride)[0].shape[0] == enumerated

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 200), st.integers(1, 30), st.integers(1, 10), st.integers(1, 20))
    def test_count_formula_up_to_200(self, length, T, F, stride):
        expected = len(range(0, length - T - F + 1, stride)) if length >= T + F else 0
        assert window_count(length, T, F, stride) == expected
        if length >= T + F:
            assert expected == (length - T - F) // stride + 1

    def test_windows_of_normalized_data_in_unit_interval(self, rng):
        ds, _ = normalize(NodeDataset("n", rng.uniform(0, 9, size=(40, 3))))
        for s in window(ds, 5, 2):
            assert s.input.min() >= 0 and s.input.max() <= 1
            assert s.target.min() >= 0 and s.target.max() <= 1
            assert s.input.shape == (5, 3) and s.target.shape == (2, 3)
