import numpy as np
import pytest

from lru_online.datapipe import (EMISSION_HEADER, ROLE_CATEGORICAL,
                                 ROLE_NUMERIC, ROLE_TARGET, TARGET_COLUMNS,
                                 FittedPipeline, SeriesTable, apply_pipeline,
                                 fit_pipeline, impute_knn,
                                 impute_rolling_median, join_weather,
                                 load_emission_csv, load_weather_csv,
                                 resample_to_grid, split_sessions)
from lru_online.errors import (ConfigurationError, ImputationError,
                               SchemaError, UsageError)


def numeric_table(columns, session_ids=None, timestamps=None, roles=None):
    n = len(next(iter(columns.values())))
    cols = {c: np.asarray(v, dtype=np.float64) for c, v in columns.items()}
    return SeriesTable(
        timestamps=np.asarray(timestamps if timestamps is not None
                              else np.arange(n), dtype=np.float64),
        session_ids=np.asarray(session_ids if session_ids is not None
                               else np.zeros(n), dtype=np.int64),
        columns=cols,
        roles=roles or {c: ROLE_NUMERIC for c in columns},
    )


def write_emission(path, rows):
    with open(path, "w") as fh:
        fh.write(",".join(EMISSION_HEADER) + "\n")
        for r in rows:
            fh.write(",".join("" if v is None else repr(float(v))
                              for v in r) + "\n")


def emission_row(ts, base=1.0):
    return [ts] + [base + j for j in range(10)]


class TestLoadEmissionCsv:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "e.csv"
        write_emission(path, [emission_row(t) for t in (0.0, 1.0, 2.0)])
        table = load_emission_csv(path)
        assert table.n_rows == 3
        assert np.array_equal(table.timestamps, [0.0, 1.0, 2.0])
        assert np.array_equal(table.columns["engine_rpm"], [1.0, 1.0, 1.0])
        assert table.roles["no_ppm"] == ROLE_TARGET

    def test_empty_cell_becomes_nan(self, tmp_path):
        path = tmp_path / "e.csv"
        row = emission_row(0.0)
        row[3] = None
        write_emission(path, [row, emission_row(1.0)])
        table = load_emission_csv(path)
        assert np.isnan(table.columns["coolant_c"][0])

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "e.csv"
        with open(path, "w") as fh:
            fh.write("time,rpm\n0,1\n")
        with pytest.raises(SchemaError, match="header"):
            load_emission_csv(path)

    def test_duplicate_timestamp(self, tmp_path):
        path = tmp_path / "e.csv"
        write_emission(path, [emission_row(0.0), emission_row(0.0)])
        with pytest.raises(SchemaError, match="duplicate"):
            load_emission_csv(path)

    def test_gap_starts_new_session(self, tmp_path):
        path = tmp_path / "e.csv"
        write_emission(path, [emission_row(t) for t in (0.0, 1.0, 100.0, 101.0)])
        table = load_emission_csv(path, session_gap=60.0)
        assert np.array_equal(table.session_ids, [0, 0, 1, 1])

    def test_no_data_rows(self, tmp_path):
        path = tmp_path / "e.csv"
        with open(path, "w") as fh:
            fh.write(",".join(EMISSION_HEADER) + "\n")
        with pytest.raises(SchemaError, match="no data"):
            load_emission_csv(path)


class TestWeatherJoin:
    def write_weather(self, path):
        with open(path, "w") as fh:
            fh.write("timestamp_hour,temp_c,precip_mm,conditions\n")
            fh.write("0.0,20.0,0.0,clear\n")
            fh.write("3600.0,22.0,1.5,rain\n")

    def test_floor_hour(self, tmp_path):
        self.write_weather(tmp_path / "w.csv")
        weather = load_weather_csv(tmp_path / "w.csv")
        table = numeric_table({"x": [1.0, 1.0, 1.0]},
                              timestamps=[10.0, 3599.0, 3600.0])
        joined = join_weather(table, weather)
        assert np.array_equal(joined.columns["temp_c"], [20.0, 20.0, 22.0])
        assert list(joined.columns["conditions"]) == ["clear", "clear", "rain"]
        assert joined.roles["conditions"] == ROLE_CATEGORICAL

    def test_before_first_hour(self, tmp_path):
        self.write_weather(tmp_path / "w.csv")
        weather = load_weather_csv(tmp_path / "w.csv")
        table = numeric_table({"x": [1.0]}, timestamps=[-5.0])
        with pytest.raises(SchemaError, match="precedes"):
            join_weather(table, weather)


class TestResample:
    def test_already_regular_unchanged(self):
        table = numeric_table({"x": [1.0, 2.0, 3.0]})
        out = resample_to_grid(table)
        assert np.array_equal(out.timestamps, [0.0, 1.0, 2.0])
        assert np.array_equal(out.columns["x"], [1.0, 2.0, 3.0])

    def test_gap_becomes_missing_row(self):
        table = numeric_table({"x": [1.0, 3.0]}, timestamps=[0.0, 2.0])
        out = resample_to_grid(table)
        assert out.n_rows == 3
        assert out.columns["x"][0] == 1.0
        assert np.isnan(out.columns["x"][1])
        assert out.columns["x"][2] == 3.0

    def test_row_count_arithmetic(self):
        # span 10 s at 1 s step is 11 grid rows regardless of how many
        # source rows survived
        table = numeric_table({"x": [1.0, 2.0, 3.0]},
                              timestamps=[0.0, 4.0, 10.0])
        assert resample_to_grid(table).n_rows == 11

    def test_sessions_resampled_independently(self):
        table = numeric_table({"x": [1.0, 2.0, 5.0, 6.0]},
                              timestamps=[0.0, 2.0, 100.0, 101.0],
                              session_ids=[0, 0, 1, 1])
        out = resample_to_grid(table)
        assert out.n_rows == 3 + 2
        assert np.array_equal(out.session_ids, [0, 0, 0, 1, 1])


def reference_rolling_median(x, w):
    """Independent re-statement of the imputer: window medians over observed
    values at missing positions, then backward fill, then forward fill."""
    x = list(map(float, x))
    n = len(x)
    hw = w // 2
    stage = list(x)
    for i in range(n):
        if not np.isnan(x[i]):
            continue
        vals = [v for v in x[max(0, i - hw):i + hw + 1] if not np.isnan(v)]
        if vals:
            stage[i] = float(np.median(vals))
    for i in range(n - 2, -1, -1):
        if np.isnan(stage[i]):
            stage[i] = stage[i + 1]
    for i in range(1, n):
        if np.isnan(stage[i]):
            stage[i] = stage[i - 1]
    return np.asarray(stage)


class TestRollingMedian:
    def test_simple_gap(self):
        table = numeric_table({"x": [1.0, np.nan, 3.0]})
        out = impute_rolling_median(table, w=3)
        assert out.columns["x"][1] == 2.0

    def test_leading_missing_backfilled(self):
        table = numeric_table({"x": [np.nan, 5.0, 5.0]})
        out = impute_rolling_median(table, w=3)
        assert out.columns["x"][0] == 5.0

    def test_even_window_rejected(self):
        table = numeric_table({"x": [1.0, 2.0]})
        with pytest.raises(ConfigurationError):
            impute_rolling_median(table, w=4)

    def test_all_missing_column_rejected(self):
        table = numeric_table({"x": [np.nan, np.nan]})
        with pytest.raises(ImputationError):
            impute_rolling_median(table)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(0)
        for w in (3, 5, 7):
            x = rng.standard_normal(200)
            mask = rng.random(200) < 0.2
            mask[0] = mask[-1] = True  # exercise the boundary fills
            x[mask] = np.nan
            x[50] = 1.0  # guarantee at least one observed value
            table = numeric_table({"x": x})
            out = impute_rolling_median(table, w=w)
            assert np.array_equal(out.columns["x"],
                                  reference_rolling_median(x, w))

    def test_observed_values_untouched(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(50)
        x[rng.random(50) < 0.3] = np.nan
        obs = ~np.isnan(x)
        out = impute_rolling_median(numeric_table({"x": x}), w=5)
        assert np.array_equal(out.columns["x"][obs], x[obs])

    def test_sessions_do_not_leak(self):
        # session 1 is constant 10; a missing value at its start must come
        # from its own session, not from session 0's trailing values
        x = np.array([1.0, 1.0, 1.0, np.nan, 10.0, 10.0])
        table = numeric_table({"x": x}, session_ids=[0, 0, 0, 1, 1, 1])
        out = impute_rolling_median(table, w=3)
        assert out.columns["x"][3] == 10.0


def reference_knn(X, k):
    """Brute-force nearest-rows imputer over numeric matrix X."""
    n, c = X.shape
    out = X.copy()
    for ci in range(c):
        cand = np.nonzero(~np.isnan(X[:, ci]))[0]
        col_mean = X[cand, ci].mean()
        for i in np.nonzero(np.isnan(X[:, ci]))[0]:
            dists = []
            for j in cand:
                both = ~np.isnan(X[i]) & ~np.isnan(X[j])
                both[ci] = False
                if not both.any():
                    dists.append(np.inf)
                    continue
                d2 = np.sum((X[i, both] - X[j, both]) ** 2)
                dists.append(d2 * (c - 1) / both.sum())
            order = np.argsort(dists)[:min(k, cand.size)]
            if not np.isfinite(np.asarray(dists)[order]).any():
                out[i, ci] = col_mean
            else:
                out[i, ci] = X[cand[order], ci].mean()
    return out


class TestKnn:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((30, 4))
        X[rng.random((30, 4)) < 0.25] = np.nan
        X[0] = rng.standard_normal(4)  # keep every column observable
        names = ["a", "b", "c", "d"]
        table = numeric_table({n: X[:, i] for i, n in enumerate(names)})
        for k in (1, 3, 20):
            out = impute_knn(table, k=k)
            expect = reference_knn(X, k)
            got = np.column_stack([out.columns[n] for n in names])
            assert np.allclose(got, expect, atol=1e-10)

    def test_k1_copies_nearest(self):
        table = numeric_table({"a": [0.0, 10.0, 0.1],
                               "b": [1.0, 2.0, np.nan]})
        out = impute_knn(table, k=1)
        # row 2 is nearest to row 0 in column a, so it takes row 0's b
        assert out.columns["b"][2] == 1.0

    def test_fully_missing_row_gets_column_mean(self):
        table = numeric_table({"a": [1.0, 3.0, np.nan],
                               "b": [1.0, 1.0, np.nan]})
        out = impute_knn(table, k=2)
        assert out.columns["a"][2] == 2.0
        assert out.columns["b"][2] == 1.0

    def test_invalid_k(self):
        with pytest.raises(ConfigurationError):
            impute_knn(numeric_table({"a": [1.0]}), k=0)

    def test_all_missing_column_rejected(self):
        table = numeric_table({"a": [np.nan, np.nan], "b": [1.0, 2.0]})
        with pytest.raises(ImputationError):
            impute_knn(table)


def full_table(n=40, seed=0, sessions=1):
    rng = np.random.default_rng(seed)
    cols = {"speed": rng.standard_normal(n) * 3 + 50,
            "temp_c": rng.standard_normal(n)}
    roles = {"speed": ROLE_NUMERIC, "temp_c": ROLE_NUMERIC,
             "conditions": ROLE_CATEGORICAL}
    for c in TARGET_COLUMNS:
        cols[c] = rng.standard_normal(n) + 5
        roles[c] = ROLE_TARGET
    cats = np.asarray(["clear", "rain"], dtype=object)
    cols["conditions"] = cats[rng.integers(0, 2, n)]
    sids = np.repeat(np.arange(sessions), n // sessions)
    return SeriesTable(timestamps=np.arange(n, dtype=np.float64),
                       session_ids=sids.astype(np.int64),
                       columns=cols, roles=roles)


class TestPipeline:
    def test_train_features_standardized(self):
        table = full_table()
        pipe = fit_pipeline(table)
        seq = apply_pipeline(pipe, table)
        k = len(pipe.numeric_columns)
        assert np.allclose(seq.features[:, :k].mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(seq.features[:, :k].std(axis=0), 1.0, atol=1e-10)
        assert np.allclose(seq.targets.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(seq.targets.std(axis=0), 1.0, atol=1e-10)

    def test_onehot_rows(self):
        table = full_table()
        pipe = fit_pipeline(table)
        seq = apply_pipeline(pipe, table)
        k = len(pipe.numeric_columns)
        onehot = seq.features[:, k:]
        assert onehot.shape[1] == 2
        assert np.all(onehot.sum(axis=1) == 1.0)
        i = pipe.feature_names.index("conditions=rain") - k
        assert np.array_equal(onehot[:, i] == 1.0,
                              table.columns["conditions"] == "rain")

    def test_frozen_stats_shift_linearly(self):
        table = full_table()
        pipe = fit_pipeline(table)
        shifted = table.copy()
        shifted.columns["speed"] = shifted.columns["speed"] + 1.0
        a = apply_pipeline(pipe, table)
        b = apply_pipeline(pipe, shifted)
        j = pipe.feature_names.index("speed")
        delta = 1.0 / pipe.numeric_scale["speed"]
        assert np.allclose(b.features[:, j] - a.features[:, j], delta)

    def test_unknown_category_all_zeros(self, caplog):
        table = full_table()
        pipe = fit_pipeline(table)
        other = table.copy()
        other.columns["conditions"][:] = "sandstorm"
        import logging
        with caplog.at_level(logging.WARNING):
            seq = apply_pipeline(pipe, other)
        k = len(pipe.numeric_columns)
        assert np.all(seq.features[:, k:] == 0.0)
        assert "sandstorm" in caplog.text

    def test_constant_column_rejected(self):
        table = full_table()
        table.columns["speed"][:] = 7.0
        with pytest.raises(ConfigurationError, match="speed"):
            fit_pipeline(table)

    def test_missing_values_rejected(self):
        table = full_table()
        table.columns["speed"][3] = np.nan
        with pytest.raises(UsageError):
            fit_pipeline(table)

    def test_dict_roundtrip(self):
        pipe = fit_pipeline(full_table())
        again = FittedPipeline.from_dict(pipe.to_dict())
        assert again == pipe

    def test_feature_count(self):
        pipe = fit_pipeline(full_table())
        expect = len(pipe.numeric_columns) + sum(
            len(v) for v in pipe.vocabularies.values())
        assert pipe.n_features == expect
        assert apply_pipeline(pipe, full_table()).features.shape[1] == expect

    def test_vocab_table_extends_vocabulary(self):
        table = full_table()
        extra = full_table(seed=1)
        extra.columns["conditions"][:] = "snow"
        union = full_table(n=80)
        union.columns["conditions"][40:] = "snow"
        pipe = fit_pipeline(table, vocab_table=union)
        assert "snow" in pipe.vocabularies["conditions"]


class TestSplitSessions:
    def test_five_equal_sessions(self):
        table = full_table(n=50, sessions=5)
        train, val = split_sessions(table, 0.8)
        assert sorted(set(train.session_ids)) == [0, 1, 2, 3]
        assert sorted(set(val.session_ids)) == [4]

    def test_two_sessions_half(self):
        table = full_table(n=40, sessions=2)
        train, val = split_sessions(table, 0.5)
        assert set(train.session_ids) == {0}
        assert set(val.session_ids) == {1}

    def test_partition(self):
        table = full_table(n=60, sessions=3)
        train, val = split_sessions(table, 0.8)
        assert train.n_rows + val.n_rows == table.n_rows
        assert set(train.sessions()).isdisjoint(val.sessions())

    def test_single_session_rejected(self):
        with pytest.raises(ConfigurationError):
            split_sessions(full_table(), 0.8)
