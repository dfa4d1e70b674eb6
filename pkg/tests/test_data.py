"""Dataset construction, CSV persistence, and splitting."""

import numpy as np
import pytest

from modeiv.data import Dataset, SplitSpec, load_csv, save_csv, schema_from_header, split
from modeiv.errors import ConfigError, ParseError, SchemaError


def random_dataset(rng, n=None, d=None, k=None):
    n = n if n is not None else int(rng.integers(1, 40))
    d = d if d is not None else int(rng.integers(0, 4))
    k = k if k is not None else int(rng.integers(1, 4))
    return Dataset(
        y=rng.standard_normal(n),
        t=rng.standard_normal(n),
        x=rng.standard_normal((n, d)),
        z=rng.standard_normal((n, k)),
    )


class TestDataset:
    def test_shapes_and_names(self):
        ds = Dataset(y=[1.0, 2.0], t=[0.5, 0.1], x=[[1.0], [2.0]], z=[[0.0], [1.0]])
        assert (ds.n, ds.d, ds.k) == (2, 1, 1)
        assert ds.column_names == ("y", "t", "x_1", "z_1")

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            Dataset(y=[], t=[], x=np.empty((0, 1)), z=np.empty((0, 1)))

    def test_rejects_missing_instruments(self):
        with pytest.raises(ConfigError):
            Dataset(y=[1.0], t=[1.0], x=np.empty((1, 0)), z=np.empty((1, 0)))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ConfigError):
            Dataset(y=[1.0, 2.0], t=[1.0], x=np.empty((2, 0)), z=[[1.0], [2.0]])

    def test_rejects_nonfinite_anywhere(self):
        # property: a NaN or inf injected at any position fails construction
        rng = np.random.default_rng(7)
        for _ in range(50):
            n, d, k = int(rng.integers(1, 10)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
            cols = {
                "y": rng.standard_normal(n),
                "t": rng.standard_normal(n),
                "x": rng.standard_normal((n, d)),
                "z": rng.standard_normal((n, k)),
            }
            target = rng.choice(["y", "t", "x", "z"])
            bad = rng.choice([np.nan, np.inf, -np.inf])
            if target in ("y", "t"):
                cols[target][rng.integers(0, n)] = bad
            else:
                cols[target][rng.integers(0, n), rng.integers(0, cols[target].shape[1])] = bad
            with pytest.raises(ConfigError):
                Dataset(**cols)

    def test_immutable_arrays(self):
        ds = Dataset(y=[1.0], t=[1.0], x=[[1.0]], z=[[1.0]])
        with pytest.raises(ValueError):
            ds.y[0] = 2.0


class TestCsv:
    def test_minimal_file_layout(self, tmp_path):
        ds = Dataset(y=[2.0], t=[1.0], x=np.empty((1, 0)), z=[[0.0]])
        path = tmp_path / "mini.csv"
        save_csv(ds, path)
        assert path.read_text() == "y,t,z_1\n2,1,0\n"

    def test_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(3)
        for i in range(20):
            ds = random_dataset(rng)
            path = tmp_path / f"rt_{i}.csv"
            save_csv(ds, path)
            loaded = load_csv(path, schema_from_header(open(path).readline().strip().split(",")))
            for a, b in ((ds.y, loaded.y), (ds.t, loaded.t), (ds.x, loaded.x), (ds.z, loaded.z)):
                assert np.max(np.abs(a - b), initial=0.0) < 1e-12

    def test_schema_missing_y(self, tmp_path):
        path = tmp_path / "noy.csv"
        path.write_text("a,t,z_1\n1,2,3\n")
        with pytest.raises(SchemaError):
            load_csv(path, {"a": "ignore", "t": "t", "z_1": "z"})

    def test_schema_unassigned_column(self, tmp_path):
        path = tmp_path / "extra.csv"
        path.write_text("y,t,z_1,mystery\n1,2,3,4\n")
        with pytest.raises(SchemaError):
            load_csv(path, {"y": "y", "t": "t", "z_1": "z"})

    def test_parse_error_names_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,t,z_1\n1,oops,3\n")
        with pytest.raises(ParseError, match=r"row 1.*'t'"):
            load_csv(path, {"y": "y", "t": "t", "z_1": "z"})

    def test_nonfinite_cell_rejected(self, tmp_path):
        path = tmp_path / "inf.csv"
        path.write_text("y,t,z_1\n1,inf,3\n")
        with pytest.raises(ParseError):
            load_csv(path, {"y": "y", "t": "t", "z_1": "z"})


class TestSplit:
    def test_sizes_90_10(self):
        rng = np.random.default_rng(0)
        ds = random_dataset(rng, n=100, d=1, k=1)
        train, val, test = split(ds, SplitSpec(0.9, 0.1, seed=5))
        assert (train.n, val.n, test) == (90, 10, None)

    def test_same_seed_same_partition(self):
        rng = np.random.default_rng(1)
        ds = random_dataset(rng, n=57, d=2, k=2)
        a = split(ds, SplitSpec(0.6, 0.2, seed=11))
        b = split(ds, SplitSpec(0.6, 0.2, seed=11))
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.y, pb.y)

    def test_partition_property(self):
        # disjoint + exhaustive over random configs, keyed by unique y values
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(10, 200))
            f1 = float(rng.uniform(0.2, 0.7))
            f2 = float(rng.uniform(0.1, min(0.99 - f1, 0.5)))
            ds = Dataset(
                y=np.arange(n, dtype=float),
                t=rng.standard_normal(n),
                x=rng.standard_normal((n, 1)),
                z=rng.standard_normal((n, 1)),
            )
            parts = split(ds, SplitSpec(f1, f2, seed=int(rng.integers(0, 2**32))))
            seen = np.concatenate([p.y for p in parts if p is not None])
            assert len(seen) == n
            assert set(seen.astype(int)) == set(range(n))

    def test_bad_fractions(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.0, 0.5, seed=0)
        with pytest.raises(ConfigError):
            SplitSpec(0.7, 0.5, seed=0)

    def test_too_small_for_fraction(self):
        rng = np.random.default_rng(3)
        ds = random_dataset(rng, n=5, d=1, k=1)
        with pytest.raises(ConfigError):
            split(ds, SplitSpec(0.9, 0.05, seed=0))
