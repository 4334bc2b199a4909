import numpy as np
import pytest
from numpy import isclose

from vcmoe.base.errors import (DataError, DegenerateIndex, DimensionMismatch, InsufficientData, ParseError,
                               SchemaError)
from vcmoe.base.model import ModelSpec
from vcmoe.estimation.data import Dataset, IndexMap, read_csv, rescale_index, write_csv


def _write(path, header, rows):
    path.write_text('\n'.join([header] + rows) + '\n', encoding='utf-8')
    return path


def test_rescale_index():
    u, index_map = rescale_index([0.0, 5.0, 10.0])
    assert np.array_equal(u, [0.0, 0.5, 1.0])
    assert index_map == IndexMap(0.0, 10.0)
    assert isclose(index_map.inverse(0.5), 5.0)


def test_rescale_developmental_stage():
    raw = np.array([14.0, 15.5, 18.5, 16.25])
    u, _ = rescale_index(raw)
    assert np.allclose(u, (raw - 14.0) / 4.5)


def test_degenerate_index():
    with pytest.raises(DegenerateIndex):
        rescale_index([1.0, 1.0, 1.0])


def test_dataset_validation():
    with pytest.raises(InsufficientData):
        Dataset([0.5], [[1.0]], [[1.0]], [0.0])
    with pytest.raises(DataError):
        Dataset([0.5, 1.5], [[1.0], [1.0]], [[1.0], [1.0]], [0.0, 1.0])
    with pytest.raises(DimensionMismatch):
        Dataset([0.1, 0.5], [[1.0], [1.0]], [[1.0], [1.0]], [0.0, 1.0, 2.0])


def test_dataset_check_dimensions(sim1_data):
    with pytest.raises(DimensionMismatch):
        sim1_data.check(ModelSpec(2, 3, 2))


def test_missing_response_column(tmp_path):
    path = _write(tmp_path / 'bad.csv', 'u,x0,z0', ['0.1,1,1', '0.2,1,1'])
    with pytest.raises(SchemaError) as err:
        read_csv(path)
    assert err.value.column == 'y'
    assert err.value.exit_code == 3


def test_gap_in_covariate_columns(tmp_path):
    path = _write(tmp_path / 'bad.csv', 'u,y,x0,x2,z0', ['0.1,1,1,1,1', '0.2,1,1,1,1'])
    with pytest.raises(SchemaError) as err:
        read_csv(path)
    assert err.value.column == 'x1'


def test_malformed_value_reports_row(tmp_path):
    rows = [f"{i / 20:.2f},{i}.5,1,1" for i in range(20)]
    rows[16] = '0.80,abc,1,1'
    path = _write(tmp_path / 'bad.csv', 'u,y,x0,z0', rows)
    with pytest.raises(ParseError) as err:
        read_csv(path)
    assert err.value.row == 17
    assert err.value.column == 'y'


def test_csv_round_trip_is_exact(tmp_path, sim1_data):
    path = tmp_path / 'sim1.csv'
    write_csv(sim1_data, path)
    back = read_csv(path)
    for name in ('u', 'X', 'Z', 'y', 'labels'):
        assert np.array_equal(getattr(back, name), getattr(sim1_data, name)), f"{name} changed on round trip"
    assert back.digest() == sim1_data.digest()


def test_read_csv_rescales_raw_index(tmp_path):
    path = _write(tmp_path / 'stage.csv', 'u,y,x0,z0,notes',
                  ['14,1.0,1,1,a', '15.5,2.0,1,1,b', '18.5,3.0,1,1,c'])
    data = read_csv(path)
    assert np.allclose(data.u, [0.0, 1.5 / 4.5, 1.0])
    assert data.index_map == IndexMap(14.0, 18.5)


def test_drop_and_with_response(sim1_data):
    dropped = sim1_data.drop(0)
    assert dropped.n == sim1_data.n - 1
    assert np.array_equal(dropped.y, sim1_data.y[1:])
    replaced = sim1_data.with_response(np.zeros(sim1_data.n))
    assert np.array_equal(replaced.u, sim1_data.u)
    assert replaced.labels is None
