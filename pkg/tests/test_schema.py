import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from popkit.errors import SchemaError, StateError
from popkit.schema import StateSchema, StateVector, check_state


@pytest.fixture
def schema():
    return StateSchema.from_dict({"region": ["a", "b"], "age": ["0", "1", "2"]})


def test_row_major_order(schema):
    assert schema.size == 6
    assert schema.cell_names()[:3] == ["region=a|age=0", "region=a|age=1", "region=a|age=2"]
    assert schema.cell_index({"region": "b", "age": "0"}) == 3


def test_select_and_shift(schema):
    assert schema.select({"age": "1"}) == [1, 4]
    assert schema.select({"age": ["0", "2"], "region": "b"}) == [3, 5]
    assert schema.select() == list(range(6))
    assert schema.shift(1, "region", "b") == 4
    assert schema.same_labels(4, ["region"]) == [3, 4, 5]


@pytest.mark.parametrize("bad", [{}, {"age": []}, {"age": ["0", "0"]}, {"age": ["0", ""]}])
def test_invalid_schemas(bad):
    with pytest.raises(SchemaError):
        StateSchema.from_dict(bad)


def test_unknown_labels(schema):
    with pytest.raises(SchemaError):
        schema.select({"sex": "f"})
    with pytest.raises(SchemaError):
        schema.cell_index({"region": "c", "age": "0"})
    with pytest.raises(SchemaError):
        schema.cell_labels(6)


def test_state_vector_checks(schema):
    v = StateVector(schema, [1, 2, 3, 4, 5, 6])
    assert v.values.dtype == np.int64
    assert v.as_dict()["region=b|age=2"] == 6
    with pytest.raises(StateError):
        StateVector(schema, [1.5, 0, 0, 0, 0, 0])
    with pytest.raises(StateError):
        StateVector(schema, [-1, 0, 0, 0, 0, 0])
    with pytest.raises(SchemaError):
        StateVector(schema, [1, 2])
    with pytest.raises(StateError):
        check_state(np.array([np.nan, 1.0]), 2, integer=False)
    StateVector(schema, [0.5] * 6, integer=False)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.data())
def test_index_labels_roundtrip(sizes, data):
    schema = StateSchema.from_dict({f"ax{i}": [str(j) for j in range(n)] for i, n in enumerate(sizes)})
    cell = data.draw(st.integers(0, schema.size - 1))
    assert schema.cell_index(schema.cell_labels(cell)) == cell
    assert StateSchema.from_dict(schema.to_dict()) == schema
