import pytest

from incremental_glmix.core.models import LabeledExample, PhaseDataset
from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.errors import DataValidationError, DatasetParseError
from incremental_glmix.persistence.dataset_files import (
    load_stream,
    parse_phase,
    phase_path,
    serialize_phase,
    write_phase,
    write_stream,
)

from tests.conftest import random_phase


def write(tmp_path, text, name="phase_0.tsv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_one_example(tmp_path):
    path = write(tmp_path, "#dim 4\n1\tmember:m1\t0:1.5 3:2\n")

    data = parse_phase(path)

    (example,) = data.examples
    assert data.feature_dim == 4
    assert data.phase_index == 0
    assert example.label == 1
    assert dict(example.entity_ids) == {"member": "m1"}
    assert example.features == SparseVector.from_pairs([(0, 1.5), (3, 2.0)], 4)
    assert example.offset == 0.0


def test_phase_index_comes_from_the_file_name(tmp_path):
    path = write(tmp_path, "#dim 2\n0\t\t\n", name="phase_7.tsv")

    data = parse_phase(path)

    assert data.phase_index == 7
    assert data.examples[0].features.nnz == 0
    assert dict(data.examples[0].entity_ids) == {}


def test_features_are_canonicalized(tmp_path):
    path = write(tmp_path, "#dim 5\n0\tmember:a,job:j\t4:1 1:2 2:0\n")

    (example,) = parse_phase(path).examples

    assert example.features.indices.tolist() == [1, 4]
    assert dict(example.entity_ids) == {"member": "a", "job": "j"}


def test_blank_and_comment_lines_are_skipped(tmp_path):
    path = write(tmp_path, "#dim 3\n\n# a comment\n1\tmember:a\t0:1\n")

    assert len(parse_phase(path)) == 1


@pytest.mark.parametrize(
    "line, message",
    [
        ("1\tmember:m1\t4:1.0", "out of range"),
        ("2\tmember:m1\t0:1.0", "label"),
        ("1\tmember:m1\t0:1.0 0:2.0", "duplicate"),
        ("1\tmember:m1\t0=1.0", "malformed feature"),
        ("1\tmember\t0:1.0", "malformed entity"),
        ("1\tmember:m1", "3 tab-separated fields"),
        ("1\tmember:m1,member:m2\t0:1.0", "repeated"),
        ("1\tmember:m1\t0:nan", "non-finite"),
        ("1\tmember:m1\t3:inf", "non-finite"),
    ],
)
def test_bad_lines_name_their_location(tmp_path, line, message):
    path = write(tmp_path, f"#dim 4\n0\tmember:m0\t1:1\n{line}\n")

    with pytest.raises(DatasetParseError, match=message) as error:
        parse_phase(path)

    assert error.value.line_number == 3
    assert error.value.path == path


def test_a_header_is_required(tmp_path):
    with pytest.raises(DatasetParseError, match="header"):
        parse_phase(write(tmp_path, "1\tmember:m1\t0:1\n"))
    with pytest.raises(DatasetParseError, match="header"):
        parse_phase(write(tmp_path, ""))


def test_random_datasets_survive_a_round_trip(rng, tmp_path):
    for t in range(100):
        original = random_phase(rng, phase_index=t, n_examples=int(rng.integers(0, 20)))

        parsed = parse_phase(write_phase(original, tmp_path))

        assert parsed.phase_index == original.phase_index
        assert parsed.feature_dim == original.feature_dim
        assert parsed.examples == original.examples


def test_serialized_text_is_stable(phase):
    assert serialize_phase(phase).splitlines()[0] == "#dim 6"
    assert len(serialize_phase(phase).splitlines()) == len(phase) + 1


def test_unwritable_entity_names_are_refused(tmp_path):
    example = LabeledExample(SparseVector.zeros(2), 1, {"member": "has space"})

    with pytest.raises(DataValidationError):
        write_phase(PhaseDataset(0, (example,), 2), tmp_path)


def test_streams_load_in_phase_order(make_phase, tmp_path):
    stream = [make_phase(phase_index=t, n_examples=5) for t in range(12)]
    write_stream(stream, tmp_path)

    loaded = load_stream(tmp_path)

    assert [d.phase_index for d in loaded] == list(range(12))
    assert loaded[10].examples == stream[10].examples


def test_streams_must_be_contiguous(make_phase, tmp_path):
    with pytest.raises(DataValidationError):
        load_stream(tmp_path)
    write_phase(make_phase(phase_index=0, n_examples=3), tmp_path)
    write_phase(make_phase(phase_index=2, n_examples=3), tmp_path)
    with pytest.raises(DataValidationError, match="contiguous"):
        load_stream(tmp_path)
    assert phase_path(tmp_path, 2).is_file()
