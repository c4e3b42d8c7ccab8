"""Line-oriented phase files

A phase file starts with a ``#dim <p>`` header followed by one example per line::

    label<TAB>entity_type:entity_id[,entity_type:entity_id...]<TAB>idx:val[ idx:val...]

Either of the last two fields may be empty. Offsets are training-time residuals and are
not stored, parsed examples carry offset 0.
"""

import logging
import math
import re
from collections.abc import Iterable
from pathlib import Path

from incremental_glmix.core.models import LabeledExample, PhaseDataset
from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.errors import DataValidationError, DatasetParseError


logger = logging.getLogger(__name__)

HEADER_PATTERN = re.compile(r"#dim\s+(\d+)")
PHASE_FILE_PATTERN = re.compile(r"phase_(\d+)\.tsv")
FORBIDDEN_ID_CHARACTERS = re.compile(r"[\t\n\r ,:]")


def phase_path(directory: Path, t: int) -> Path:
    return Path(directory) / f"phase_{t}.tsv"


def _parse_entities(field: str, path: Path, line_number: int) -> dict[str, str]:
    entity_ids = {}
    if not field:
        return entity_ids
    for token in field.split(","):
        entity_type, sep, entity_id = token.partition(":")
        if not sep or not entity_type or not entity_id:
            raise DatasetParseError(path, line_number, f"malformed entity token {token!r}")
        if entity_type in entity_ids:
            raise DatasetParseError(path, line_number, f"entity type {entity_type!r} repeated")
        entity_ids[entity_type] = entity_id
    return entity_ids


def _parse_features(field: str, dim: int, path: Path, line_number: int) -> SparseVector:
    pairs = []
    for token in field.split():
        index, sep, value = token.partition(":")
        try:
            if not sep:
                raise ValueError
            pair = int(index), float(value)
        except ValueError:
            raise DatasetParseError(path, line_number, f"malformed feature {token!r}") from None
        if not math.isfinite(pair[1]):
            raise DatasetParseError(path, line_number, f"non-finite feature value {token!r}")
        if not 0 <= pair[0] < dim:
            raise DatasetParseError(
                path, line_number, f"index {pair[0]} out of range for #dim {dim}"
            )
        pairs.append(pair)

    indices = [i for i, _ in pairs]
    if len(set(indices)) != len(indices):
        raise DatasetParseError(path, line_number, "duplicate feature index")
    try:
        return SparseVector.from_pairs(pairs, dim)
    except DataValidationError as error:
        raise DatasetParseError(path, line_number, str(error)) from error


def _parse_line(line: str, dim: int, path: Path, line_number: int) -> LabeledExample:
    fields = line.split("\t")
    if len(fields) != 3:
        raise DatasetParseError(
            path, line_number, f"expected 3 tab-separated fields, got {len(fields)}"
        )
    label, entities, features = fields
    if label not in ("0", "1"):
        raise DatasetParseError(path, line_number, f"label must be 0 or 1, got {label!r}")

    return LabeledExample(
        features=_parse_features(features, dim, path, line_number),
        label=int(label),
        entity_ids=_parse_entities(entities, path, line_number),
    )


def parse_phase(path: Path, phase_index: int | None = None) -> PhaseDataset:
    """Read one phase file

    Parameters
    ----------
    path : Path
        The phase file
    phase_index : int | None
        Index of the phase, taken from a ``phase_<t>.tsv`` file name when omitted

    Returns
    -------
    PhaseDataset
        The examples in file order, features in canonical form

    Raises
    ------
    DatasetParseError
        On a missing header, a bad label, an index at or above p, a duplicate index or
        any malformed token, naming the line
    """
    path = Path(path)
    if phase_index is None:
        match = PHASE_FILE_PATTERN.fullmatch(path.name)
        phase_index = int(match.group(1)) if match else 0

    dim = None
    examples = []
    with path.open(encoding="utf-8") as file:
        for line_number, raw in enumerate(file, 1):
            line = raw.rstrip("\r\n")
            if dim is None:
                match = HEADER_PATTERN.fullmatch(line.strip())
                if match is None:
                    raise DatasetParseError(path, line_number, "expected a '#dim <p>' header")
                dim = int(match.group(1))
                continue
            if not line.strip() or line.startswith("#"):
                continue
            examples.append(_parse_line(line, dim, path, line_number))

    if dim is None:
        raise DatasetParseError(path, 1, "empty file, expected a '#dim <p>' header")
    logger.debug("Parsed %d examples from %s", len(examples), path)
    return PhaseDataset(phase_index=phase_index, examples=tuple(examples), feature_dim=dim)


def _check_id(name: str):
    if not name or FORBIDDEN_ID_CHARACTERS.search(name):
        raise DataValidationError(f"entity name {name!r} cannot be written to a phase file")


def serialize_example(example: LabeledExample) -> str:
    for entity_type, entity_id in example.entity_ids.items():
        _check_id(entity_type)
        _check_id(entity_id)
    entities = ",".join(f"{k}:{v}" for k, v in sorted(example.entity_ids.items()))
    features = " ".join(f"{i}:{v!r}" for i, v in example.features.items())
    return f"{example.label}\t{entities}\t{features}"


def serialize_phase(dataset: PhaseDataset) -> str:
    """Text of a phase file; floats are written with repr so parsing restores them exactly"""
    lines = [f"#dim {dataset.feature_dim}"]
    lines.extend(serialize_example(e) for e in dataset.examples)
    return "\n".join(lines) + "\n"


def write_phase(dataset: PhaseDataset, directory: Path) -> Path:
    path = phase_path(directory, dataset.phase_index)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_phase(dataset), encoding="utf-8")
    return path


def write_stream(stream: Iterable[PhaseDataset], directory: Path) -> list[Path]:
    return [write_phase(dataset, directory) for dataset in stream]


def load_stream(directory: Path) -> list[PhaseDataset]:
    """Every ``phase_<t>.tsv`` of a directory, in phase order

    Raises
    ------
    DataValidationError
        If the directory holds no phase file or the phases are not contiguous from 0
    """
    directory = Path(directory)
    indexed = []
    for path in directory.glob("phase_*.tsv"):
        match = PHASE_FILE_PATTERN.fullmatch(path.name)
        if match:
            indexed.append((int(match.group(1)), path))
    indexed.sort()
    if not indexed:
        raise DataValidationError(f"no phase files in {directory}")
    if [t for t, _ in indexed] != list(range(len(indexed))):
        raise DataValidationError(f"phases in {directory} are not contiguous from 0")

    stream = [parse_phase(path, t) for t, path in indexed]
    logger.info("Loaded %d phases from %s", len(stream), directory)
    return stream
