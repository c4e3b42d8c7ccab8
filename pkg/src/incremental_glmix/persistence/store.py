import hashlib
import json
import logging
import re
import shutil
from dataclasses import dataclass
from pathlib import Path

from pydantic import ValidationError

from incremental_glmix.constants import STORE_FORMAT_VERSION
from incremental_glmix.core.models import GlmixModel
from incremental_glmix.errors import (
    DataValidationError,
    PreconditionError,
    StoreIntegrityError,
    StoreVersionError,
)
from incremental_glmix.persistence.records import ComponentRecord, RoundMeta
from incremental_glmix.schemas import ScheduleConfig
from incremental_glmix.trainer import GlmixPriors


logger = logging.getLogger(__name__)

META_FILE = "meta"
FIXED_FILE = "fixed.model"
ROUND_DIR_PATTERN = re.compile(r"round_(\d+)")


def random_effects_file(entity_type: str) -> str:
    return f"random_{entity_type}.models"


def round_dir(store: Path, t: int) -> Path:
    return Path(store) / f"round_{t:05d}"


def list_rounds(store: Path) -> list[int]:
    """Phase indices of the complete rounds of a store, increasing"""
    store = Path(store)
    if not store.is_dir():
        return []
    rounds = []
    for path in store.iterdir():
        match = ROUND_DIR_PATTERN.fullmatch(path.name)
        if match and path.is_dir():
            rounds.append(int(match.group(1)))
    return sorted(rounds)


def latest_round(store: Path, before: int | None = None) -> Path:
    """Directory of the newest round, optionally the newest one before a phase

    Raises
    ------
    PreconditionError
        If the store holds no such round
    """
    rounds = [t for t in list_rounds(store) if before is None or t < before]
    if not rounds:
        suffix = f" before phase {before}" if before is not None else ""
        raise PreconditionError(f"no stored round in {store}{suffix}")
    return round_dir(store, rounds[-1])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_records(path: Path, records: list[ComponentRecord]):
    with path.open("w", encoding="utf-8") as file:
        for record in records:
            file.write(record.model_dump_json() + "\n")


def save_round(
    store: Path,
    t: int,
    counter: int,
    model: GlmixModel,
    priors: GlmixPriors,
    config: ScheduleConfig,
) -> Path:
    """Persist a model and its priors as the round of phase ``t``

    The round is written to a temporary directory first and renamed into place, so a
    store never exposes a half-written round.

    Parameters
    ----------
    store : Path
        Store root, created if missing
    t : int
        Phase index of the round
    counter : int
        Scheduler counter after the round
    model : GlmixModel
        The trained model
    priors : GlmixPriors
        Priors for the next round, one per component of the model
    config : ScheduleConfig
        Settings recorded in the meta file

    Returns
    -------
    Path
        The round directory

    Raises
    ------
    DataValidationError
        If the priors do not cover exactly the components of the model
    """
    target = round_dir(store, t)
    partial = target.with_name(target.name + ".partial")
    if partial.exists():
        shutil.rmtree(partial)
    partial.mkdir(parents=True)

    files = {FIXED_FILE: [ComponentRecord.from_component(model.fixed, priors.fixed)]}
    for entity_type in model.entity_types:
        models = model.random_effects[entity_type]
        entity_priors = priors.random_effects.get(entity_type, {})
        if set(models) != set(entity_priors):
            raise DataValidationError(f"{entity_type} models and priors cover different ids")
        files[random_effects_file(entity_type)] = [
            ComponentRecord.from_component(models[i], entity_priors[i], entity_id=i) for i in models
        ]

    for name, records in files.items():
        _write_records(partial / name, records)

    meta = RoundMeta(
        t=t,
        counter=counter,
        lambda_f=config.lambda_f,
        hessian_mode=config.hessian_mode,
        window=config.window,
        dim=model.dim,
        entity_types=model.entity_types,
        record_counts={name: len(records) for name, records in files.items()},
        checksums={name: _sha256(partial / name) for name in files},
    )
    (partial / META_FILE).write_text(meta.model_dump_json(indent=2))

    if target.exists():
        shutil.rmtree(target)
    partial.rename(target)
    logger.info("Saved round %d to %s", t, target)
    return target


@dataclass(frozen=True, eq=False)
class StoredRound:
    """A round read back from the store"""

    meta: RoundMeta
    model: GlmixModel
    priors: GlmixPriors


def load_meta(path: Path) -> RoundMeta:
    """Read and version-check the meta file of a round

    Raises
    ------
    StoreVersionError
        If the round was written by another format version
    StoreIntegrityError
        If the meta file is missing or corrupt
    """
    meta_path = Path(path) / META_FILE
    try:
        text = meta_path.read_text(encoding="utf-8")
        raw = json.loads(text)
    except (OSError, json.JSONDecodeError) as error:
        raise StoreIntegrityError(f"unreadable meta file {meta_path}: {error}") from error

    version = raw.get("format_version") if isinstance(raw, dict) else None
    if version != STORE_FORMAT_VERSION:
        raise StoreVersionError(
            f"{meta_path} has format version {version}, expected {STORE_FORMAT_VERSION}"
        )
    try:
        return RoundMeta.model_validate_json(text)
    except ValidationError as error:
        raise StoreIntegrityError(f"corrupt meta file {meta_path}: {error}") from error


def _read_records(path: Path, expected: int, checksum: str) -> list[ComponentRecord]:
    if not path.is_file():
        raise StoreIntegrityError(f"missing records file {path}")
    if _sha256(path) != checksum:
        raise StoreIntegrityError(f"checksum mismatch in {path}, the file is truncated or corrupt")

    records = []
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        try:
            records.append(ComponentRecord.model_validate_json(line))
        except ValidationError as error:
            raise StoreIntegrityError(f"{path}:{line_number}: corrupt record") from error
    if len(records) != expected:
        raise StoreIntegrityError(f"{path} holds {len(records)} records, expected {expected}")
    return records


def load_round(path: Path) -> StoredRound:
    """Read a round back, bit-exact

    Nothing is returned unless the version, the checksums and every record are valid.

    Raises
    ------
    StoreVersionError
        If the round was written by another format version
    StoreIntegrityError
        If a file is missing, truncated or corrupt
    """
    path = Path(path)
    meta = load_meta(path)

    def read(name: str) -> list[ComponentRecord]:
        if name not in meta.checksums or name not in meta.record_counts:
            raise StoreIntegrityError(f"{name} is not listed in the meta file of {path}")
        return _read_records(path / name, meta.record_counts[name], meta.checksums[name])

    fixed_records = read(FIXED_FILE)
    if len(fixed_records) != 1:
        raise StoreIntegrityError(f"{path / FIXED_FILE} must hold exactly one record")
    fixed_model, fixed_prior = fixed_records[0].to_component()

    random_effects, random_priors = {}, {}
    for entity_type in meta.entity_types:
        models, priors = {}, {}
        for record in read(random_effects_file(entity_type)):
            models[record.entity_id], priors[record.entity_id] = record.to_component()
        random_effects[entity_type], random_priors[entity_type] = models, priors

    logger.info("Loaded round %d from %s", meta.t, path)
    return StoredRound(
        meta=meta,
        model=GlmixModel(fixed_model, random_effects),
        priors=GlmixPriors(fixed_prior, random_priors),
    )
