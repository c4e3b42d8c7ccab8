from incremental_glmix.persistence.dataset_files import load_stream, parse_phase, write_stream
from incremental_glmix.persistence.store import latest_round, load_round, save_round


__all__ = [
    "latest_round",
    "load_round",
    "load_stream",
    "parse_phase",
    "save_round",
    "write_stream",
]
