"""Wafer defect map classification and open-set novelty detection."""

from ._waferscope import (
    CLASS_NAMES,
    ConfigError,
    ContractError,
    DataError,
    GeoOrder,
    GeoParams,
    Gmm,
    Sscn,
    Wdm,
    apply_geometric,
    auc_1vs1,
    auc_1vsrest,
    average_rank,
    build_network,
    calibrate_threshold,
    gmm_fit_em,
    inverse_geometric,
    load_checkpoint,
    mann_whitney_test,
    read_jsonl,
    roc_auc,
    run_cli,
    synth_dataset,
    wilcoxon_signed_rank,
    write_jsonl,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
