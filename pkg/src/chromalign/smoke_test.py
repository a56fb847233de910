from __future__ import annotations

from .graph import build_pipeline_graph
from .schemas import RunConfig


def smoke_config() -> RunConfig:
    """A run small enough to finish in seconds."""
    return RunConfig.model_validate(
        {
            "synth": {
                "n_samples": 4,
                "n_compounds": 3,
                "rt_window": [5.0, 8.0],
                "mz_lo": 98,
                "mz_hi": 108,
                "template_channels": [3, 5],
                "noise_sd": 0.0,
                "baseline": [],
            },
            "features": {"segment_steps": 120, "segment_half_width": 0.3},
            "variant": {
                "peak_encoder": "none",
                "dense_units": 8,
                "mass_encoding_dim": 4,
                "chrom_encoding_dim": 4,
            },
            "train": {"epochs": 2, "batch_size": 16},
        }
    )


def main() -> None:
    result = build_pipeline_graph().invoke({"run_config": smoke_config()})
    metrics = result["metrics"]
    print(f"Peaks: {len(result['peaks'])}")
    print(f"Training pairs: {len(result['pairs'])}")
    print(f"Groups: {result['alignment'].n_groups}")
    print(f"Group TP rate {metrics['group']['tp_rate']:.3f}, FDR {metrics['group']['fdr']:.3f}")
    if "auc" in metrics:
        print(f"Held-out pairwise AUC {metrics['auc']:.3f}")


if __name__ == "__main__":
    main()
