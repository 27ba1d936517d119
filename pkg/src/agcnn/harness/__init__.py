from agcnn.harness.manifest import (DEFAULT_RATIOS, DatasetManifest, ManifestRecord, load_dataset,
                                    load_manifest, split, split_sizes)
from agcnn.harness.synth import SyntheticConfig, load_geometry, synth_generate

__all__ = [
    "DEFAULT_RATIOS", "DatasetManifest", "ManifestRecord", "load_dataset", "load_manifest",
    "split", "split_sizes", "SyntheticConfig", "load_geometry", "synth_generate",
]
