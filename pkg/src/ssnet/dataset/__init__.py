from ssnet.dataset.epochs import FIVE_CLASS, THREE_CLASS, EpochSet, LabelScheme, epoch_recording, get_scheme, map_labels
from ssnet.dataset.normalize import normalize_set, zscore, zscore_array
from ssnet.dataset.sampling import PRESETS, SplitSpec, split, split_sizes, undersample
from ssnet.dataset.shards import export_shards, import_shards, read_manifest
from ssnet.dataset.synth import DEFAULT_PROFILES, SynthStageProfile, generate_synthetic, profiles_for

__all__ = [
    "DEFAULT_PROFILES",
    "FIVE_CLASS",
    "PRESETS",
    "THREE_CLASS",
    "EpochSet",
    "LabelScheme",
    "SplitSpec",
    "SynthStageProfile",
    "epoch_recording",
    "export_shards",
    "generate_synthetic",
    "get_scheme",
    "import_shards",
    "map_labels",
    "normalize_set",
    "profiles_for",
    "read_manifest",
    "split",
    "split_sizes",
    "undersample",
    "zscore",
    "zscore_array",
]
