"""Pipeline configuration: TOML file, flat defaults, strict section keys."""

from __future__ import annotations

import dataclasses
from typing import Optional, Tuple, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclasses.dataclass
class EncoderSection:
    vocab_size: int = 16384
    d_emb: int = 256
    d_hidden: int = 512
    d: int = 300
    max_context: int = 64
    temperature: float = 0.05


@dataclasses.dataclass
class TrainSection:
    batch_size: int = 256
    steps: int = 2000
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    hard_negative_weight: float = 1.0
    warmup_fraction: float = 0.1
    log_every: int = 200


@dataclasses.dataclass
class PairsSection:
    pair_cap: int = 100_000
    include_descriptions: bool = True
    test_fraction: float = 0.0


@dataclasses.dataclass
class MiningSection:
    negatives_per_query: int = 10
    cap_ratio: int = 10
    resample_positives: bool = True


@dataclasses.dataclass
class IndexSection:
    mode: str = "both"  # both | mentions | descriptions-only


@dataclasses.dataclass
class AnnSection:
    num_leaves: Union[int, Tuple[int, int]] = 64
    block_dim: int = 2
    kmeans_iters: int = 10
    anisotropic_eta: float = 1.0
    leaves_to_probe: int = 8
    rescore_count: int = 200
    upper_probe: Optional[int] = None


@dataclasses.dataclass
class InferenceSection:
    mode: str = "top_per_entity"
    k: int = 5
    top_n: int = 100
    weighted: bool = True


@dataclasses.dataclass
class EvalSection:
    cuts: Tuple[int, ...] = (1, 10, 100)


@dataclasses.dataclass
class SynthSection:
    entities: int = 6
    clusters_per_entity: int = 2
    mentions_per_cluster: int = 20
    queries_per_cluster: int = 5
    zero_shot_entities: int = 0
    vocab: int = 400
    noise: float = 0.05


@dataclasses.dataclass
class PipelineConfig:
    seed: int = 0
    workdir: str = "workdir"
    encoder: EncoderSection = dataclasses.field(default_factory=EncoderSection)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)
    pairs: PairsSection = dataclasses.field(default_factory=PairsSection)
    mining: MiningSection = dataclasses.field(default_factory=MiningSection)
    index: IndexSection = dataclasses.field(default_factory=IndexSection)
    ann: AnnSection = dataclasses.field(default_factory=AnnSection)
    inference: InferenceSection = dataclasses.field(default_factory=InferenceSection)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)
    synth: SynthSection = dataclasses.field(default_factory=SynthSection)


_SECTIONS = {
    "encoder": EncoderSection,
    "train": TrainSection,
    "pairs": PairsSection,
    "mining": MiningSection,
    "index": IndexSection,
    "ann": AnnSection,
    "inference": InferenceSection,
    "eval": EvalSection,
    "synth": SynthSection,
}
_LIST_FIELDS = {"cuts", "num_leaves"}


def _build_section(cls, data: dict, name: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ValueError(f"unknown config keys in [{name}]: {sorted(unknown)}")
    kwargs = {k: tuple(v) if k in _LIST_FIELDS and isinstance(v, list) else v
              for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    top_known = {"seed", "workdir"} | set(_SECTIONS)
    unknown = set(data) - top_known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = PipelineConfig()
    if "seed" in data:
        cfg.seed = int(data["seed"])
    if "workdir" in data:
        cfg.workdir = str(data["workdir"])
    for name, cls in _SECTIONS.items():
        if name in data:
            setattr(cfg, name, _build_section(cls, data[name], name))
    return cfg


def load_config(path: Optional[str]) -> PipelineConfig:
    """Config file values; all defaults when no path is given."""
    if path is None:
        return PipelineConfig()
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))
