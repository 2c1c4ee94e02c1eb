"""Pipeline configuration: typed sections, key=value file format, digests.

The config file is flat text, one `section.key=value` per line; `#` starts a
comment. Unknown keys are rejected. Every checkpoint stores the sha256 digest
of its owning section so a checkpoint can never be silently loaded under a
different architecture.
"""

import hashlib
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass
class CoreConfig:
    seed: int = 0
    device: str = "cpu"
    fps: int = 20


@dataclass
class ToyDataConfig:
    n_pairs: int = 8
    families: str = "wave,walk,squat,turn,still"
    min_length: int = 32
    max_length: int = 48
    noise_level: float = 0.01
    amplitude: float = 0.45


@dataclass
class AnnotationConfig:
    keyframe_threshold: float = 0.9
    annotator: str = "stub"
    remote_endpoint: str = ""
    embed_dim: int = 64


@dataclass
class AlignmentConfig:
    latent_dim: int = 32
    token_dim: int = 32
    depth: int = 2
    heads: int = 4
    vocab_size: int = 512
    max_tokens: int = 16
    epochs: int = 800
    lr: float = 1e-3
    batch_size: int = 0          # 0 = full batch
    lambda_nce: float = 0.1
    lambda_kl: float = 1e-5
    lambda_e: float = 1e-5
    lambda_r: float = 1.0
    temperature: float = 0.1
    negative_filter_threshold: float = 0.8


@dataclass
class RqvaeConfig:
    num_layers: int = 3          # residual codebook layers Q (full scale: 6)
    codebook_size: int = 64      # codes per layer K (full scale: 512)
    code_dim: int = 32
    downsample: int = 4
    width: int = 96
    steps: int = 4500
    lr: float = 2e-3
    commitment: float = 0.25
    warmup_fraction: float = 0.3
    depth_margin: float = 0.05   # relative per-depth improvement demanded
    order_weight: float = 10.0
    order_repair_rounds: int = 150
    residual_gate: float = 0.1


@dataclass
class GeneratorConfig:
    d_model: int = 64
    depth: int = 3
    heads: int = 4
    steps: int = 2200
    residual_steps: int = 700
    lr: float = 2e-3
    cond_dropout: float = 0.1
    full_mask_prob: float = 0.5
    guidance_scale: float = 4.0
    iters_stage1: int = 10
    iters_stage2: int = 4
    iters_stage3: int = 4
    remask_rho: float = 0.4
    sample_temperature: float = 0.35


@dataclass
class ControlConfig:
    lambda_control: float = 1.0
    steps: int = 600
    lr: float = 1e-3
    inject_layers: str = "all"   # or comma-separated block indices


@dataclass
class EvalConfig:
    diversity_pairs: int = 30    # full scale: 300
    mmodality_repeats: int = 10
    retrieval_threshold: float = 0.8
    control_threshold: float = 0.5
    r_precision_pool: int = 32
    dissimilar_subset: int = 100
    small_batch: int = 32


_SECTIONS = {
    "core": CoreConfig,
    "toy": ToyDataConfig,
    "annotation": AnnotationConfig,
    "alignment": AlignmentConfig,
    "rqvae": RqvaeConfig,
    "generator": GeneratorConfig,
    "control": ControlConfig,
    "eval": EvalConfig,
}


@dataclass
class PipelineConfig:
    core: CoreConfig = field(default_factory=CoreConfig)
    toy: ToyDataConfig = field(default_factory=ToyDataConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    rqvae: RqvaeConfig = field(default_factory=RqvaeConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def set_key(self, dotted, value):
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS or not key:
            raise ConfigError(f"unknown config key: {dotted}")
        target = getattr(self, section)
        match = {f.name: f for f in fields(target)}
        if key not in match:
            raise ConfigError(f"unknown config key: {dotted}")
        typ = match[key].type
        try:
            if typ == "int" or typ is int:
                parsed = int(value)
            elif typ == "float" or typ is float:
                parsed = float(value)
            else:
                parsed = str(value)
        except ValueError as err:
            raise ConfigError(f"bad value for {dotted}: {value}") from err
        setattr(target, key, parsed)


def section_lines(section_name, section):
    return [f"{section_name}.{k}={v}" for k, v in sorted(asdict(section).items())]


def serialize_config(config):
    lines = []
    for name in sorted(_SECTIONS):
        lines.extend(section_lines(name, getattr(config, name)))
    return "\n".join(lines) + "\n"


def parse_config(text, base=None):
    config = base if base is not None else PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        config.set_key(key.strip(), value.strip())
    return config


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), base)


def save_config(path, config):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_config(config))


def section_digest(section_name, section):
    """sha256 over the canonical key=value lines of one section."""
    payload = "\n".join(section_lines(section_name, section)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()
