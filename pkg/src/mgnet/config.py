"""Pipeline configuration: INI file + command-line overrides, validated as a whole.

The file is plain ``key = value`` text grouped into sections::

    [pipeline]
    seed = 0
    k = 3

    [embed]
    dims = 32

Values missing from the file fall back to :data:`SCHEMA` defaults. Every
resolved value (defaults included) can be echoed back with :meth:`to_ini`.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path
from typing import Any, Callable

from .embed import WalkConfig
from .errors import ConfigError
from .kmer import MAX_K
from .model import MGNetConfig
from .synth import SynthSpec


def _int_tuple(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).replace(",", " ").split())


def _path_list(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(str(x) for x in text)
    return tuple(x for x in str(text).split() if x)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    if text is None or str(text).strip() in ("", "none"):
        return None
    return float(text)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) if all(isinstance(v, int) for v in value) else " ".join(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[Any], Any], Any]]] = {
    "pipeline": {
        "seed": (int, 0),
        "workdir": (str, "mgnet-work"),
        "input": (_path_list, ()),
        "manifest": (str, ""),
        "min_quality": (float, 7.0),
        "k": (int, 5),
        "stride": (int, 10),
        "lambda_min": (float, 0.0),
        "image_size": (int, 64),
        "checkpoint": (str, ""),
    },
    "synth": {
        "n_species": (int, 4),
        "genome_length": (int, 20000),
        "motif_length": (int, 12),
        "motifs_per_species": (int, 6),
        "read_length": (int, 300),
        "reads_per_species": (int, 1000),
        "substitution_rate": (float, 0.02),
        "host_fraction": (float, 0.2),
        "motif_fraction": (float, 0.5),
        "split_train": (float, 0.7),
        "split_val": (float, 0.1),
        "split_test": (float, 0.2),
    },
    "embed": {
        "walks_per_node": (int, 10),
        "walk_length": (int, 80),
        "return_p": (float, 1.0),
        "inout_q": (float, 1.0),
        "window": (int, 10),
        "negatives": (int, 5),
        "dims": (int, 128),
        "epochs": (int, 1),
        "learning_rate": (float, 0.025),
        "batch_pairs": (int, 512),
    },
    "model": {
        "encoder_channels": (_int_tuple, (32, 64, 128, 128)),
        "epochs_pretrain": (int, 25),
        "batch_size": (int, 64),
        "lr": (float, 1e-4),
        "epochs_finetune": (int, 10),
        "finetune_lr": (_opt_float, None),
        "hidden_sizes": (_int_tuple, (256, 512, 1024)),
        "standardize": (_bool, True),
    },
    "finetune": {
        # 0 = use every labelled training read
        "labels_per_class": (int, 0),
    },
    "cluster": {
        # 0 = one cluster per class present in the manifest
        "n_clusters": (int, 0),
    },
}


class PipelineConfig:
    """Resolved, typed configuration. Access values as ``cfg["embed"]["dims"]`` or ``cfg.get("embed.dims")``."""

    def __init__(self, values: dict[str, dict[str, Any]]):
        self.values = values

    # -- construction -----------------------------------------------------

    @classmethod
    def load(cls, path=None, overrides: dict[str, Any] | None = None) -> "PipelineConfig":
        """Defaults <- INI file at ``path`` <- ``overrides`` (``{"section.key": value}``).

        Raises :class:`ConfigError` listing every problem found (unknown
        keys, unparsable values and cross-module constraint violations).
        """
        problems: list[str] = []
        raw: dict[str, dict[str, Any]] = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
            try:
                with open(path) as handle:
                    parser.read_file(handle)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except configparser.Error as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from None
            for section in parser.sections():
                if section not in SCHEMA:
                    problems.append(f"unknown section [{section}]")
                    continue
                for key, text in parser.items(section):
                    if key not in SCHEMA[section]:
                        problems.append(f"unknown key {section}.{key}")
                    else:
                        raw[section][key] = text
        for dotted, value in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if section not in SCHEMA or key not in SCHEMA[section]:
                problems.append(f"unknown setting {dotted}")
            else:
                raw[section][key] = value
        values: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
        for section, keys in SCHEMA.items():
            for key, (parse, default) in keys.items():
                text = raw[section][key]
                try:
                    values[section][key] = parse(text) if text is not default else default
                except (TypeError, ValueError):
                    problems.append(f"{section}.{key}: cannot parse {text!r}")
                    values[section][key] = default
        cfg = cls(values)
        problems.extend(cfg.violations())
        if problems:
            raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(problems))
        return cfg

    # -- access -------------------------------------------------------------

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.values[section][key]

    @property
    def workdir(self) -> Path:
        return Path(self.values["pipeline"]["workdir"])

    @property
    def seed(self) -> int:
        return self.values["pipeline"]["seed"]

    # -- validation ---------------------------------------------------------

    def violations(self) -> list[str]:
        out = []
        p = self.values["pipeline"]
        k = p["k"]
        if not 1 <= k <= MAX_K:
            out.append(f"pipeline.k must be in [1, {MAX_K}], got {k}")
        if p["stride"] < 1:
            out.append("pipeline.stride must be >= 1")
        if p["lambda_min"] < 0:
            out.append("pipeline.lambda_min must be >= 0")
        if p["min_quality"] < 0:
            out.append("pipeline.min_quality must be >= 0")
        if 1 <= k <= MAX_K and p["image_size"] > 4**k:
            out.append(f"pipeline.image_size {p['image_size']} exceeds the 4^k = {4 ** k} pseudo-image side")
        for builder in (self.synth_spec, self.walk_config, self.model_config):
            try:
                builder()
            except ConfigError as exc:
                out.append(f"{builder.__name__.replace('_', ' ')}: {exc}")
        s = self.values["synth"]
        fr = (s["split_train"], s["split_val"], s["split_test"])
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            out.append("synth split fractions must be non-negative and sum to 1")
        if self.values["finetune"]["labels_per_class"] < 0:
            out.append("finetune.labels_per_class must be >= 0")
        if self.values["cluster"]["n_clusters"] < 0:
            out.append("cluster.n_clusters must be >= 0")
        return out

    # -- module configs -------------------------------------------------------

    def synth_spec(self) -> SynthSpec:
        s = self.values["synth"]
        spec = SynthSpec(
            n_species=s["n_species"],
            genome_length=s["genome_length"],
            motif_length=s["motif_length"],
            motifs_per_species=s["motifs_per_species"],
            read_length=s["read_length"],
            reads_per_species=s["reads_per_species"],
            substitution_rate=s["substitution_rate"],
            host_fraction=s["host_fraction"],
            motif_fraction=s["motif_fraction"],
            seed=self.seed,
        )
        return spec.validate()

    @property
    def split_fractions(self) -> tuple[float, float, float]:
        s = self.values["synth"]
        return (s["split_train"], s["split_val"], s["split_test"])

    def walk_config(self) -> WalkConfig:
        return WalkConfig(seed=self.seed, **self.values["embed"])

    def model_config(self) -> MGNetConfig:
        m = self.values["model"]
        # the fused feature lives in the embedding space, so the model's
        # bottleneck width is the embedding width by construction
        return MGNetConfig(
            input_size=self.values["pipeline"]["image_size"],
            encoder_channels=m["encoder_channels"],
            embed_dims=self.values["embed"]["dims"],
            epochs_pretrain=m["epochs_pretrain"],
            epochs_finetune=m["epochs_finetune"],
            batch_size=m["batch_size"],
            lr=m["lr"],
            finetune_lr=m["finetune_lr"],
            hidden_sizes=m["hidden_sizes"],
            standardize=m["standardize"],
            seed=self.seed,
        )

    # -- provenance -------------------------------------------------------------

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_fmt(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def section_digest(self, sections) -> str:
        blob = json.dumps({s: {k: _fmt(v) for k, v in self.values[s].items()} for s in sections}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()
