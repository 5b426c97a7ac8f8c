"""Run configuration: one JSON file shared by every pipeline stage.

The reward and search knobs (beta, gamma, c, K, R, depths, seeds) carry no
defaults anywhere: a config file must state them, so no experiment silently
depends on baked-in values. The file's content hash is embedded in dataset
provenance to keep corpora regenerable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends.base import BackendConfig
from .decoding import DecodeConfig
from .mcts import SearchConfig
from .synthetic import SyntheticCorpusConfig

MODE_FLAGS = ("step_only", "outcome_only", "no_rationale")


class ConfigError(ValueError):
    """A config file failed validation; the message names the field."""


@dataclass(frozen=True)
class Paths:
    output_dir: str
    problems_file: str | None = None
    cache_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    search: SearchConfig
    decode: DecodeConfig
    paths: Paths
    backends: dict = field(default_factory=dict)
    mode: str = "hybrid"
    workers: int = 1
    synthetic: SyntheticCorpusConfig | None = None
    config_hash: str = ""
    raw: dict = field(default_factory=dict)

    def with_overrides(self, seed: int | None = None, mode: str | None = None,
                       workers: int | None = None) -> "RunConfig":
        """CLI overrides: one run seed replaces every per-stage seed."""
        search = self.search
        decode = self.decode
        synthetic = self.synthetic
        if seed is not None:
            search = SearchConfig(
                exploration_c=search.exploration_c,
                branch_K=search.branch_K,
                decay_gamma=search.decay_gamma,
                outcome_beta=search.outcome_beta,
                max_rounds_R=search.max_rounds_R,
                max_depth=search.max_depth,
                rng_seed=seed,
            )
            decode = DecodeConfig(
                candidates_N=decode.candidates_N,
                temperature=decode.temperature,
                max_steps=decode.max_steps,
                pass_n=decode.pass_n,
                rng_seed=seed,
            )
            if synthetic is not None:
                synthetic = SyntheticCorpusConfig(
                    count=synthetic.count,
                    num_terms=synthetic.num_terms,
                    value_range=synthetic.value_range,
                    seed=seed,
                    error_rate=synthetic.error_rate,
                    max_planted_errors=synthetic.max_planted_errors,
                    planted_deltas=synthetic.planted_deltas,
                    branch_noise=synthetic.branch_noise,
                    noise_deltas=synthetic.noise_deltas,
                )
        return RunConfig(
            search=search,
            decode=decode,
            paths=self.paths,
            backends=self.backends,
            mode=mode if mode is not None else self.mode,
            workers=workers if workers is not None else self.workers,
            synthetic=synthetic,
            config_hash=self.config_hash,
            raw=self.raw,
        )


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"missing required field: {path}.{key}")
    return section[key]


def _section(raw: dict, name: str) -> dict:
    value = _require(raw, name, "config")
    if not isinstance(value, dict):
        raise ConfigError(f"config.{name} must be an object")
    return value


def _pair(value, path: str) -> tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path} must be a [low, high] pair")
    return int(value[0]), int(value[1])


def _search_config(section: dict) -> SearchConfig:
    try:
        return SearchConfig(
            exploration_c=float(_require(section, "exploration_c", "search")),
            branch_K=int(_require(section, "branch_K", "search")),
            decay_gamma=float(_require(section, "decay_gamma", "search")),
            outcome_beta=float(_require(section, "outcome_beta", "search")),
            max_rounds_R=int(_require(section, "max_rounds_R", "search")),
            max_depth=int(_require(section, "max_depth", "search")),
            rng_seed=int(_require(section, "rng_seed", "search")),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"search: {err}") from err


def _decode_config(section: dict) -> DecodeConfig:
    try:
        return DecodeConfig(
            candidates_N=int(_require(section, "candidates_N", "decode")),
            temperature=float(_require(section, "temperature", "decode")),
            max_steps=int(_require(section, "max_steps", "decode")),
            pass_n=int(_require(section, "pass_n", "decode")),
            rng_seed=int(_require(section, "rng_seed", "decode")),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"decode: {err}") from err


def _paths(section: dict, base_dir: Path) -> Paths:
    output_dir = _require(section, "output_dir", "paths")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("paths.output_dir must be a non-empty string")

    def resolve(value):
        if value is None:
            return None
        path = Path(value)
        return str(path if path.is_absolute() else base_dir / path)

    problems_file = resolve(section.get("problems_file"))
    if problems_file is not None and not Path(problems_file).exists():
        raise ConfigError(f"paths.problems_file does not exist: {problems_file}")
    return Paths(
        output_dir=resolve(output_dir),
        problems_file=problems_file,
        cache_dir=resolve(section.get("cache_dir")),
    )


def _mode(raw: dict) -> str:
    section = raw.get("mode", {})
    if not isinstance(section, dict):
        raise ConfigError("config.mode must be an object of boolean flags")
    unknown = set(section) - set(MODE_FLAGS)
    if unknown:
        raise ConfigError(f"unknown mode flags: {', '.join(sorted(unknown))}")
    active = [flag for flag in MODE_FLAGS if section.get(flag)]
    if len(active) > 1:
        raise ConfigError("modes mutually exclusive")
    return active[0] if active else "hybrid"


def _synthetic(raw: dict) -> SyntheticCorpusConfig | None:
    section = raw.get("synthetic")
    if section is None:
        return None
    try:
        return SyntheticCorpusConfig(
            count=int(_require(section, "count", "synthetic")),
            num_terms=_pair(_require(section, "num_terms", "synthetic"), "synthetic.num_terms"),
            value_range=_pair(
                _require(section, "value_range", "synthetic"), "synthetic.value_range"
            ),
            seed=int(_require(section, "seed", "synthetic")),
            error_rate=float(section.get("error_rate", 0.0)),
            max_planted_errors=int(section.get("max_planted_errors", 1)),
            planted_deltas=tuple(int(d) for d in section.get("planted_deltas", (10, -30, 60))),
            branch_noise=float(section.get("branch_noise", 0.0)),
            noise_deltas=tuple(int(d) for d in section.get("noise_deltas", (10, -10, 25))),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"synthetic: {err}") from err


_DEFAULT_BACKENDS = {
    "generator": {"kind": "synthetic"},
    "verifier": {"kind": "synthetic"},
    "scorer": {"kind": "synthetic"},
}

_BACKEND_ROLES = ("generator", "verifier", "scorer")


def _backends(raw: dict) -> dict:
    section = raw.get("backends")
    if section is None:
        return dict(_DEFAULT_BACKENDS)
    if not isinstance(section, dict):
        raise ConfigError("config.backends must be an object")
    backends = dict(_DEFAULT_BACKENDS)
    for role, spec in section.items():
        if role not in _BACKEND_ROLES:
            raise ConfigError(f"unknown backend role: {role}")
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError(f"backends.{role} must be an object with a kind")
        if spec["kind"] not in ("synthetic", "http"):
            raise ConfigError(f"backends.{role}.kind must be synthetic or http")
        backends[role] = spec
    return backends


def backend_config_from(spec: dict, role: str, default_cache_dir: str | None) -> BackendConfig:
    """Build one endpoint config from its raw mapping."""
    try:
        return BackendConfig(
            endpoint_url=_require(spec, "endpoint_url", f"backends.{role}"),
            model_name=spec.get("model_name", ""),
            auth_token_env_var=spec.get("auth_token_env_var"),
            temperature=float(spec.get("temperature", 1.0)),
            timeout_s=float(spec.get("timeout_s", 30.0)),
            max_retries=int(spec.get("max_retries", 2)),
            rate_limit_rps=float(spec.get("rate_limit_rps", 10.0)),
            cache_dir=spec.get("cache_dir", default_cache_dir),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"backends.{role}: {err}") from err


def config_hash_of(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON run config; errors name the failing field."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as err:
        raise ConfigError(f"config file is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    base_dir = path.parent
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be an integer >= 1")
    return RunConfig(
        search=_search_config(_section(raw, "search")),
        decode=_decode_config(_section(raw, "decode")),
        paths=_paths(_section(raw, "paths"), base_dir),
        backends=_backends(raw),
        mode=_mode(raw),
        workers=workers,
        synthetic=_synthetic(raw),
        config_hash=config_hash_of(raw),
        raw=raw,
    )
