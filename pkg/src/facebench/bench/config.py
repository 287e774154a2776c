"""Estimator and experiment configuration (JSON)."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigError
from ..registration import DEFAULT_CROP_RADIUS, IcpParams
from ..warp import registered_plugins

RIGID = ("RLR", "ICP")
DISTANCES = ("P2P", "P2Tri")
CORRECTIONS = ("none", "ETC")
REPORTERS = ("table", "scatter", "heatmap")
DEFAULT_RLR_IDS = (13, 19, 28, 31, 37)

_TOP_KEYS = {"name", "rigid", "warp", "distance", "correction", "crop", "options"}
_OPTION_KEYS = {"crop_radius", "rlr_landmark_ids", "with_scale", "icp", "etc_sign"}
_ICP_KEYS = {"max_iterations", "rel_tolerance", "subsample"}
_EXPERIMENT_KEYS = {"dataset", "methods", "estimators", "reporter_type", "mms_info",
                    "mask", "out_dir", "cache_dir", "top_k"}


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    rigid: str
    warp: str = "none"
    distance: str = "P2P"
    correction: str = "none"
    crop: bool = False
    crop_radius: float = DEFAULT_CROP_RADIUS
    rlr_landmark_ids: tuple = DEFAULT_RLR_IDS
    with_scale: bool = True
    icp: IcpParams = IcpParams()
    etc_sign: int = 1

    @property
    def warp_stages(self) -> list[str]:
        return [] if self.warp == "none" else self.warp.split("+")

    @property
    def crops(self) -> bool:
        # ICP registration makes cropping unnecessary
        return self.crop and self.rigid == "RLR"

    def stages(self) -> list[str]:
        """Stage labels in execution order."""
        out = ["Crop"] if self.crops else []
        out.append("RLR" if self.rigid == "RLR" else "ICP-with-RLR-init")
        out += self.warp_stages
        out += ["Chamfer", self.distance]
        if self.correction == "ETC":
            out.append("ETC")
        return out

    def canonical(self) -> dict:
        """Everything that affects the result; the name is excluded."""
        d = {
            "rigid": self.rigid, "warp": self.warp, "distance": self.distance,
            "correction": self.correction, "rlr_landmark_ids": list(self.rlr_landmark_ids),
            "with_scale": self.with_scale,
        }
        if self.crops:
            d["crop_radius"] = self.crop_radius
        if self.rigid == "ICP":
            d["icp"] = {"max_iterations": self.icp.max_iterations,
                        "rel_tolerance": self.icp.rel_tolerance, "subsample": self.icp.subsample}
        if self.correction == "ETC":
            d["etc_sign"] = self.etc_sign
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _choice(value, allowed, what):
    if value not in allowed:
        raise ConfigError(f"unknown {what} {value!r}; expected one of {list(allowed)}")
    return value


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {where}")


def _validate_warp(warp: str, plugins) -> str:
    if not isinstance(warp, str) or not warp:
        raise ConfigError("warp must be a non-empty string")
    if warp == "none":
        return warp
    parts = warp.split("+")
    if len(parts) > 2 or (len(parts) == 2 and parts[0] != "ELR") or len(set(parts)) != len(parts):
        raise ConfigError(f"unsupported warp composition {warp!r}; use 'ELR', '<plugin>' or 'ELR+<plugin>'")
    for p in parts:
        if p != "ELR" and p not in plugins:
            raise ConfigError(f"warp {p!r} is neither ELR nor a registered plugin")
    return warp


def estimator_from_dict(d: dict, plugins=None, default_name: str = "") -> EstimatorSpec:
    plugins = registered_plugins() if plugins is None else plugins
    _check_keys(d, _TOP_KEYS, "estimator")
    if "rigid" not in d:
        raise ConfigError("estimator needs a 'rigid' stage (RLR or ICP)")
    opts = d.get("options", {}) or {}
    _check_keys(opts, _OPTION_KEYS, "estimator options")
    icp_opts = opts.get("icp", {}) or {}
    _check_keys(icp_opts, _ICP_KEYS, "icp options")
    with_scale = opts.get("with_scale", True)
    if not isinstance(with_scale, bool):
        raise ConfigError("with_scale must be a boolean")
    try:
        icp = IcpParams(
            max_iterations=int(icp_opts.get("max_iterations", 50)),
            rel_tolerance=float(icp_opts.get("rel_tolerance", 1e-6)),
            subsample=icp_opts.get("subsample"),
            with_scale=with_scale,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad icp options: {exc}") from None
    ids = tuple(int(i) for i in opts.get("rlr_landmark_ids", DEFAULT_RLR_IDS))
    if len(ids) < 3 or len(set(ids)) != len(ids):
        raise ConfigError("rlr_landmark_ids needs at least 3 distinct ids")
    radius = float(opts.get("crop_radius", DEFAULT_CROP_RADIUS))
    if not radius > 0:
        raise ConfigError("crop_radius must be positive")
    sign = opts.get("etc_sign", "+")
    if sign not in ("+", "-"):
        raise ConfigError("etc_sign must be '+' or '-'")
    crop = d.get("crop", False)
    if not isinstance(crop, bool):
        raise ConfigError("crop must be a boolean")
    return EstimatorSpec(
        name=str(d.get("name", default_name)),
        rigid=_choice(d["rigid"], RIGID, "rigid stage"),
        warp=_validate_warp(d.get("warp", "none"), plugins),
        distance=_choice(d.get("distance", "P2P"), DISTANCES, "distance"),
        correction=_choice(d.get("correction", "none"), CORRECTIONS, "correction"),
        crop=crop,
        crop_radius=radius,
        rlr_landmark_ids=ids,
        with_scale=with_scale,
        icp=icp,
        etc_sign=1 if sign == "+" else -1,
    )


def _loads(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def parse_estimator(text: str, plugins=None, default_name: str = "") -> EstimatorSpec:
    """Parse and validate one estimator JSON document."""
    return estimator_from_dict(_loads(text, "estimator"), plugins, default_name)


def standard_estimators() -> dict[str, dict]:
    """The sixteen named compositions E1..E16 (rigid x warp x correction)."""
    out = {}
    k = 1
    for rigid in ("ICP", "RLR"):
        for warp in ("none", "ELR", "NICP", "ELR+NICP"):
            for corr in ("none", "ETC"):
                out[f"E{k}"] = {"name": f"E{k}", "rigid": rigid, "warp": warp,
                                "distance": "P2P", "correction": corr}
                k += 1
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    methods: tuple
    estimators: tuple
    reporter_type: str = "table"
    mms_info: dict = field(default_factory=dict)
    mask: str = "full"
    out_dir: str = "results"
    cache_dir: str | None = None
    top_k: int = 5
    base_dir: str = "."

    def method_parts(self, method: str) -> tuple[str, str, str]:
        topo, crop, name = method.split("/")
        return topo, crop, name

    def mms_path(self, method: str) -> Path:
        topo, crop, _ = self.method_parts(method)
        for key in (f"{topo}/{crop}", topo):
            if key in self.mms_info:
                return Path(self.mms_info[key])
        raise ConfigError(f"no mms_info entry for {topo}/{crop}")

    def resolved_out_dir(self) -> Path:
        return Path(self.out_dir)

    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out_dir) / "cache"


def _resolve(base: Path, p: str) -> str:
    path = Path(p)
    return str(path if path.is_absolute() else (base / path))


def experiment_from_dict(d: dict, base_dir=".", plugins=None) -> ExperimentConfig:
    base = Path(base_dir)
    _check_keys(d, _EXPERIMENT_KEYS, "experiment")
    for key in ("dataset", "methods", "estimators"):
        if key not in d:
            raise ConfigError(f"experiment is missing {key!r}")
    methods = d["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods must be a non-empty list")
    for m in methods:
        if not isinstance(m, str) or len(m.split("/")) != 3 or not all(m.split("/")):
            raise ConfigError(f"method {m!r} must look like 'topology/crop/name'")
    if len(set(methods)) != len(methods):
        raise ConfigError("duplicate method entries")
    named = standard_estimators()
    specs = []
    for k, e in enumerate(d["estimators"]):
        if isinstance(e, str):
            path = Path(_resolve(base, e))
            if path.exists():
                specs.append(parse_estimator(path.read_text(), plugins, default_name=path.stem))
            elif re.fullmatch(r"E\d+", e) and e in named:
                specs.append(estimator_from_dict(named[e], plugins))
            else:
                raise ConfigError(f"estimator file {str(path)!r} not found")
        else:
            specs.append(estimator_from_dict(e, plugins, default_name=f"est{k + 1}"))
    names = [s.name for s in specs]
    if len(set(names)) != len(names) or not all(names):
        raise ConfigError(f"estimator names must be unique and non-empty: {names}")
    reporter = _choice(d.get("reporter_type", "table"), REPORTERS, "reporter_type")
    mms = d.get("mms_info", {})
    if not isinstance(mms, dict):
        raise ConfigError("mms_info must map topology to a JSON path")
    mms = {k: _resolve(base, v) for k, v in mms.items()}
    for k, v in mms.items():
        if not Path(v).exists():
            raise ConfigError(f"mms_info file for {k!r} not found: {v}")
    cfg = ExperimentConfig(
        dataset=str(d["dataset"]),
        methods=tuple(methods),
        estimators=tuple(specs),
        reporter_type=reporter,
        mms_info=mms,
        mask=str(d.get("mask", "full")),
        out_dir=_resolve(base, d.get("out_dir", "results")),
        cache_dir=_resolve(base, d["cache_dir"]) if d.get("cache_dir") else None,
        top_k=int(d.get("top_k", 5)),
        base_dir=str(base),
    )
    for m in cfg.methods:
        mms = load_mms_info(cfg.mms_path(m))
        available = set(int(i) for i in mms["landmark_ids"])
        for s in cfg.estimators:
            missing = sorted(set(s.rlr_landmark_ids) - available)
            if missing:
                raise ConfigError(f"estimator {s.name!r}: RLR landmark id(s) {missing} not in mms_info for {m}")
        if cfg.mask != "full" and cfg.mask not in mms["masks"]:
            raise ConfigError(f"mask {cfg.mask!r} not defined in mms_info for {m}")
    return cfg


def load_experiment(path, plugins=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"experiment file not found: {path}")
    return experiment_from_dict(_loads(path.read_text(), str(path)), path.parent, plugins)


def load_mms_info(path) -> dict:
    """Topology description: landmark ids / vertex indices, named masks, optional faces."""
    path = Path(path)
    d = _loads(path.read_text(), str(path))
    for key in ("landmark_ids", "landmark_indices"):
        if key not in d:
            raise ConfigError(f"{path}: missing {key!r}")
    if len(d["landmark_ids"]) != len(d["landmark_indices"]):
        raise ConfigError(f"{path}: landmark_ids and landmark_indices differ in length")
    d.setdefault("masks", {})
    return d
