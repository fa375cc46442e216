"""Run configuration: a single nested YAML document, validated with exact
field paths so a bad entry is reported as e.g. ``render.voxel_size: ...``."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .forward_model import RenderSpec
from .generative import FlowHyper, VaeHyper
from .losses import LossWeights, StereoParams


@dataclass
class ReferenceConfig:
    kind: str = "synthetic"  # synthetic | pdb
    path: str | None = None
    n_res: int = 40
    rise: float | None = None
    twist: float | None = None


@dataclass
class SyntheticConfig:
    n_maps: int = 4
    pivot_residue: int = 20
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    angle_min_deg: float = 0.0
    angle_max_deg: float = 24.0


@dataclass
class SampleConfig:
    n_samples: int = 16
    euler_steps: int = 50


@dataclass
class RunConfig:
    experiment: str = "default-hinge"
    seed: int = 0
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    render_grid_shape: tuple[int, int, int] = (32, 32, 32)
    render_voxel_size: float = 2.0
    render_origin: tuple[float, float, float] | None = None
    render_resolution: float = 8.0
    render_amplitude_mode: str = "uniform"
    render_cutoff_sigmas: float = 5.0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    stereo: StereoParams = field(default_factory=StereoParams)
    vae: VaeHyper = field(default_factory=VaeHyper)
    flow: FlowHyper = field(default_factory=FlowHyper)
    flow_augment_per_gap: int = 0
    sample: SampleConfig = field(default_factory=SampleConfig)
    raw: dict = field(default_factory=dict)

    def render_spec(self) -> RenderSpec:
        return RenderSpec(
            grid_shape=self.render_grid_shape,
            voxel_size=self.render_voxel_size,
            origin=np.array(self.render_origin) if self.render_origin else np.zeros(3),
            resolution=self.render_resolution,
            amplitude_mode=self.render_amplitude_mode,
            cutoff_sigmas=self.render_cutoff_sigmas,
        )


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def _expect_mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _check_unknown(section: dict, known: set[str], path: str):
    for key in section:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")


def _number(section: dict, key: str, path: str, default, minimum=None, maximum=None):
    value = section.get(key, default)
    if value is None and default is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{path}.{key}", f"must be <= {maximum}, got {value}")
    return value


def _integer(section: dict, key: str, path: str, default, minimum=None):
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {value}")
    return int(value)


def _string(section: dict, key: str, path: str, default, choices=None):
    value = section.get(key, default)
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{path}.{key}", f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}.{key}", f"must be one of {sorted(choices)}, got {value!r}")
    return value


def _vector(section: dict, key: str, path: str, default, length: int):
    value = section.get(key, default)
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigError(f"{path}.{key}", f"expected a list of {length} numbers, got {value!r}")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}.{key}[{i}]", f"expected a number, got {v!r}")
        out.append(float(v))
    return tuple(out)


def parse_config(doc: dict) -> RunConfig:
    doc = _expect_mapping(doc, "")
    _check_unknown(
        doc,
        {
            "experiment",
            "seed",
            "reference",
            "synthetic",
            "render",
            "loss_weights",
            "stereo",
            "vae",
            "flow",
            "sample",
        },
        "",
    )
    cfg = RunConfig(raw=doc)
    cfg.experiment = _string(doc, "experiment", "", "default-hinge") or "default-hinge"
    cfg.seed = _integer(doc, "seed", "", 0, minimum=0)

    ref = _expect_mapping(doc.get("reference"), "reference")
    _check_unknown(ref, {"kind", "path", "n_res", "rise", "twist"}, "reference")
    kind = _string(ref, "kind", "reference", "synthetic", {"synthetic", "pdb"})
    path = _string(ref, "path", "reference", None)
    if kind == "pdb" and not path:
        raise ConfigError("reference.path", "required when reference.kind is 'pdb'")
    rise = _number(ref, "rise", "reference", None)
    twist = _number(ref, "twist", "reference", None)
    if (rise is None) != (twist is None):
        raise ConfigError("reference.rise", "rise and twist must be given together")
    cfg.reference = ReferenceConfig(
        kind=kind,
        path=path,
        n_res=_integer(ref, "n_res", "reference", 40, minimum=5),
        rise=rise,
        twist=twist,
    )

    syn = _expect_mapping(doc.get("synthetic"), "synthetic")
    _check_unknown(
        syn, {"n_maps", "pivot_residue", "axis", "angle_min_deg", "angle_max_deg"}, "synthetic"
    )
    cfg.synthetic = SyntheticConfig(
        n_maps=_integer(syn, "n_maps", "synthetic", 4, minimum=1),
        pivot_residue=_integer(syn, "pivot_residue", "synthetic", 20, minimum=1),
        axis=_vector(syn, "axis", "synthetic", (1.0, 0.0, 0.0), 3),
        angle_min_deg=_number(syn, "angle_min_deg", "synthetic", 0.0),
        angle_max_deg=_number(syn, "angle_max_deg", "synthetic", 24.0),
    )

    ren = _expect_mapping(doc.get("render"), "render")
    _check_unknown(
        ren,
        {"grid_shape", "voxel_size", "origin", "resolution", "amplitude_mode", "cutoff_sigmas"},
        "render",
    )
    shape = _vector(ren, "grid_shape", "render", (32.0, 32.0, 32.0), 3)
    if any(n != int(n) or n < 1 for n in shape):
        raise ConfigError("render.grid_shape", f"entries must be positive integers, got {shape}")
    cfg.render_grid_shape = tuple(int(n) for n in shape)
    cfg.render_voxel_size = _number(ren, "voxel_size", "render", 2.0, minimum=1e-6)
    cfg.render_origin = _vector(ren, "origin", "render", None, 3)
    cfg.render_resolution = _number(ren, "resolution", "render", 8.0, minimum=1e-6)
    cfg.render_amplitude_mode = _string(
        ren, "amplitude_mode", "render", "uniform", {"uniform", "atomic_number"}
    )
    cfg.render_cutoff_sigmas = _number(ren, "cutoff_sigmas", "render", 5.0, minimum=3.0)

    lw = _expect_mapping(doc.get("loss_weights"), "loss_weights")
    _check_unknown(lw, {"lambda_kl", "lambda_molprob", "lambda_backbone"}, "loss_weights")
    cfg.loss_weights = LossWeights(
        lambda_kl=_number(lw, "lambda_kl", "loss_weights", 1e-4, minimum=0.0),
        lambda_molprob=_number(lw, "lambda_molprob", "loss_weights", 1e-6, minimum=0.0),
        lambda_backbone=_number(lw, "lambda_backbone", "loss_weights", 1e2, minimum=0.0),
    )

    st = _expect_mapping(doc.get("stereo"), "stereo")
    _check_unknown(
        st,
        {"clash_tolerance", "vdw_radii", "rama_basins", "chi_targets", "chi_tolerance_deg"},
        "stereo",
    )
    radii_doc = _expect_mapping(st.get("vdw_radii"), "stereo.vdw_radii")
    radii = {"C": 1.70, "N": 1.55, "O": 1.52, "S": 1.80}
    for el, r in radii_doc.items():
        if isinstance(r, bool) or not isinstance(r, (int, float)) or r <= 0:
            raise ConfigError(f"stereo.vdw_radii.{el}", f"expected a positive number, got {r!r}")
        radii[str(el)] = float(r)
    basins_doc = st.get("rama_basins", [[-63.0, -43.0, 30.0], [-120.0, 130.0, 40.0]])
    if not isinstance(basins_doc, list) or not basins_doc:
        raise ConfigError("stereo.rama_basins", f"expected a non-empty list, got {basins_doc!r}")
    basins = []
    for i, b in enumerate(basins_doc):
        if not isinstance(b, (list, tuple)) or len(b) != 3:
            raise ConfigError(
                f"stereo.rama_basins[{i}]", f"expected [phi_deg, psi_deg, radius_deg], got {b!r}"
            )
        basins.append(tuple(float(x) for x in b))
    chi_targets = st.get("chi_targets", [-60.0, 60.0, 180.0])
    if not isinstance(chi_targets, list) or not chi_targets:
        raise ConfigError("stereo.chi_targets", f"expected a non-empty list, got {chi_targets!r}")
    cfg.stereo = StereoParams.from_degrees(
        vdw_radii=radii,
        clash_tolerance=_number(st, "clash_tolerance", "stereo", 0.4, minimum=1e-6),
        rama_basins_deg=basins,
        chi_targets_deg=[float(t) for t in chi_targets],
        chi_tolerance_deg=_number(st, "chi_tolerance_deg", "stereo", 30.0, minimum=1e-6),
    )

    va = _expect_mapping(doc.get("vae"), "vae")
    _check_unknown(va, {"steps", "lr", "betas", "latent_channels"}, "vae")
    betas = _vector(va, "betas", "vae", (0.9, 0.999), 2)
    cfg.vae = VaeHyper(
        steps=_integer(va, "steps", "vae", 600, minimum=1),
        lr=_number(va, "lr", "vae", 1e-3, minimum=0.0),
        betas=betas,
        latent_channels=_integer(va, "latent_channels", "vae", 4, minimum=1),
    )

    fl = _expect_mapping(doc.get("flow"), "flow")
    _check_unknown(
        fl, {"steps", "lr", "betas", "batch_size", "width", "time_embed_dim", "augment_per_gap"}, "flow"
    )
    fbetas = _vector(fl, "betas", "flow", (0.9, 0.999), 2)
    cfg.flow = FlowHyper(
        steps=_integer(fl, "steps", "flow", 2000, minimum=1),
        lr=_number(fl, "lr", "flow", 1e-3, minimum=0.0),
        betas=fbetas,
        batch_size=_integer(fl, "batch_size", "flow", 64, minimum=1),
        width=_integer(fl, "width", "flow", 256, minimum=1),
        time_embed_dim=_integer(fl, "time_embed_dim", "flow", 32, minimum=2),
    )
    cfg.flow_augment_per_gap = _integer(fl, "augment_per_gap", "flow", 0, minimum=0)
    if cfg.flow.time_embed_dim % 2:
        raise ConfigError("flow.time_embed_dim", "must be even")

    sa = _expect_mapping(doc.get("sample"), "sample")
    _check_unknown(sa, {"n_samples", "euler_steps"}, "sample")
    cfg.sample = SampleConfig(
        n_samples=_integer(sa, "n_samples", "sample", 16, minimum=1),
        euler_steps=_integer(sa, "euler_steps", "sample", 50, minimum=1),
    )
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(str(path), "config file does not exist")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from None
    cfg = parse_config(doc if doc is not None else {})
    if cfg.reference.kind == "pdb":
        ref_path = Path(cfg.reference.path)
        if not ref_path.is_absolute():
            ref_path = p.parent / ref_path
        if not ref_path.exists():
            raise ConfigError("reference.path", f"file {ref_path} does not exist")
        cfg.reference.path = str(ref_path)
    return cfg
