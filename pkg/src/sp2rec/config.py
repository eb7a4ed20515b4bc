"""Experiment configuration: a nested TOML document validated before any work starts."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .core import ContractError, Hyperparams
from .privacy import H1, H2, BetaConfig

ABS_OPTIMISTIC = "abs_optimistic"
ABS_PESSIMISTIC = "abs_pessimistic"
ONLY_PUBLIC = "only_public"
NAIVE = "naive"
CLUSTER = "cluster"
JOINT = "joint"
DP = "dp"
SHOKRI_FR = "shokri_fr"
SHOKRI_SR = "shokri_sr"
SHOKRI_SM = "shokri_sm"

SP2_METHODS = (NAIVE, CLUSTER, JOINT)
PARTITIONED = (ONLY_PUBLIC,) + SP2_METHODS
UNPARTITIONED = (ABS_OPTIMISTIC, ABS_PESSIMISTIC, DP, SHOKRI_FR, SHOKRI_SR, SHOKRI_SM)
ALL_METHODS = UNPARTITIONED + PARTITIONED

DEFAULTS = {
    "seed": 0,
    "n_folds": 5,
    "out": "runs/experiment",
    "threads": 1,
    "clamp_predictions": False,
    "dataset": {"path": "data/ml-100k/u.data", "format": "tsv"},
    "hyperparams": {"k": 100, "delta": 0.005, "lambda": 0.02, "epochs": 20, "init_std": 0.1},
    "privacy": {"hypotheses": [H1, H2], "betas": ["balanced", "extreme", "pessimistic", "optimistic"]},
    "methods": {
        "run": [ABS_OPTIMISTIC, ABS_PESSIMISTIC, ONLY_PUBLIC, NAIVE],
        "cluster": {"K": 100, "bloom": False, "fp_rate": 0.01},
        "joint": {"z": 10, "R": 3, "init_std": 0.1},
        "dp": {"beta_m": 15, "noise_sigma": 0.5},
        "shokri": {"n_peers": 10, "ratings_per_peer": 10, "max_fraction": 0.5, "similarity": "pearson"},
        "topn": {"N": 10, "n_prime": 50},
    },
    "sweep": {"ratios": [0.0, 0.17, 0.5, 0.83], "concentration": 4.0},
    "ablation": {"K": [10, 25, 50, 100, 200], "joint_max_z": 200},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        return cls(_merge(DEFAULTS, data), Path(base_dir) if base_dir else Path.cwd())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "rb") as fh:
            return cls.from_dict(tomli.load(fh), path.parent)

    def dumps(self) -> str:
        return tomli_w.dumps(self.raw)

    def with_overrides(self, **top) -> "ExperimentConfig":
        return ExperimentConfig(_merge(self.raw, {k: v for k, v in top.items() if v is not None}), self.base_dir)

    # typed views

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def n_folds(self) -> int:
        return int(self.raw["n_folds"])

    @property
    def clamp(self) -> bool:
        return bool(self.raw["clamp_predictions"])

    @property
    def threads(self) -> int:
        return int(self.raw["threads"])

    @property
    def dataset_path(self) -> Path:
        p = Path(self.raw["dataset"]["path"])
        return p if p.is_absolute() or p.exists() else self.base_dir / p

    @property
    def dataset_format(self) -> str:
        return self.raw["dataset"]["format"]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out"])

    @property
    def methods(self) -> list[str]:
        return list(self.raw["methods"]["run"])

    @property
    def hypotheses(self) -> list[str]:
        return list(self.raw["privacy"]["hypotheses"])

    @property
    def betas(self) -> list[BetaConfig]:
        out = []
        for spec in self.raw["privacy"]["betas"]:
            if isinstance(spec, str):
                out.append(BetaConfig.named(spec))
            else:
                out.append(BetaConfig(float(spec["alpha"]), float(spec["beta"]), spec.get("label", "custom")))
        return out

    def hyperparams(self, seed: int | None = None) -> Hyperparams:
        h = self.raw["hyperparams"]
        return Hyperparams(
            k=int(h["k"]),
            delta=float(h["delta"]),
            lam=float(h["lambda"]),
            epochs=int(h["epochs"]),
            seed=self.seed if seed is None else seed,
            init_std=float(h["init_std"]),
        )

    @property
    def device_epochs(self) -> int | None:
        value = self.raw["hyperparams"].get("device_epochs")
        return None if value is None else int(value)

    def method(self, name: str) -> dict:
        return dict(self.raw["methods"][name])

    def validate(self, n_users: int | None = None, n_items: int | None = None, n_ratings: int | None = None) -> list[str]:
        """Every static constraint violation, as messages; empty when the config is usable."""
        errors = []
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            errors.append(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
        if self.n_folds < 2:
            errors.append("n_folds must be >= 2")
        if n_ratings is not None and self.n_folds > n_ratings:
            errors.append(f"n_folds={self.n_folds} exceeds the {n_ratings} ratings")
        if self.dataset_format not in ("tsv", "csv"):
            errors.append(f"dataset.format must be tsv or csv, got {self.dataset_format!r}")
        if not self.dataset_path.exists():
            errors.append(f"dataset not found: {self.dataset_path}")
        try:
            self.hyperparams()
        except ContractError as exc:
            errors.append(f"hyperparams: {exc}")
        for hyp in self.hypotheses:
            if hyp not in (H1, H2):
                errors.append(f"hypothesis must be H1 or H2, got {hyp!r}")
        for spec in self.raw["privacy"]["betas"]:
            try:
                if isinstance(spec, str):
                    BetaConfig.named(spec)
                else:
                    BetaConfig(float(spec["alpha"]), float(spec["beta"]), spec.get("label", "custom"))
            except (ContractError, KeyError, TypeError) as exc:
                errors.append(f"beta {spec!r}: {exc}")
        cl, jo = self.method("cluster"), self.method("joint")
        topn, sh, dp = self.method("topn"), self.method("shokri"), self.method("dp")
        if int(cl["K"]) < 1:
            errors.append("cluster.K must be >= 1")
        if CLUSTER in self.methods and n_items is not None and int(cl["K"]) > n_items:
            errors.append(f"cluster.K={cl['K']} exceeds n_items={n_items}")
        if int(jo["z"]) < 1:
            errors.append("joint.z must be >= 1")
        if not 1 <= int(jo["R"]) <= int(jo["z"]):
            errors.append(f"joint.R={jo['R']} must satisfy 1 <= R <= z={jo['z']}")
        if not 0 < float(cl.get("fp_rate", 0.01)) < 1:
            errors.append("cluster.fp_rate must lie in (0, 1)")
        if int(topn["N"]) < 1 or int(topn["n_prime"]) < int(topn["N"]):
            errors.append(f"topn needs 1 <= N <= n_prime, got N={topn['N']}, n_prime={topn['n_prime']}")
        if int(dp["beta_m"]) < 0 or float(dp["noise_sigma"]) < 0:
            errors.append("dp.beta_m and dp.noise_sigma must be >= 0")
        if int(sh["n_peers"]) < 1:
            errors.append("shokri.n_peers must be >= 1")
        shokri = {SHOKRI_FR, SHOKRI_SR, SHOKRI_SM} & set(self.methods)
        if shokri and n_users is not None and int(sh["n_peers"]) > n_users - 1:
            errors.append(f"shokri.n_peers={sh['n_peers']} needs more than {n_users} users")
        if not 0 <= float(sh["max_fraction"]) <= 1:
            errors.append("shokri.max_fraction must lie in [0, 1]")
        if sh["similarity"] not in ("pearson", "cosine"):
            errors.append("shokri.similarity must be pearson or cosine")
        for r in self.raw["sweep"]["ratios"]:
            if not 0 <= float(r) <= 1:
                errors.append(f"sweep ratio {r} outside [0, 1]")
        if float(self.raw["sweep"]["concentration"]) <= 0:
            errors.append("sweep.concentration must be > 0")
        # the upper bound on ablation K is checked by the ablation itself
        for K in self.raw["ablation"]["K"]:
            if int(K) < 1:
                errors.append(f"ablation K={K} must be >= 1")
        return errors
