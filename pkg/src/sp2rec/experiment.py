"""Cross-validated orchestration, report assembly and the server-state privacy digest.

Report files are a pure function of (config, seed, dataset): wall-clock timing
is kept on the in-memory objects but never written out.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .baselines import (
    DPConfig,
    ObfuscationConfig,
    abs_optimistic,
    abs_pessimistic,
    dp_baseline,
    obfuscation_baseline,
    only_public,
)
from .core import Hyperparams, PublicModel, RatingsDataset
from .device import DeviceContext, predict_items, train_private
from .ingest import FoldSplit, kfold, load_csv, load_tsv
from .metrics import ndcg_at_10, rmse
from .privacy import H1, BetaConfig, PrivacyPartition, allocate
from .server import RecommenderServer, build_aux, encode_aux, train_joint
from .server.aux import CLUSTER, JOINT, NAIVE, aux_size_bytes, default_bloom_bits, encode_model, payload_bytes

log = logging.getLogger(__name__)

REPORT_SCHEMA = "sp2rec.report/1"


class PrivacyViolation(AssertionError):
    """Server-visible state changed during the device phase."""


@dataclass(frozen=True)
class PrivacySetting:
    """How training ratings get split: a beta distribution, or one fixed ratio for every group.

    ``target`` marks sweep points, whose label is the target mean ratio.
    """

    hypothesis: str
    beta: BetaConfig | None = None
    fixed_ratio: float | None = None
    target: float | None = None

    def __post_init__(self):
        if (self.beta is None) == (self.fixed_ratio is None):
            raise ValueError("give exactly one of beta or fixed_ratio")

    @classmethod
    def for_mean(cls, hypothesis: str, mean: float, concentration: float = 4.0) -> "PrivacySetting":
        """Mean-matched beta; the endpoints 0 and 1 become fixed ratios."""
        if mean <= 0 or mean >= 1:
            return cls(hypothesis, fixed_ratio=float(mean), target=float(mean))
        return cls(hypothesis, BetaConfig.with_mean(mean, concentration), target=float(mean))

    @property
    def label(self) -> str:
        if self.target is not None:
            return f"mean-{self.target:g}"
        if self.beta is None:
            return f"fixed-{self.fixed_ratio:g}"
        if self.beta.label != "custom":
            return self.beta.label
        return f"beta({self.beta.alpha:g},{self.beta.beta:g})"

    @property
    def alpha_beta(self):
        return (self.beta.alpha, self.beta.beta) if self.beta else (None, None)

    def allocate(self, train: RatingsDataset, seed: int) -> PrivacyPartition:
        ratios = None
        if self.beta is None:
            n = train.n_users if self.hypothesis == H1 else train.n_items
            ratios = np.full(n, float(self.fixed_ratio))
        return allocate(train, self.hypothesis, self.beta, seed, ratios)

    def code(self) -> list[int]:
        """Integers identifying the setting, used to derive its allocation seed."""
        a, b = self.alpha_beta
        parts = [1 if self.hypothesis == H1 else 2]
        if a is None:
            parts += [0, int(round(self.fixed_ratio * 1e6))]
        else:
            parts += [int(round(a * 1e6)), int(round(b * 1e6))]
        return parts


@dataclass
class FoldRow:
    method: str
    hypothesis: str
    setting: str
    alpha: float | None
    beta: float | None
    fold: int
    rmse: float
    ndcg10: float
    realized_mean_ratio: float | None = None
    private_fraction: float | None = None
    K: int | None = None
    z: int | None = None
    R: int | None = None
    aux_bytes_formula: int | None = None
    aux_bytes_payload: int | None = None
    train_seed: int | None = None
    partition_seed: int | None = None
    error: str = ""
    seconds: float = field(default=0.0, compare=False)

    @property
    def ok(self) -> bool:
        return not self.error


CSV_FIELDS = [f for f in FoldRow.__dataclass_fields__ if f != "seconds"]


@dataclass
class RunReport:
    """Fold-aggregated results for one (method, hypothesis, privacy setting)."""

    method: str
    hypothesis: str
    setting: str
    alpha: float | None
    beta: float | None
    folds: list
    fold_rmse: list
    fold_ndcg10: list
    realized_mean_ratio: float | None
    train_seeds: list
    partition_seeds: list
    aux_bytes_formula: int | None
    aux_bytes_payload: int | None
    errors: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.fold_rmse)) if self.fold_rmse else math.nan

    @property
    def rmse_std(self) -> float:
        return float(np.std(self.fold_rmse, ddof=1)) if len(self.fold_rmse) > 1 else 0.0

    @property
    def ndcg_mean(self) -> float:
        return float(np.mean(self.fold_ndcg10)) if self.fold_ndcg10 else math.nan

    @property
    def ndcg_std(self) -> float:
        return float(np.std(self.fold_ndcg10, ddof=1)) if len(self.fold_ndcg10) > 1 else 0.0

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("seconds")
        out.update(
            n_folds=len(self.fold_rmse),
            rmse_mean=self.rmse_mean,
            rmse_std=self.rmse_std,
            ndcg10_mean=self.ndcg_mean,
            ndcg10_std=self.ndcg_std,
        )
        return out


@dataclass
class ExperimentResult:
    rows: list
    reports: list
    digests: list

    def report(self, method: str, hypothesis: str = "-", setting: str = "-") -> RunReport:
        for r in self.reports:
            if (r.method, r.hypothesis, r.setting) == (method, hypothesis, setting):
                return r
        raise KeyError((method, hypothesis, setting))

    def fold_rmse(self, method: str, hypothesis: str = "-", setting: str = "-") -> dict:
        return {
            r.fold: r.rmse
            for r in self.rows
            if (r.method, r.hypothesis, r.setting) == (method, hypothesis, setting) and r.ok
        }


# ---------------------------------------------------------------- privacy digest


def _feed(h, tag: str, payload: bytes) -> None:
    tag_b = tag.encode()
    h.update(struct.pack("<I", len(tag_b)) + tag_b + struct.pack("<Q", len(payload)) + payload)


def _dataset_bytes(ds: RatingsDataset) -> bytes:
    ids = "\x1f".join(map(str, ds.user_ids.tolist())) + "\x1e" + "\x1f".join(map(str, ds.item_ids.tolist()))
    head = struct.pack("<QQdd", ds.n_users, ds.n_items, *ds.scale)
    arrays = (ds.users.astype("<i8"), ds.items.astype("<i8"), ds.values.astype("<f8"))
    return head + b"".join(a.tobytes() for a in arrays) + ids.encode()


def privacy_digest(server: RecommenderServer) -> str:
    """SHA-256 over a canonical serialization of everything the server holds."""
    h = hashlib.sha256()
    _feed(h, "public", _dataset_bytes(server.public))
    _feed(h, "model", encode_model(server.model))
    if server.joint is not None:
        j = server.joint
        arrays = (np.array([j.mu]), j.user_bias, j.user_vec, j.item_bias, j.C, j.item_weights)
        _feed(h, "joint", b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays))
    for name in sorted(server.aux):
        _feed(h, f"aux:{name}", encode_aux(server.aux[name]))
    _feed(h, "requests", json.dumps(server.request_log).encode())
    return h.hexdigest()


# ---------------------------------------------------------------- per-fold work


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _finish(preds, test: RatingsDataset, clamp: bool):
    if clamp:
        preds = np.clip(preds, *test.scale)
    return rmse(preds, test.values), ndcg_at_10(test.users, test.values, preds)


def _cluster_aux(model: PublicModel, K: int, params: dict, seed: int):
    cp = params["cluster"]
    return build_aux(model, CLUSTER, K=K, bloom=bool(cp["bloom"]), seed=seed, fp_rate=float(cp["fp_rate"]))


def build_server(public: RatingsDataset, hp: Hyperparams, methods, params: dict, model: PublicModel | None = None):
    """Train everything the server needs for the requested SP2 variants and publish the aux data."""
    server = RecommenderServer(public, model) if model is not None else RecommenderServer.fit(public, hp)
    if NAIVE in methods:
        server.publish(NAIVE, build_aux(server.model, NAIVE))
    if CLUSTER in methods:
        server.publish(CLUSTER, _cluster_aux(server.model, int(params["cluster"]["K"]), params, hp.seed))
    if JOINT in methods:
        jp = params["joint"]
        server.joint = train_joint(public, hp, int(jp["z"]), init_std=float(jp["init_std"]))
        server.publish(JOINT, build_aux(server.joint, JOINT, R=int(jp["R"])))
    return server


def device_predictions(
    server: RecommenderServer,
    partition: PrivacyPartition,
    test: RatingsDataset,
    name: str,
    hp: Hyperparams,
    device_epochs: int | None = None,
) -> np.ndarray:
    """Every test user fine-tunes on their own device and predicts their own test items.

    Users without private ratings run zero epochs and so keep their public factor.
    """
    aux = server.aux[name]
    sha = hashlib.sha256(encode_aux(aux)).hexdigest()
    if aux.variant == JOINT:
        user_bias, user_vec = server.joint.user_bias, server.joint.user_vec
    else:
        user_bias, user_vec = server.model.user_bias, server.model.user_vec
    private = partition.private_per_user
    empty = partition.private.subset(np.zeros(len(partition.private), dtype=bool))
    preds = np.empty(len(test))
    order = np.argsort(test.users, kind="stable")
    users = test.users[order]
    starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
    ends = np.r_[starts[1:], len(users)]
    for a, b in zip(starts.tolist(), ends.tolist()):
        u = int(users[a])
        idx = order[a:b]
        # the checksum is verified once; every device receives the same bytes
        ctx = DeviceContext(
            u,
            float(user_bias[u]),
            user_vec[u],
            aux,
            private.get(u, empty),
            hp,
            epochs=device_epochs,
            aux_sha256=sha if a == 0 else None,
        )
        preds[idx] = predict_items(train_private(ctx), test.items[idx])
    return preds


def aux_sizes(aux, k: int, fp_rate: float = 0.01) -> tuple[int, int]:
    """(formula bytes, bytes actually held) for a published aux object."""
    if aux.variant == NAIVE:
        formula = aux_size_bytes(NAIVE, k, aux.n_items)
    elif aux.variant == CLUSTER:
        bits = default_bloom_bits(fp_rate) if aux.bloom else None
        formula = aux_size_bytes(CLUSTER, k, aux.n_items, K=aux.K, bloom_bits_per_item=bits)
    else:
        formula = aux_size_bytes(JOINT, k, aux.n_items, z=aux.z, R=aux.R)
    return formula, payload_bytes(aux)


def evaluate_unpartitioned(fold: FoldSplit, method: str, hp: Hyperparams, params: dict, seed: int, clamp: bool):
    train, test = fold.train, fold.test
    if method == C.ABS_OPTIMISTIC:
        model = abs_optimistic(train, hp)
    elif method == C.ABS_PESSIMISTIC:
        model = abs_pessimistic(train)
    elif method == C.DP:
        dp = params["dp"]
        model = dp_baseline(train, DPConfig(int(dp["beta_m"]), float(dp["noise_sigma"]), seed), hp)
    else:
        sh = params["shokri"]
        cfg = ObfuscationConfig(
            method.rsplit("_", 1)[1].upper(),
            int(sh["n_peers"]),
            int(sh["ratings_per_peer"]),
            float(sh["max_fraction"]),
            sh["similarity"],
            seed,
        )
        model = obfuscation_baseline(train, cfg, hp)
    return _finish(model.predict_many(test.users, test.items), test, clamp)


def evaluate_partition(
    fold: FoldSplit,
    partition: PrivacyPartition,
    methods,
    hp: Hyperparams,
    params: dict,
    clamp: bool,
    device_epochs: int | None = None,
) -> tuple[dict, str | None]:
    """Score only-public and the SP2 variants on one partition.

    Returns ({method: (rmse, ndcg, sizes) or an Exception}, server digest). The
    digest is taken before and after the device phase; a mismatch raises.
    """
    test = fold.test
    out: dict = {}
    sp2 = [m for m in methods if m in C.SP2_METHODS]
    if len(partition.public) == 0:
        if C.ONLY_PUBLIC in methods:
            model = only_public(partition, hp)
            out[C.ONLY_PUBLIC] = (*_finish(model.predict_many(test.users, test.items), test, clamp), None)
        for m in sp2:
            out[m] = RuntimeError("no public ratings: the server has nothing to train on")
        return out, None
    server = build_server(partition.public, hp, sp2, params)
    if C.ONLY_PUBLIC in methods:
        out[C.ONLY_PUBLIC] = (*_finish(server.model.predict_many(test.users, test.items), test, clamp), None)
    before = privacy_digest(server)
    fp_rate = float(params["cluster"]["fp_rate"])
    for variant in sp2:
        try:
            preds = device_predictions(server, partition, test, variant, hp, device_epochs)
            out[variant] = (*_finish(preds, test, clamp), aux_sizes(server.aux[variant], hp.k, fp_rate))
        except Exception as exc:  # labeled entry; the other methods still run
            log.error("fold %d %s failed: %s", fold.fold_index, variant, exc)
            out[variant] = exc
    after = privacy_digest(server)
    if before != after:
        raise PrivacyViolation(f"fold {fold.fold_index}: server state changed during the device phase")
    return out, before


def _error_text(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def run_fold(fold: FoldSplit, cfg: C.ExperimentConfig, settings: list) -> tuple[list, list]:
    """All configured methods on one fold; failures become labeled rows with NaN metrics."""
    rows, digests = [], []
    train_seed = derive_seed(cfg.seed, fold.fold_index)
    hp = cfg.hyperparams(seed=train_seed)
    params = cfg.raw["methods"]
    for method in cfg.methods:
        if method not in C.UNPARTITIONED:
            continue
        t0 = time.perf_counter()
        row = FoldRow(method, "-", "-", None, None, fold.fold_index, math.nan, math.nan, train_seed=train_seed)
        try:
            row.rmse, row.ndcg10 = evaluate_unpartitioned(fold, method, hp, params, train_seed, cfg.clamp)
        except Exception as exc:
            log.error("fold %d %s failed: %s", fold.fold_index, method, exc)
            row.error = _error_text(exc)
        row.seconds = time.perf_counter() - t0
        rows.append(row)
    partitioned = [m for m in cfg.methods if m in C.PARTITIONED]
    if not partitioned:
        return rows, digests
    jp = params["joint"]
    for setting in settings:
        part_seed = derive_seed(cfg.seed, fold.fold_index, *setting.code())
        a, b = setting.alpha_beta
        t0 = time.perf_counter()
        partition = None
        try:
            partition = setting.allocate(fold.train, part_seed)
            partition.check()
            results, digest = evaluate_partition(fold, partition, partitioned, hp, params, cfg.clamp, cfg.device_epochs)
        except PrivacyViolation:
            raise
        except Exception as exc:
            log.error("fold %d %s failed: %s", fold.fold_index, setting.label, exc)
            results, digest = {m: exc for m in partitioned}, None
        if digest is not None:
            digests.append(digest)
        elapsed = time.perf_counter() - t0
        for method in partitioned:
            row = FoldRow(
                method, setting.hypothesis, setting.label, a, b, fold.fold_index, math.nan, math.nan,
                train_seed=train_seed, partition_seed=part_seed, seconds=elapsed,
            )
            if partition is not None:
                row.realized_mean_ratio = partition.realized_mean_ratio
                row.private_fraction = partition.private_fraction
            if method == C.CLUSTER:
                row.K = int(params["cluster"]["K"])
            if method == C.JOINT:
                row.z, row.R = int(jp["z"]), int(jp["R"])
            result = results[method]
            if isinstance(result, BaseException):
                row.error = _error_text(result)
            else:
                row.rmse, row.ndcg10, sizes = result
                if sizes:
                    row.aux_bytes_formula, row.aux_bytes_payload = sizes
            rows.append(row)
    return rows, digests


def aggregate(rows: list) -> list:
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.method, row.hypothesis, row.setting), []).append(row)
    reports = []
    for (method, hyp, setting), rs in groups.items():
        rs = sorted(rs, key=lambda r: r.fold)
        good = [r for r in rs if r.ok]
        ratios = [r.realized_mean_ratio for r in rs if r.realized_mean_ratio is not None]
        sized = next((r for r in good if r.aux_bytes_formula is not None), None)
        reports.append(
            RunReport(
                method, hyp, setting, rs[0].alpha, rs[0].beta,
                [r.fold for r in good],
                [r.rmse for r in good],
                [r.ndcg10 for r in good],
                float(np.mean(ratios)) if ratios else None,
                [r.train_seed for r in rs],
                [r.partition_seed for r in rs],
                sized.aux_bytes_formula if sized else None,
                sized.aux_bytes_payload if sized else None,
                [f"fold {r.fold}: {r.error}" for r in rs if not r.ok],
                sum(r.seconds for r in rs),
            )
        )
    return reports


def load_dataset(cfg: C.ExperimentConfig) -> RatingsDataset:
    loader = load_tsv if cfg.dataset_format == "tsv" else load_csv
    return loader(cfg.dataset_path)


def default_settings(cfg: C.ExperimentConfig) -> list:
    return [PrivacySetting(h, b) for h in cfg.hypotheses for b in cfg.betas]


def sweep_settings(cfg: C.ExperimentConfig) -> list:
    sw = cfg.raw["sweep"]
    conc = float(sw["concentration"])
    return [PrivacySetting.for_mean(h, float(r), conc) for h in cfg.hypotheses for r in sw["ratios"]]


def preflight(cfg: C.ExperimentConfig, dataset: RatingsDataset) -> None:
    problems = [p for p in cfg.validate(dataset.n_users, dataset.n_items, len(dataset)) if not p.startswith("dataset not found")]
    if problems:
        raise ValueError("invalid configuration:\n  " + "\n  ".join(problems))


def _map_folds(fn, folds, cfg, *args):
    if cfg.threads > 1 and len(folds) > 1:
        n = len(folds)
        with ProcessPoolExecutor(min(cfg.threads, n)) as pool:
            return list(pool.map(fn, folds, [cfg] * n, *[[a] * n for a in args]))
    return [fn(f, cfg, *args) for f in folds]


def run_experiment(cfg: C.ExperimentConfig, dataset: RatingsDataset | None = None, settings: list | None = None) -> ExperimentResult:
    """Run every configured method on every fold and privacy setting."""
    dataset = load_dataset(cfg) if dataset is None else dataset
    preflight(cfg, dataset)
    settings = default_settings(cfg) if settings is None else settings
    results = _map_folds(run_fold, kfold(dataset, cfg.n_folds, cfg.seed), cfg, settings)
    rows = [r for fold_rows, _ in results for r in fold_rows]
    digests = [d for _, ds in results for d in ds]
    return ExperimentResult(rows, aggregate(rows), digests)


def privacy_sweep(cfg: C.ExperimentConfig, dataset: RatingsDataset | None = None) -> ExperimentResult:
    """The configured methods at each target mean privacy ratio of the sweep grid."""
    dataset = load_dataset(cfg) if dataset is None else dataset
    return run_experiment(cfg, dataset, sweep_settings(cfg))


# ---------------------------------------------------------------- cluster-count ablation


@dataclass
class AblationRow:
    K: int
    method: str
    fold: int
    rmse: float
    ndcg10: float
    aux_bytes_formula: int
    aux_bytes_payload: int
    seconds: float = field(default=0.0, compare=False)


ABLATION_FIELDS = [f for f in AblationRow.__dataclass_fields__ if f != "seconds"]


def ablation_fold(fold: FoldSplit, cfg: C.ExperimentConfig, setting: PrivacySetting, Ks: list) -> list:
    """One public model per fold; for each K a cluster aux and a joint model with z = K.

    Naive and only-public do not depend on K and are repeated on every K row so
    the table is plot-ready. Joint is skipped above ``ablation.joint_max_z``.
    """
    train_seed = derive_seed(cfg.seed, fold.fold_index)
    hp = cfg.hyperparams(seed=train_seed)
    params = cfg.raw["methods"]
    joint_max = int(cfg.raw["ablation"].get("joint_max_z", 200))
    fp_rate = float(params["cluster"]["fp_rate"])
    partition = setting.allocate(fold.train, derive_seed(cfg.seed, fold.fold_index, *setting.code()))
    test = fold.test
    base = build_server(partition.public, hp, [NAIVE], params)
    base_digest = privacy_digest(base)
    t0 = time.perf_counter()
    naive = _finish(device_predictions(base, partition, test, NAIVE, hp, cfg.device_epochs), test, cfg.clamp)
    naive_sizes = aux_sizes(base.aux[NAIVE], hp.k, fp_rate)
    naive_secs = time.perf_counter() - t0
    public = _finish(base.model.predict_many(test.users, test.items), test, cfg.clamp)
    if privacy_digest(base) != base_digest:
        raise PrivacyViolation(f"fold {fold.fold_index}: server state changed during the device phase")
    rows = []
    for K in Ks:
        rows.append(AblationRow(K, C.NAIVE, fold.fold_index, *naive, *naive_sizes, naive_secs))
        rows.append(AblationRow(K, C.ONLY_PUBLIC, fold.fold_index, *public, 0, 0))
        methods = [CLUSTER] + ([JOINT] if K <= joint_max else [])
        for method in methods:
            t0 = time.perf_counter()
            server = RecommenderServer(partition.public, base.model)
            if method == CLUSTER:
                server.publish(CLUSTER, _cluster_aux(base.model, K, params, hp.seed))
            else:
                server.joint = train_joint(partition.public, hp, K, init_std=float(params["joint"]["init_std"]))
                server.publish(JOINT, build_aux(server.joint, JOINT, R=min(int(params["joint"]["R"]), K)))
            before = privacy_digest(server)
            scores = _finish(device_predictions(server, partition, test, method, hp, cfg.device_epochs), test, cfg.clamp)
            if privacy_digest(server) != before:
                raise PrivacyViolation(f"fold {fold.fold_index}: server state changed during the device phase")
            sizes = aux_sizes(server.aux[method], hp.k, fp_rate)
            rows.append(AblationRow(K, method, fold.fold_index, *scores, *sizes, time.perf_counter() - t0))
    return rows


def ablate_clusters(
    cfg: C.ExperimentConfig,
    dataset: RatingsDataset | None = None,
    Ks: list | None = None,
    setting: PrivacySetting | None = None,
) -> list:
    """Cluster-count ablation under the first configured hypothesis and beta."""
    dataset = load_dataset(cfg) if dataset is None else dataset
    preflight(cfg, dataset)
    Ks = [int(K) for K in (cfg.raw["ablation"]["K"] if Ks is None else Ks)]
    bad = [K for K in Ks if not 1 <= K <= dataset.n_items]
    if bad:
        raise ValueError(f"ablation K values {bad} outside [1, {dataset.n_items}]")
    setting = PrivacySetting(cfg.hypotheses[0], cfg.betas[0]) if setting is None else setting
    results = _map_folds(ablation_fold, kfold(dataset, cfg.n_folds, cfg.seed), cfg, setting, Ks)
    return [r for fold_rows in results for r in fold_rows]


# ---------------------------------------------------------------- output


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def table_csv(rows: list, fields: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row[f] if isinstance(row, dict) else getattr(row, f)) for f in fields])
    return buf.getvalue()


def rows_csv(rows: list) -> str:
    return table_csv(rows, CSV_FIELDS)


def summary_json(result: ExperimentResult) -> str:
    doc = {"schema": REPORT_SCHEMA, "reports": [r.to_json() for r in result.reports]}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


SWEEP_FIELDS = ["hypothesis", "target_ratio", "realized_mean_ratio", "method", "rmse_mean", "rmse_std", "ndcg10_mean", "ndcg10_std"]


def sweep_table(result: ExperimentResult, cfg: C.ExperimentConfig) -> list[dict]:
    """(ratio, method) table; methods that ignore the partition repeat at every ratio."""
    fixed = [r for r in result.reports if r.hypothesis == "-"]
    out = []
    for setting in sweep_settings(cfg):
        here = [r for r in result.reports if (r.hypothesis, r.setting) == (setting.hypothesis, setting.label)]
        realized = next((r.realized_mean_ratio for r in here if r.realized_mean_ratio is not None), None)
        for r in fixed + here:
            out.append(
                {
                    "hypothesis": setting.hypothesis,
                    "target_ratio": setting.target,
                    "realized_mean_ratio": realized,
                    "method": r.method,
                    "rmse_mean": r.rmse_mean,
                    "rmse_std": r.rmse_std,
                    "ndcg10_mean": r.ndcg_mean,
                    "ndcg10_std": r.ndcg_std,
                }
            )
    return out


ABLATION_SUMMARY_FIELDS = ["K", "method", "rmse_mean", "rmse_std", "ndcg10_mean", "aux_bytes_formula", "aux_bytes_payload"]


def ablation_table(rows: list) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.K, r.method), []).append(r)
    out = []
    for (K, method), rs in sorted(groups.items()):
        rm = [r.rmse for r in rs]
        out.append(
            {
                "K": K,
                "method": method,
                "rmse_mean": float(np.mean(rm)),
                "rmse_std": float(np.std(rm, ddof=1)) if len(rm) > 1 else 0.0,
                "ndcg10_mean": float(np.mean([r.ndcg10 for r in rs])),
                "aux_bytes_formula": rs[0].aux_bytes_formula,
                "aux_bytes_payload": rs[0].aux_bytes_payload,
            }
        )
    return out


def dataset_sha256(dataset: RatingsDataset) -> str:
    return hashlib.sha256(_dataset_bytes(dataset)).hexdigest()


def build_manifest(cfg: C.ExperimentConfig, dataset: RatingsDataset, files: dict, extra: dict | None = None) -> dict:
    import numba
    import scipy

    doc = {
        "schema": REPORT_SCHEMA,
        "command": None,
        "config": cfg.raw,
        "seed": cfg.seed,
        "dataset": {
            "sha256": dataset_sha256(dataset),
            "n_ratings": len(dataset),
            "n_users": dataset.n_users,
            "n_items": dataset.n_items,
        },
        "versions": {
            "sp2rec": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
        "notes": [
            "predictions are unclamped unless clamp_predictions is set",
            "NDCG@10 ranks each user's test items only; gain is the raw rating",
            "sweep points use a mean-matched beta with fixed concentration; 0 and 1 are fixed ratios",
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def write_files(outdir, cfg: C.ExperimentConfig, dataset: RatingsDataset, files: dict, command: str, extra=None) -> dict:
    """Write text files plus a manifest hashing each of them."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (outdir / name).write_text(text)
    manifest = build_manifest(cfg, dataset, files, extra)
    manifest["command"] = command
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def write_run(outdir, cfg, dataset, result: ExperimentResult, command: str = "run") -> dict:
    files = {"results.csv": rows_csv(result.rows), "summary.json": summary_json(result)}
    return write_files(outdir, cfg, dataset, files, command, {"privacy_digests": result.digests})


def write_sweep(outdir, cfg, dataset, result: ExperimentResult) -> dict:
    files = {
        "results.csv": rows_csv(result.rows),
        "summary.json": summary_json(result),
        "sweep.csv": table_csv(sweep_table(result, cfg), SWEEP_FIELDS),
    }
    return write_files(outdir, cfg, dataset, files, "privacy-sweep", {"privacy_digests": result.digests})


def write_ablation(outdir, cfg, dataset, rows: list) -> dict:
    files = {
        "ablation_folds.csv": table_csv(rows, ABLATION_FIELDS),
        "ablation.csv": table_csv(ablation_table(rows), ABLATION_SUMMARY_FIELDS),
    }
    return write_files(outdir, cfg, dataset, files, "ablate-clusters")
