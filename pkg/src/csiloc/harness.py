"""Experiment orchestration: specs, comparison runs, sweeps, reports.

Every command writes a manifest.json next to its artifacts carrying the spec
digest, the resolved scenario digests, and the seed, so any report row can be
traced back to exact inputs. Runs are deterministic for a given (spec, seed).
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import generate_dataset
from .datasetio import load_dataset, save_dataset
from .embedding import AutoencoderConfig, GraphAutoencoder, embed_graphs, train_autoencoder
from .errors import ConfigError, DataError
from .estimators import (GnnLocalizer, PooledMetaLocalizer, RandomInitLocalizer,
                         ScenarioData, SimilarityGuidedLocalizer)
from .gnn import GraphLocalizerModel
from .graph import graph_samples_from_dataset
from .meta import ScenarioBank, select_scenario
from .metrics import MetricsRecord, evaluate
from .params import ParamSet
from .presets import preset, preset_names
from .scenario import ScenarioConfig

METHODS = ("sim_meta", "pooled_meta", "random_init", "plain_gnn")
SWEEP_AXES = ("bandwidths", "ap_counts", "antennas", "rp_spacings",
              "finetune_sample_counts", "methods")

_SPEC_KEYS = {"name", "historical", "new_scenario", "seeds", "budgets", "meta",
              "arch", "embed", "baselines", "sweep"}
_BUDGET_KEYS = {"train_samples_per_rp", "finetune_samples_per_rp", "test_samples_per_rp"}


@dataclass
class ExperimentSpec:
    name: str
    historical: list
    new_scenario: object
    seeds: list
    budgets: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    embed: dict = field(default_factory=dict)
    baselines: tuple = METHODS
    sweep: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment spec: seeds must be non-empty")
        self.seeds = [int(s) for s in self.seeds]
        self.baselines = tuple(self.baselines)
        unknown = set(self.baselines) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}; choose from {METHODS}")
        unknown = set(self.budgets) - _BUDGET_KEYS
        if unknown:
            raise ConfigError(f"unknown budget keys {sorted(unknown)}")
        unknown = set(self.sweep) - set(SWEEP_AXES) - {"method", "train_scenario",
                                                       "test_scenario"}
        if unknown:
            raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
        for ref in list(self.historical) + [self.new_scenario]:
            self.resolve(ref)   # fails fast on bad refs / missing files

    @property
    def train_samples_per_rp(self):
        return int(self.budgets.get("train_samples_per_rp", 6))

    @property
    def finetune_samples_per_rp(self):
        return int(self.budgets.get("finetune_samples_per_rp", 2))

    @property
    def test_samples_per_rp(self):
        return int(self.budgets.get("test_samples_per_rp", 4))

    def resolve(self, ref):
        """Scenario ref -> ScenarioConfig: preset name, file path, preset dict
        with overrides, or inline config dict."""
        if isinstance(ref, ScenarioConfig):
            return ref
        if isinstance(ref, str):
            if ref in preset_names():
                return preset(ref)
            path = self.base_dir / ref
            if not path.exists():
                raise ConfigError(f"scenario reference {ref!r}: no such preset or file")
            return ScenarioConfig.load(path)
        if isinstance(ref, dict):
            if "preset" in ref:
                extra = set(ref) - {"preset", "overrides"}
                if extra:
                    raise ConfigError(f"preset reference: unknown keys {sorted(extra)}")
                return preset(ref["preset"], **ref.get("overrides", {}))
            return ScenarioConfig.from_dict(ref)
        raise ConfigError(f"bad scenario reference of type {type(ref).__name__}")

    def to_dict(self):
        return {"name": self.name, "historical": self.historical,
                "new_scenario": self.new_scenario, "seeds": self.seeds,
                "budgets": self.budgets, "meta": self.meta, "arch": self.arch,
                "embed": self.embed, "baselines": list(self.baselines),
                "sweep": self.sweep}

    def digest(self):
        import hashlib
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d, base_dir="."):
        unknown = set(d) - _SPEC_KEYS
        if unknown:
            raise ConfigError(f"experiment spec: unknown keys {sorted(unknown)}")
        missing = {"name", "historical", "new_scenario", "seeds"} - set(d)
        if missing:
            raise ConfigError(f"experiment spec: missing keys {sorted(missing)}")
        return cls(base_dir=Path(base_dir), **d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"{path}: spec file not found") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(d, base_dir=path.parent)


TEST_COUNTER_OFFSET = 1_000_000
SUPPORT_COUNTER_OFFSET = 2_000_000


def reseed(cfg, salt):
    """Derive a fresh environment realization of the same scenario family.

    The seed drives the link geometry, so reseeding yields a new room
    instance; splits of ONE instance use disjoint sample-counter offsets
    instead.
    """
    d = cfg.to_dict()
    d["seed"] = (cfg.seed * 1000003 + 7919 * (salt + 1)) % (2 ** 31 - 1)
    return ScenarioConfig.from_dict(d)


def graph_data(cfg, samples_per_rp, counter_offset=0):
    """Generate, clean, and bundle one scenario into GraphSamples."""
    return graph_samples_from_dataset(
        generate_dataset(cfg, samples_per_rp, counter_offset=counter_offset))


def write_manifest(out_dir, payload):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path_dir):
    path = Path(path_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"{path_dir}: missing manifest.json")
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# method construction


def _arch_kwargs(spec):
    return dict(spec.arch)


def make_estimator(spec, method, seed):
    """Spec dicts feed sklearn-style constructors; `plain_*` keys configure
    the no-meta baseline trainer separately from the meta loop."""
    arch = _arch_kwargs(spec)
    meta = dict(spec.meta)
    plain = {"lr": meta.pop("lr", 0.02),
             "epochs": meta.pop("plain_epochs", meta.get("epochs", 60)),
             "batch_size": meta.pop("batch_size", 8),
             "loss_reduction": meta.get("loss_reduction", "sum")}
    if method == "plain_gnn":
        return GnnLocalizer(seed=seed, **arch, **plain)
    if method == "sim_meta":
        return SimilarityGuidedLocalizer(seed=seed, **arch, **meta, **dict(spec.embed))
    if method == "pooled_meta":
        return PooledMetaLocalizer(seed=seed, **arch, **meta)
    if method == "random_init":
        keep = {k: v for k, v in meta.items()
                if k in ("inner_lr", "finetune_steps", "loss_reduction")}
        return RandomInitLocalizer(seed=seed, **arch, **keep)
    raise ConfigError(f"unknown method {method!r}")


def historical_scenario_data(spec, seed):
    out = []
    for ref in spec.historical:
        cfg = reseed(spec.resolve(ref), seed)
        out.append(ScenarioData(
            name=ref if isinstance(ref, str) else cfg.digest()[:12],
            graphs=graph_data(cfg, spec.train_samples_per_rp),
            room_extent=cfg.room_extent, config_digest=cfg.digest()))
    return out


def union_extent(extents):
    arr = np.array([list(e) for e in extents])
    return tuple(float(v) for v in arr.max(axis=0))


def run_comparison(spec, seed, methods=None, support_count=None):
    """Train each requested method and evaluate it on the new scenario.

    Meta methods adapt on a small support set drawn from the new scenario;
    the plain GNN is trained on pooled historical data and evaluated
    zero-shot, mirroring the no-meta baseline.
    """
    methods = tuple(methods or spec.baselines)
    new_cfg = reseed(spec.resolve(spec.new_scenario), seed)
    support = graph_data(new_cfg, support_count or spec.finetune_samples_per_rp,
                         counter_offset=SUPPORT_COUNTER_OFFSET)
    test = graph_data(new_cfg, spec.test_samples_per_rp,
                      counter_offset=TEST_COUNTER_OFFSET)
    historical = historical_scenario_data(spec, seed)

    results = {}
    for method in methods:
        est = make_estimator(spec, method, seed)
        if method == "plain_gnn":
            pooled = [g for scen in historical for g in scen.graphs]
            est.room_extent = union_extent(
                [s.room_extent for s in historical] + [new_cfg.room_extent])
            est.fit(pooled)
        elif method == "random_init":
            est.adapt(support, room_extent=new_cfg.room_extent)
        else:
            est.fit(historical)
            est.adapt(support, room_extent=new_cfg.room_extent)
        prov = {"method": method, "seed": seed, "spec_digest": spec.digest(),
                "scenario_digest": new_cfg.digest()}
        if hasattr(est, "selected_scenario_"):
            prov["selected_scenario"] = int(est.selected_scenario_)
        results[method] = evaluate(est, test, provenance=prov)
    return results


# ---------------------------------------------------------------------------
# device sweeps


def _sweep_scenarios(spec, axis, value):
    """Train/test scenario pair for one sweep point."""
    train_ref = spec.sweep.get("train_scenario", "scen1")
    test_ref = spec.sweep.get("test_scenario", "scen1_obstacle")
    overrides = {}
    if axis == "bandwidths":
        overrides["bandwidth"] = int(value)
    elif axis == "ap_counts":
        overrides["ap_count"] = int(value)
    elif axis == "antennas":
        n_tx, n_rx = value
        overrides.update(n_tx=int(n_tx), n_rx=int(n_rx))
    elif axis == "rp_spacings":
        overrides["rp_spacing"] = float(value)
    else:
        raise ConfigError(f"axis {axis!r} has no scenario override")

    def apply(ref):
        if isinstance(ref, str) and ref in preset_names():
            return preset(ref, **overrides)
        cfg = spec.resolve(ref)
        d = cfg.to_dict()
        if "rp_spacing" in overrides:
            d["rp_spacing"] = overrides["rp_spacing"]
        if "n_rx" in overrides:
            d["n_rx"] = overrides["n_rx"]
        for ap in d["aps"]:
            if "bandwidth" in overrides:
                ap["bandwidth_mhz"] = overrides["bandwidth"]
            if "n_tx" in overrides:
                ap["n_tx"] = overrides["n_tx"]
        if "ap_count" in overrides:
            d["aps"] = d["aps"][:overrides["ap_count"]]
        return ScenarioConfig.from_dict(d)

    return apply(train_ref), apply(test_ref)


def run_sweep_point(spec, axis, value, seed):
    """One (axis value, seed) cell: within-scenario-pair train/test."""
    if axis == "methods":
        rec = run_comparison(spec, seed, methods=(value,))[value]
    elif axis == "finetune_sample_counts":
        results = run_comparison(spec, seed, methods=("sim_meta",),
                                 support_count=int(value))
        rec = results["sim_meta"]
    else:
        train_cfg, test_cfg = _sweep_scenarios(spec, axis, value)
        method = spec.sweep.get("method", "plain_gnn")
        est = make_estimator(spec, method, seed)
        # same salt: scen1/scen1_obstacle style pairs keep identical geometry
        train = graph_data(reseed(train_cfg, seed), spec.train_samples_per_rp)
        test = graph_data(reseed(test_cfg, seed), spec.test_samples_per_rp,
                          counter_offset=TEST_COUNTER_OFFSET)
        if method == "plain_gnn":
            est.room_extent = union_extent([train_cfg.room_extent, test_cfg.room_extent])
            est.fit(train)
        else:
            data = ScenarioData(name="sweep", graphs=train,
                                room_extent=train_cfg.room_extent)
            est.fit([data])
            est.adapt(graph_data(reseed(test_cfg, seed),
                                 spec.finetune_samples_per_rp,
                                 counter_offset=SUPPORT_COUNTER_OFFSET),
                      room_extent=test_cfg.room_extent)
        rec = evaluate(est, test)
    rec.provenance.update({"axis": axis, "value": value, "seed": seed,
                           "spec_digest": spec.digest()})
    return rec


def _sweep_worker(args):
    spec_dict, base_dir, axis, value, seed = args
    spec = ExperimentSpec.from_dict(spec_dict, base_dir=base_dir)
    return axis, value, seed, run_sweep_point(spec, axis, value, seed).to_dict()


def run_sweep(spec, out_dir, jobs=1):
    """All configured sweep axes x seeds; one metrics.json per cell."""
    out_dir = Path(out_dir)
    cells = [(axis, value, seed)
             for axis in SWEEP_AXES if axis in spec.sweep
             for value in spec.sweep[axis]
             for seed in spec.seeds]
    if not cells:
        raise ConfigError("spec.sweep configures no axes")
    if jobs > 1:
        args = [(spec.to_dict(), str(spec.base_dir), a, v, s) for a, v, s in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_sweep_worker, args))
        records = [(a, v, s, MetricsRecord.from_dict(d)) for a, v, s, d in outputs]
    else:
        records = [(a, v, s, run_sweep_point(spec, a, v, s)) for a, v, s in cells]
    written = []
    for axis, value, seed, rec in records:
        slug = "x".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
        cell_dir = out_dir / "sweep" / axis / slug / f"seed{seed}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        rec.save(cell_dir / "metrics.json")
        written.append(str(cell_dir / "metrics.json"))
    write_manifest(out_dir, {"command": "sweep", "spec_digest": spec.digest(),
                             "spec": spec.to_dict(), "outputs": written})
    return records


# ---------------------------------------------------------------------------
# reports


_AXIS_FILES = {
    "bandwidths": ("error_vs_bandwidth.csv", "bandwidth_mhz"),
    "ap_counts": ("error_vs_ap_count.csv", "ap_count"),
    "antennas": ("error_vs_antennas.csv", "antenna_config"),
    "rp_spacings": ("error_vs_rp_spacing.csv", "rp_spacing_m"),
    "finetune_sample_counts": ("error_vs_finetune_samples.csv", "support_samples_per_rp"),
}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_reports(runs_dir, out_dir):
    """Aggregate metrics records under runs_dir into plot-ready CSV tables."""
    runs_dir, out_dir = Path(runs_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    sweep_root = runs_dir / "sweep"
    if sweep_root.exists():
        for axis, (fname, key) in _AXIS_FILES.items():
            axis_dir = sweep_root / axis
            if not axis_dir.exists():
                continue
            rows = []
            for mfile in sorted(axis_dir.glob("*/seed*/metrics.json")):
                rec = MetricsRecord.load(mfile)
                rows.append([rec.provenance.get("value"), rec.provenance.get("seed"),
                             f"{rec.mean_error:.6f}", f"{rec.std_error:.6f}"])
            if rows:
                _write_csv(out_dir / fname, [key, "seed", "mean_error_m", "std_error_m"],
                           rows)
                written.append(fname)

    method_files = sorted(runs_dir.glob("comparison/seed*/*.metrics.json"))
    method_files += sorted(runs_dir.glob("sweep/methods/*/seed*/metrics.json"))
    if method_files:
        rows = []
        for mfile in method_files:
            rec = MetricsRecord.load(mfile)
            method = rec.provenance.get("method", rec.provenance.get("value"))
            rows.append([method, rec.provenance.get("seed"),
                         f"{rec.mean_error:.6f}", f"{rec.std_error:.6f}"])
        _write_csv(out_dir / "method_comparison.csv",
                   ["method", "seed", "mean_error_m", "std_error_m"], rows)
        summary = {}
        for method, _, mean, std in rows:
            summary.setdefault(method, []).append(float(mean))
        _write_csv(out_dir / "method_comparison_summary.csv",
                   ["method", "runs", "mean_error_m"],
                   [[m, len(v), f"{np.mean(v):.6f}"] for m, v in sorted(summary.items())])
        written += ["method_comparison.csv", "method_comparison_summary.csv"]
    if not written:
        raise DataError(f"{runs_dir}: no metrics records found to report")
    write_manifest(out_dir, {"command": "report", "inputs": str(runs_dir),
                             "outputs": written})
    return written


def run_comparison_to_dir(spec, out_dir, seeds=None):
    """Comparison runs for several seeds, persisted for `report`."""
    out_dir = Path(out_dir)
    seeds = list(seeds or spec.seeds)
    written = []
    for seed in seeds:
        results = run_comparison(spec, seed)
        seed_dir = out_dir / "comparison" / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        for method, rec in results.items():
            path = seed_dir / f"{method}.metrics.json"
            rec.save(path)
            written.append(str(path))
    write_manifest(out_dir, {"command": "comparison", "spec_digest": spec.digest(),
                             "spec": spec.to_dict(), "outputs": written})
    return written


# ---------------------------------------------------------------------------
# artifact-oriented commands (gen / train-meta / embed / finetune / eval)


def resolve_scenario_ref(ref, base_dir="."):
    """Standalone scenario resolution for commands that take a scenario, not a spec."""
    if isinstance(ref, str) and ref in preset_names():
        return preset(ref)
    path = Path(base_dir) / ref
    if not path.exists():
        raise ConfigError(f"scenario reference {ref!r}: no such preset or file")
    return ScenarioConfig.load(path)


def cmd_gen(scenario_ref, samples_per_rp, out_dir, seed=None, base_dir="."):
    """Generate one scenario dataset into <out>/dataset.csid."""
    cfg = resolve_scenario_ref(scenario_ref, base_dir)
    if seed is not None:
        d = cfg.to_dict()
        d["seed"] = int(seed)
        cfg = ScenarioConfig.from_dict(d)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(cfg, samples_per_rp)
    path = out_dir / "dataset.csid"
    save_dataset(ds, path)
    write_manifest(out_dir, {"command": "gen", "scenario_digest": cfg.digest(),
                             "seed": cfg.seed, "samples_per_rp": samples_per_rp,
                             "outputs": [str(path)]})
    return path


def cmd_train_meta(spec, out_dir, seed=None):
    """Per-scenario meta-training; writes a ScenarioBank (no embeddings yet)."""
    seed = spec.seeds[0] if seed is None else int(seed)
    est = make_estimator(spec, "sim_meta", seed)
    historical = historical_scenario_data(spec, seed)
    est.meta_stage(historical)
    est.bank_.info.update({"spec_digest": spec.digest(), "seed": seed,
                           "scenario_digests": [s.config_digest for s in historical]})
    out_dir = Path(out_dir)
    bank_dir = out_dir / "bank"
    est.bank_.save(bank_dir)
    logs_dir = out_dir / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    for name, log in est.training_logs_.items():
        with open(logs_dir / f"meta_{name}.jsonl", "w") as f:
            for entry in log:
                f.write(json.dumps(entry) + "\n")
    write_manifest(out_dir, {"command": "train-meta", "spec_digest": spec.digest(),
                             "seed": seed, "outputs": [str(bank_dir)]})
    return bank_dir


def _estimator_from_bank(bank):
    kwargs = bank.info.get("estimator_params")
    if kwargs is None:
        raise DataError("bank manifest lacks estimator parameters")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in kwargs.items()}
    return SimilarityGuidedLocalizer.from_bank(bank, **kwargs)


def _check_spec_matches_bank(spec, bank):
    stored = bank.info.get("spec_digest")
    if stored is not None and stored != spec.digest():
        raise DataError("spec digest does not match the bank's (stale inputs)")


def cmd_embed(spec, bank_dir):
    """Train the autoencoder and store per-scenario embeddings into the bank."""
    bank = ScenarioBank.load(bank_dir)
    _check_spec_matches_bank(spec, bank)
    est = _estimator_from_bank(bank)
    historical = historical_scenario_data(spec, int(bank.info["seed"]))
    est.embed_stage(historical)
    bank.save(bank_dir)
    return bank_dir


def cmd_finetune(spec, bank_dir, out_dir, seed=None):
    """Similarity-guided fine-tuning on the new scenario's support set."""
    bank = ScenarioBank.load(bank_dir)
    _check_spec_matches_bank(spec, bank)
    if bank.encoder_params is None or any(r.embeddings.size == 0 for r in bank.records):
        raise DataError(f"{bank_dir}: bank has no embeddings; run `embed` first")
    seed = int(bank.info.get("seed", spec.seeds[0])) if seed is None else int(seed)
    est = _estimator_from_bank(bank)
    new_cfg = spec.resolve(spec.new_scenario)
    support = graph_data(reseed(new_cfg, 1000 + seed), spec.finetune_samples_per_rp)
    est.adapt(support, room_extent=new_cfg.room_extent)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    est.params_.save(out_dir / "adapted.params")
    with open(out_dir / "selection.json", "w") as f:
        json.dump({"selected_scenario": int(est.selected_scenario_),
                   "scenario_names": bank.names(),
                   "mmd2": [float(v) for v in est.selection_mmd_],
                   "finetune_losses": est.finetune_losses_}, f, indent=2)
        f.write("\n")
    write_manifest(out_dir, {
        "command": "finetune", "spec_digest": spec.digest(), "seed": seed,
        "arch": spec.arch, "room_extent": list(new_cfg.room_extent),
        "scenario_digest": new_cfg.digest(),
        "outputs": ["adapted.params", "selection.json"]})
    return out_dir


class _ParamPredictor:
    """Minimal predict() wrapper around saved parameters."""

    def __init__(self, model, params, room_extent):
        self.model = model
        self.params = params
        self.room_extent = room_extent

    def predict(self, X):
        return self.model.predict(self.params, X, self.room_extent)


def cmd_eval(spec, model_dir, out_dir, seed=None, data_path=None):
    """Evaluate saved parameters on new-scenario test data (or a dataset file)."""
    model_dir = Path(model_dir)
    manifest = read_manifest(model_dir)
    if manifest.get("spec_digest") != spec.digest():
        raise DataError("spec digest does not match the model's manifest (stale inputs)")
    params_path = model_dir / "adapted.params"
    if not params_path.exists():
        raise DataError(f"{model_dir}: missing adapted.params")
    params = ParamSet.load(params_path)
    seed = int(manifest.get("seed", spec.seeds[0])) if seed is None else int(seed)
    if data_path is not None:
        test = graph_samples_from_dataset(load_dataset(data_path))
    else:
        new_cfg = spec.resolve(spec.new_scenario)
        test = graph_data(reseed(new_cfg, 2000 + seed), spec.test_samples_per_rp)
    est = make_estimator(spec, "sim_meta", seed)
    predictor = _ParamPredictor(est._model(), params, manifest["room_extent"])
    rec = evaluate(predictor, test, provenance={
        "command": "eval", "seed": seed, "spec_digest": spec.digest(),
        "model": str(model_dir)})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec.save(out_dir / "metrics.json")
    write_manifest(out_dir, {"command": "eval", "spec_digest": spec.digest(),
                             "seed": seed, "outputs": ["metrics.json"]})
    return rec
