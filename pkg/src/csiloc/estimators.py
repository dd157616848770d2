"""Scikit-learn-style estimators over the graph localizer.

Four method variants share one architecture:

* GnnLocalizer      -- plain supervised training, no meta-learning.
* SimilarityGuidedLocalizer -- per-scenario meta-parameters plus an
  autoencoder/MMD scenario selector; adapt() picks the closest historical
  scenario and fine-tunes from its parameters.
* PooledMetaLocalizer -- one set of meta-parameters trained across all
  scenarios in sequence; adapt() fine-tunes from it.
* RandomInitLocalizer -- fine-tunes from a fresh random initialization with
  the same budget (lower-bound baseline).

All follow fit/predict with get_params/set_params from BaseEstimator, so
they compose with sklearn tooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from . import embedding as emb
from .channel import substream
from .errors import DataError, NumericsError, TrainingError
from .feature import SppConfig, extract, init_extractor_params
from .gnn import GraphLocalizerModel, LocalizerConfig
from .graph import CsiGraph
from .meta import (MetaConfig, ScenarioBank, ScenarioRecord, finetune,
                   meta_train_multi, meta_train_scenario, select_scenario)
from .params import ParamSet, sgd_step
from .preprocess import build_image, clean_sample, sample_to_image
from .validation import check_graph_samples, infer_room_extent, targets_from_samples


@dataclass
class ScenarioData:
    """One historical scenario's training material."""

    name: str
    graphs: list                 # GraphSamples
    room_extent: tuple
    config_digest: str = ""


class CsiImageTransformer(BaseEstimator, TransformerMixin):
    """CsiSample -> CsiImage, with optional cleaning."""

    def __init__(self, denoise=True, sanitize=True):
        self.denoise = denoise
        self.sanitize = sanitize

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if self.denoise and self.sanitize:
            return [sample_to_image(s) for s in X]
        if not self.denoise and not self.sanitize:
            return [build_image(s) for s in X]
        # partial cleaning: run both paths but keep only the requested half
        out = []
        for s in X:
            cleaned = clean_sample(s)
            mixed = cleaned.csi.copy()
            if not self.denoise:
                mixed = np.abs(s.csi) * np.exp(1j * np.angle(cleaned.csi))
            if not self.sanitize:
                mixed = np.abs(cleaned.csi) * np.exp(1j * np.angle(s.csi))
            out.append(build_image(type(s)(ap_index=s.ap_index, rp_index=s.rp_index,
                                           true_location=s.true_location, csi=mixed,
                                           bandwidth_mhz=s.bandwidth_mhz)))
        return out


class _ArchMixin:
    """Shared architecture/meta hyperparameters and prediction plumbing."""

    def _localizer_config(self):
        return LocalizerConfig(
            spp=SppConfig(levels=tuple(self.spp_levels), channels=self.conv_channels),
            feature_dim=self.feature_dim, gnn_dims=tuple(self.gnn_dims))

    def _model(self):
        return GraphLocalizerModel(self._localizer_config())

    def _require(self, attr):
        if getattr(self, attr, None) is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted (missing {attr})")
        return getattr(self, attr)

    def predict(self, X):
        X = check_graph_samples(X)
        params = self._require("params_")
        extent = self._require("room_extent_")
        return self._model().predict(params, X, extent)

    def score(self, X, y=None):
        """Negative mean localization error in meters (sklearn convention)."""
        X = check_graph_samples(X)
        y = targets_from_samples(X) if y is None else np.asarray(y)
        err = np.linalg.norm(self.predict(X) - y, axis=1)
        return -float(err.mean())


class GnnLocalizer(_ArchMixin, BaseEstimator, RegressorMixin):
    """Plain GNN localizer trained with mini-batch SGD on one dataset."""

    def __init__(self, conv_channels=8, spp_levels=(1, 2, 4), feature_dim=64,
                 gnn_dims=(32, 32, 16), lr=0.01, epochs=60, batch_size=8,
                 loss_reduction="sum", room_extent=None, seed=0):
        self.conv_channels = conv_channels
        self.spp_levels = spp_levels
        self.feature_dim = feature_dim
        self.gnn_dims = gnn_dims
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss_reduction = loss_reduction
        self.room_extent = room_extent
        self.seed = seed

    def fit(self, X, y=None):
        X = check_graph_samples(X)
        targets = targets_from_samples(X) if y is None else np.asarray(y)
        extent = self.room_extent or infer_room_extent(targets)
        model = self._model()
        params = model.init_params(self.seed)
        curve = []
        for epoch in range(self.epochs):
            rng = substream(self.seed, 0x5D, epoch)
            order = rng.permutation(len(X))
            epoch_loss = 0.0
            for start in range(0, len(order), self.batch_size):
                batch = [X[i] for i in order[start:start + self.batch_size]]
                tape = ad.Tape()
                try:
                    loss = model.batch_loss(tape, params, batch, extent, "train",
                                            self.loss_reduction)
                except NumericsError as e:
                    raise TrainingError(f"epoch {epoch}: {e}") from e
                ad.backward(tape, loss)
                sgd_step(params, self.lr)
                epoch_loss += float(loss.value)
            curve.append(epoch_loss)
        model.calibrate(params, X)
        self.params_ = params
        self.room_extent_ = extent
        self.training_curve_ = curve
        return self


class _MetaMixin(_ArchMixin):
    """Meta hyperparameters shared by the adapting estimators."""

    def _meta_config(self):
        return MetaConfig(inner_lr=self.inner_lr, outer_lr=self.outer_lr,
                          epochs=self.epochs, meta_batch=self.meta_batch,
                          inner_steps=self.inner_steps,
                          finetune_steps=self.finetune_steps,
                          groups_per_scenario=self.groups_per_scenario,
                          loss_reduction=self.loss_reduction)

    def _set_meta_params(self, inner_lr, outer_lr, epochs, meta_batch, inner_steps,
                         finetune_steps, groups_per_scenario, loss_reduction):
        self.inner_lr = inner_lr
        self.outer_lr = outer_lr
        self.epochs = epochs
        self.meta_batch = meta_batch
        self.inner_steps = inner_steps
        self.finetune_steps = finetune_steps
        self.groups_per_scenario = groups_per_scenario
        self.loss_reduction = loss_reduction


class SimilarityGuidedLocalizer(_MetaMixin, BaseEstimator):
    """Scenario-specific meta-parameters plus MMD-guided fine-tuning."""

    def __init__(self, conv_channels=8, spp_levels=(1, 2, 4), feature_dim=64,
                 gnn_dims=(32, 32, 16), inner_lr=0.02, outer_lr=0.01, epochs=40,
                 meta_batch=3, inner_steps=1, finetune_steps=30,
                 groups_per_scenario=6, loss_reduction="sum",
                 embed_channels=4, embed_feature_dim=32, embed_hidden=(16, 12),
                 embed_dim=6, embed_dropout=0.1, embed_epochs=40, embed_lr=0.005,
                 seed=0):
        self.conv_channels = conv_channels
        self.spp_levels = spp_levels
        self.feature_dim = feature_dim
        self.gnn_dims = gnn_dims
        self._set_meta_params(inner_lr, outer_lr, epochs, meta_batch, inner_steps,
                              finetune_steps, groups_per_scenario, loss_reduction)
        self.embed_channels = embed_channels
        self.embed_feature_dim = embed_feature_dim
        self.embed_hidden = embed_hidden
        self.embed_dim = embed_dim
        self.embed_dropout = embed_dropout
        self.embed_epochs = embed_epochs
        self.embed_lr = embed_lr
        self.seed = seed

    # -- embedding plumbing

    def _embed_spp(self):
        return SppConfig(levels=(1, 2, 4), channels=self.embed_channels)

    def _autoencoder(self):
        return emb.GraphAutoencoder(emb.AutoencoderConfig(
            input_dim=self.embed_feature_dim, hidden_dims=tuple(self.embed_hidden),
            embed_dim=self.embed_dim, dropout=self.embed_dropout,
            epochs=self.embed_epochs, lr=self.embed_lr))

    def _init_embed_extractor(self):
        rng = np.random.default_rng(self.seed + 0xF1)
        return init_extractor_params(ParamSet(), "embed", rng, self._embed_spp(),
                                     self.embed_feature_dim)

    def _featurize(self, extractor_params, graphs):
        """GraphSamples -> static CsiGraphs via the fixed eval-mode extractor."""
        spp = self._embed_spp()
        out = []
        for g in graphs:
            feats = np.stack([
                extract(None, extractor_params, "embed", img, spp, "eval").value
                for img in g.images])
            out.append(CsiGraph(node_features=feats, adjacency=g.adjacency,
                                ap_positions=g.ap_positions,
                                true_location=g.true_location))
        return out

    # -- estimator API

    def meta_stage(self, X):
        """Stage 1: scenario-specific meta-parameters into a fresh bank."""
        if not X:
            raise DataError("need at least one historical scenario")
        cfg = self._meta_config()
        model = self._model()
        records = []
        self.training_logs_ = {}
        for i, scen in enumerate(X):
            graphs = check_graph_samples(scen.graphs)
            log = []
            params = meta_train_scenario(model, graphs, scen.room_extent, cfg,
                                         seed=self.seed + i, log=log)
            self.training_logs_[scen.name] = log
            records.append(ScenarioRecord(
                name=scen.name, params=params, embeddings=np.empty((0, self.embed_dim)),
                config_digest=scen.config_digest,
                meta={"room_extent": list(scen.room_extent), "epochs": cfg.epochs,
                      "seed": self.seed + i}))
        self.bank_ = ScenarioBank(
            records=records, embed_extractor_params=self._init_embed_extractor(),
            info={"embed_dim": self.embed_dim, "estimator_params": self.get_params()})
        return self

    def embed_stage(self, X):
        """Stage 2: shared autoencoder plus per-scenario embedding sets."""
        bank = self._require("bank_")
        if len(bank) != len(X):
            raise DataError(f"bank holds {len(bank)} scenarios but {len(X)} were given")
        static_by_scenario = [self._featurize(bank.embed_extractor_params,
                                              check_graph_samples(s.graphs)) for s in X]
        ae_log = []
        if len(X) >= 2:
            encoder = emb.train_autoencoder(static_by_scenario, self._autoencoder().cfg,
                                            seed=self.seed, log=ae_log)
        else:
            encoder = self._autoencoder().init_params(self.seed)
        auto = self._autoencoder()
        for rec, static in zip(bank.records, static_by_scenario):
            rec.embeddings = emb.embed_graphs(auto, encoder, static)
        bank.encoder_params = encoder
        bank.info["autoencoder_log"] = ae_log
        return self

    def fit(self, X, y=None):
        """X: list of ScenarioData (historical scenarios)."""
        return self.meta_stage(X).embed_stage(X)

    def embed(self, graphs):
        """Embeddings of new-scenario GraphSamples under the fitted encoder."""
        bank = self._require("bank_")
        if bank.encoder_params is None:
            raise DataError("scenario bank has no trained encoder; run the embed stage")
        static = self._featurize(bank.embed_extractor_params, check_graph_samples(graphs))
        return emb.embed_graphs(self._autoencoder(), bank.encoder_params, static)

    def adapt(self, support, room_extent=None):
        """Select the MMD-closest scenario and fine-tune from its parameters."""
        bank = self._require("bank_")
        support = check_graph_samples(support)
        extent = room_extent or infer_room_extent(targets_from_samples(support))
        p_star, mmd_values = select_scenario(bank, self.embed(support))
        result = finetune(self._model(), bank.records[p_star].params, support,
                          extent, self._meta_config())
        self.params_ = result.params
        self.room_extent_ = extent
        self.selected_scenario_ = p_star
        self.selection_mmd_ = mmd_values
        self.finetune_losses_ = result.support_losses
        return self

    @classmethod
    def from_bank(cls, bank, **kwargs):
        """Rebuild an adapter around a persisted ScenarioBank."""
        est = cls(**kwargs)
        est.bank_ = bank
        return est


class PooledMetaLocalizer(_MetaMixin, BaseEstimator):
    """Single meta-initialization trained across all scenarios in sequence."""

    def __init__(self, conv_channels=8, spp_levels=(1, 2, 4), feature_dim=64,
                 gnn_dims=(32, 32, 16), inner_lr=0.02, outer_lr=0.01, epochs=40,
                 meta_batch=3, inner_steps=1, finetune_steps=30,
                 groups_per_scenario=6, loss_reduction="sum", seed=0):
        self.conv_channels = conv_channels
        self.spp_levels = spp_levels
        self.feature_dim = feature_dim
        self.gnn_dims = gnn_dims
        self._set_meta_params(inner_lr, outer_lr, epochs, meta_batch, inner_steps,
                              finetune_steps, groups_per_scenario, loss_reduction)
        self.seed = seed

    def fit(self, X, y=None):
        if not X:
            raise DataError("need at least one historical scenario")
        cfg = self._meta_config()
        model = self._model()
        scenarios = [(check_graph_samples(s.graphs), s.room_extent) for s in X]
        log = []
        self.meta_params_ = meta_train_multi(model, scenarios, cfg, seed=self.seed,
                                             log=log)
        self.training_logs_ = {"pooled": log}
        return self

    def adapt(self, support, room_extent=None):
        support = check_graph_samples(support)
        extent = room_extent or infer_room_extent(targets_from_samples(support))
        result = finetune(self._model(), self._require("meta_params_"), support,
                          extent, self._meta_config())
        self.params_ = result.params
        self.room_extent_ = extent
        self.finetune_losses_ = result.support_losses
        return self


class RandomInitLocalizer(_MetaMixin, BaseEstimator):
    """Fine-tunes from a random initialization; no meta-training stage."""

    def __init__(self, conv_channels=8, spp_levels=(1, 2, 4), feature_dim=64,
                 gnn_dims=(32, 32, 16), inner_lr=0.02, finetune_steps=30,
                 loss_reduction="sum", seed=0):
        self.conv_channels = conv_channels
        self.spp_levels = spp_levels
        self.feature_dim = feature_dim
        self.gnn_dims = gnn_dims
        self._set_meta_params(inner_lr, 0.0, 0, 1, 0, finetune_steps, 1, loss_reduction)
        self.seed = seed

    def get_params(self, deep=True):
        return {"conv_channels": self.conv_channels, "spp_levels": self.spp_levels,
                "feature_dim": self.feature_dim, "gnn_dims": self.gnn_dims,
                "inner_lr": self.inner_lr, "finetune_steps": self.finetune_steps,
                "loss_reduction": self.loss_reduction, "seed": self.seed}

    def fit(self, X=None, y=None):
        return self

    def adapt(self, support, room_extent=None):
        support = check_graph_samples(support)
        extent = room_extent or infer_room_extent(targets_from_samples(support))
        model = self._model()
        result = finetune(model, model.init_params(self.seed), support, extent,
                          self._meta_config())
        self.params_ = result.params
        self.room_extent_ = extent
        self.finetune_losses_ = result.support_losses
        return self
