"""Experiment service: fits the testbed and runs the grid, sweep, cost and transfer protocols."""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from functools import cached_property
from importlib import metadata
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .. import __version__
from ..core.exceptions import ConfigurationError, ExperimentError, IllusionGuardError
from ..core.logging import get_logger
from ..core.seeding import stream_rng
from ..engine.attack import (
    AttackResult,
    Mapper,
    cosine_at_first_flip,
    measure_attack_cost,
    pgd_illusion,
)
from ..engine.consensus import (
    ConsensusDecision,
    binomial_estimate,
    calibrate_eta,
    calibrate_sigma,
    consensus_classify,
    draw_seed,
    predicted_majority_success,
)
from ..engine.encoder import (
    DownstreamDecoder,
    EncoderModel,
    ScoreVector,
    classify,
    classify_embedding,
    decode_embedding,
    encode,
    fit_downstream_decoder,
    fit_encoder_linear,
    fit_encoder_mlp,
)
from ..engine.metrics import PredictionRecord, summarize
from ..engine.reconstruct import PcaBasis, Reconstructor, build_reconstructor, fit_pca
from ..engine.synthdata import SampleSet, SyntheticDataset, generate_dataset
from ..schemas.config import ExperimentConfig, ExperimentName, config_hash
from ..schemas.results import (
    INPUT_KINDS,
    LABEL_KINDS,
    AttackCostSummary,
    AttackRecord,
    EtaRow,
    GridRow,
    HistogramBin,
    Provenance,
    ReportBundle,
    ReportGrid,
    SigmaCalibrationRow,
    SweepRow,
    TransferRow,
)
from ..store.artifacts import ArtifactStore, data_key

logger = get_logger("experiment_service")

T = TypeVar("T")
R = TypeVar("R")

SAMPLING_SUFFIX = "+sampling"
GENERATIVE_KINDS = ("ae", "vae", "dm")
REC_SANITY_BAND = 0.15
TRACKED_PACKAGES = ("numpy", "scipy", "pydantic", "pandas", "statsmodels")


def _short_hash(payload: Any) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def package_versions() -> Dict[str, str]:
    versions = {"illusion_guard": __version__}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def histogram(
    figure: str, arm: str, values: Sequence[float], edges: np.ndarray
) -> List[HistogramBin]:
    """Counts over fixed edges; the last bin is closed on the right."""
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=edges)
    return [
        HistogramBin(
            figure=figure,
            arm=arm,
            bin_lo=float(edges[i]),
            bin_hi=float(edges[i + 1]),
            count=int(count),
        )
        for i, count in enumerate(counts)
    ]


class ExperimentService:
    """Fits models on demand and runs the requested experiments."""

    def __init__(self, cfg: ExperimentConfig, store: Optional[ArtifactStore] = None) -> None:
        self.cfg = cfg
        self.store = store
        self.timing: Dict[str, float] = {}
        self._encoders: Dict[str, EncoderModel] = {}
        self._decisions: Dict[Tuple[str, str], List[ConsensusDecision]] = {}
        self._method_scores: Dict[str, List[Dict[str, ScoreVector]]] = {}

    # -- plumbing ---------------------------------------------------------

    @contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        logger.info(f"Starting {name}")
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.timing[name] = self.timing.get(name, 0.0) + elapsed
            logger.info(f"Finished {name} in {elapsed:.2f}s")

    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Apply ``fn`` per item; results come back in input order."""
        if self.cfg.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.cfg.threads) as executor:
            return list(executor.map(fn, items))

    @staticmethod
    def _guarded(stage: str, sample_id: int, fn: Callable[[], R]) -> R:
        try:
            return fn()
        except ExperimentError:
            raise
        except IllusionGuardError as e:
            logger.error(f"{stage} failed for sample {sample_id}: {e.message}")
            raise ExperimentError(
                f"{stage} failed for sample {sample_id}: {e.message}",
                sample_id=sample_id,
                stage=stage,
                error=type(e).__name__,
                cause=dict(e.details),
            ) from e

    def _guarded_mapper(self, stage: str) -> Mapper:
        """Ordered pool map over (sample, target) pairs with per-sample error context."""

        def mapper(fn: Callable[[Any], R], pairs: Sequence[Any]) -> List[R]:
            def guarded(pair: Any) -> R:
                return self._guarded(stage, pair[0].sample_id, lambda: fn(pair))

            return self._map(guarded, pairs)

        return mapper

    @property
    def provenance(self) -> Provenance:
        return Provenance(
            config_hash=config_hash(self.cfg), seed=self.cfg.seed, versions=package_versions()
        )

    # -- fitted state -----------------------------------------------------

    @cached_property
    def dataset(self) -> SyntheticDataset:
        key = data_key(self.cfg.data)
        if self.store is not None:
            cached = self.store.datasets.get(key)
            if cached is not None:
                logger.info(f"Loaded cached dataset {key}")
                return cached
        with self._stage("generate_dataset"):
            dataset = generate_dataset(self.cfg.data)
        if self.store is not None:
            self.store.datasets.save(key, dataset)
        return dataset

    def _encoder_key(self, kind: str) -> str:
        settings = self.cfg.encoder
        payload: Dict[str, Any] = {"data": data_key(self.cfg.data), "kind": kind}
        if kind == "linear":
            payload["ridge"] = settings.ridge
        else:
            payload["mlp"] = settings.mlp.model_dump(mode="json")
        return _short_hash(payload)

    def encoder(self, kind: str) -> EncoderModel:
        """Fitted encoder of the given kind, loaded from the store when cached."""
        if kind in self._encoders:
            return self._encoders[kind]
        key = self._encoder_key(kind)
        model = self.store.encoders.get(key) if self.store is not None else None
        if model is None:
            with self._stage(f"fit_encoder_{kind}"):
                if kind == "linear":
                    model = fit_encoder_linear(
                        self.dataset.prototypes, self.dataset.bank, self.cfg.encoder.ridge
                    )
                elif kind == "mlp":
                    model = fit_encoder_mlp(
                        self.dataset.train, self.dataset.bank, self.cfg.encoder.mlp
                    )
                else:
                    raise ConfigurationError(f"unknown encoder kind '{kind}'")
            if self.store is not None:
                self.store.encoders.save(key, model)
        self._encoders[kind] = model
        return model

    @property
    def primary_encoder(self) -> EncoderModel:
        return self.encoder(self.cfg.encoder.kind)

    @cached_property
    def decoder(self) -> DownstreamDecoder:
        key = _short_hash(
            {
                "encoder": self._encoder_key(self.cfg.encoder.kind),
                "ridge": self.cfg.encoder.decoder_ridge,
            }
        )
        decoder = self.store.decoders.get(key) if self.store is not None else None
        if decoder is None:
            decoder = fit_downstream_decoder(
                self.primary_encoder, self.dataset.train, self.cfg.encoder.decoder_ridge
            )
            if self.store is not None:
                self.store.decoders.save(key, decoder)
        return decoder

    @cached_property
    def basis(self) -> PcaBasis:
        key = _short_hash({"data": data_key(self.cfg.data), "rank": self.cfg.pca_rank})
        basis = self.store.pca.get(key) if self.store is not None else None
        if basis is None:
            basis = fit_pca(self.dataset.train.pixels, self.cfg.pca_rank)
            if self.store is not None:
                self.store.pca.save(key, basis)
        return basis

    def fit_all(self) -> None:
        """Fit (or load) every model the configured experiments use."""
        kinds = {self.cfg.encoder.kind}
        if "transfer" in self.cfg.experiments:
            kinds |= {"linear", "mlp"}
        for kind in sorted(kinds):
            self.encoder(kind)
        decoder, basis = self.decoder, self.basis
        logger.info(
            f"Models ready: encoders={sorted(kinds)}, decoder mse={decoder.fit_mse:.4g}, "
            f"pca rank={basis.rank}"
        )

    @cached_property
    def eval_set(self) -> SampleSet:
        samples = self.dataset.eval
        if self.cfg.eval_limit is not None:
            samples = samples.head(self.cfg.eval_limit)
        return samples

    @cached_property
    def targets(self) -> Tuple[int, ...]:
        """Attack target per eval sample, uniform over the wrong classes."""
        num_classes = self.cfg.data.num_classes
        chosen = []
        for sample in self.eval_set:
            rng = stream_rng(self.cfg.seed, "target", sample.sample_id)
            offset = int(rng.integers(1, num_classes))
            chosen.append((sample.label + offset) % num_classes)
        return tuple(chosen)

    def _craft(self, enc: EncoderModel, max_iters: int) -> List[AttackResult]:
        bank, cfg = self.dataset.bank, self.cfg.attack

        def attack(pair) -> AttackResult:
            sample, target = pair
            return pgd_illusion(sample.pixels, target, enc, bank, cfg, max_iters)

        mapper = self._guarded_mapper("pgd_illusion")
        return mapper(attack, list(zip(self.eval_set, self.targets)))

    @cached_property
    def attacks(self) -> List[AttackResult]:
        """Pixel-space illusions on the primary encoder, one per eval sample."""
        with self._stage("attack"):
            results = self._craft(self.primary_encoder, self.cfg.attack.max_iters)
        rate = np.mean([r.success for r in results])
        logger.info(f"Undefended attacks reached the threshold on {rate:.1%} of samples")
        return results

    @cached_property
    def perturbed(self) -> np.ndarray:
        return np.vstack([result.perturbed for result in self.attacks])

    @cached_property
    def calibration(self) -> Optional[Tuple[float, List[SigmaCalibrationRow]]]:
        settings = self.cfg.calibration
        if not settings.enabled:
            return None
        base = build_reconstructor(
            settings.sanitizer,
            self.cfg.reconstructors[settings.sanitizer],
            self.basis,
            self.dataset.mixture,
            (self.cfg.data.height, self.cfg.data.width),
        )
        with self._stage("sigma_calibration"):
            sigma, candidates = calibrate_sigma(
                base,  # type: ignore[arg-type]
                settings.sigma_candidates,
                self.eval_set.pixels,
                self.eval_set.labels,
                self.perturbed,
                self.targets,
                self.primary_encoder,
                self.dataset.bank,
                self.cfg.consensus,
                settings.trials_per_sample,
                settings.max_clean_drop,
                self.eval_set.sample_ids,
            )
        logger.info(f"Calibrated latent noise of {settings.sanitizer}: sigma={sigma:.3g}")
        rows = [
            SigmaCalibrationRow(
                sigma=c.sigma, clean_top1=c.clean_top1, eta_hat=c.eta_hat, selected=c.selected
            )
            for c in candidates
        ]
        return sigma, rows

    @cached_property
    def roster(self) -> Dict[str, Reconstructor]:
        grid = (self.cfg.data.height, self.cfg.data.width)
        roster = {
            name: build_reconstructor(name, spec, self.basis, self.dataset.mixture, grid)
            for name, spec in self.cfg.reconstructors.items()
        }
        if self.calibration is not None:
            name = self.cfg.calibration.sanitizer
            vae = roster[name]
            roster[name] = vae.with_noise(self.calibration[0])  # type: ignore[attr-defined]
        return roster

    # -- consensus decisions ----------------------------------------------

    def _odd_samples(self) -> int:
        """Largest odd draw count not above N, so a strict majority always exists."""
        count = self.cfg.consensus.num_samples
        return count if count % 2 else count - 1

    def _decision_count(self, sanitizer: str) -> int:
        count = self.cfg.consensus.num_samples
        if sanitizer in self.cfg.sweep.sanitizers:
            count = max(count, max(self.cfg.sweep.n_values))
        return count

    def _inputs(self, input_kind: str) -> np.ndarray:
        return self.eval_set.pixels if input_kind == "org" else self.perturbed

    def decisions(self, sanitizer: str, input_kind: str) -> List[ConsensusDecision]:
        """Full-length consensus decisions per eval sample; prefixes give smaller N."""
        key = (sanitizer, input_kind)
        if key in self._decisions:
            return self._decisions[key]
        recon = self.roster[sanitizer]
        count = self._decision_count(sanitizer)
        inputs = self._inputs(input_kind)
        enc, bank = self.primary_encoder, self.dataset.bank

        def decide(index: int) -> ConsensusDecision:
            sample_id = int(self.eval_set.sample_ids[index])
            return self._guarded(
                "consensus_classify",
                sample_id,
                lambda: consensus_classify(
                    inputs[index], self.cfg.consensus, enc, bank, recon, sample_id, count
                ),
            )

        started = time.perf_counter()
        with self._stage(f"consensus_{sanitizer}"):
            result = self._map(decide, range(len(self.eval_set)))
        per_image = (time.perf_counter() - started) / max(len(result), 1)
        self.timing[f"defense_seconds_per_image_{sanitizer}"] = (
            per_image * self.cfg.consensus.num_samples / count
        )
        self._decisions[key] = result
        return result

    # -- grid ---------------------------------------------------------------

    def grid_methods(self) -> List[str]:
        generative = [
            name for name, spec in self.cfg.reconstructors.items() if spec.kind in GENERATIVE_KINDS
        ]
        sampling = [f"{name}{SAMPLING_SUFFIX}" for name in self.cfg.consensus.sampling_sanitizers]
        return ["none", *generative, *sampling, *self.cfg.baselines]

    def baseline_methods(self) -> List[str]:
        sampling = [f"{name}{SAMPLING_SUFFIX}" for name in self.cfg.consensus.sampling_sanitizers]
        return ["none", *self.cfg.baselines, *sampling]

    def _single_scores(
        self, method: str, input_kind: str, index: int
    ) -> Tuple[ScoreVector, np.ndarray]:
        x = self._inputs(input_kind)[index]
        enc, bank = self.primary_encoder, self.dataset.bank
        if method == "none":
            embedding = encode(enc, x)
        elif method.endswith(SAMPLING_SUFFIX):
            decision = self.decisions(method[: -len(SAMPLING_SUFFIX)], input_kind)[index]
            decision = decision.prefix(self.cfg.consensus.num_samples)
            embedding = decision.draw_embeddings[decision.representative_draw()]
            return decision.score_vector(), embedding
        else:
            recon = self.roster[method]
            sample_id = int(self.eval_set.sample_ids[index])
            x = recon.reconstruct(x, draw_seed(self.cfg.consensus, recon, sample_id, 0))
            embedding = encode(enc, x)
        return classify_embedding(bank, embedding), embedding

    def method_scores(self, method: str) -> List[Dict[str, ScoreVector]]:
        """Scores of the four input kinds for every eval sample under ``method``."""
        if method in self._method_scores:
            return self._method_scores[method]
        if method.endswith(SAMPLING_SUFFIX):
            for input_kind in ("org", "prt"):
                self.decisions(method[: -len(SAMPLING_SUFFIX)], input_kind)
        # fitted state is resolved here so worker threads only read it
        enc, bank, decoder = self.primary_encoder, self.dataset.bank, self.decoder
        _ = (self.roster, self.perturbed)

        def evaluate(index: int) -> Dict[str, ScoreVector]:
            scores: Dict[str, ScoreVector] = {}
            for input_kind in ("org", "prt"):
                img, embedding = self._single_scores(method, input_kind, index)
                scores[f"{input_kind}_img"] = img
                scores[f"{input_kind}_rec"] = classify(
                    enc, bank, decode_embedding(decoder, embedding)
                )
            return scores

        def guarded(index: int) -> Dict[str, ScoreVector]:
            sample_id = int(self.eval_set.sample_ids[index])
            return self._guarded(f"evaluate {method}", sample_id, lambda: evaluate(index))

        with self._stage(f"evaluate_{method}"):
            result = self._map(guarded, range(len(self.eval_set)))
        self._method_scores[method] = result
        return result

    def _rows(self, method: str) -> List[GridRow]:
        per_sample = self.method_scores(method)
        rows = []
        for input_kind in INPUT_KINDS:
            records = [
                PredictionRecord(
                    sample_id=int(sample.sample_id),
                    original_label=sample.label,
                    target_label=target,
                    scores=scores[input_kind],
                )
                for sample, target, scores in zip(self.eval_set, self.targets, per_sample)
            ]
            for label_kind in LABEL_KINDS:
                rows.append(
                    GridRow(
                        method=method,
                        input_kind=input_kind,
                        label_kind=label_kind,
                        summary=summarize(records, label_kind),
                    )
                )
        return rows

    def _check_rec_band(self, grid: ReportGrid) -> None:
        baseline = grid.get("none", "org_img", "original").top1
        for method in grid.methods:
            rec = grid.get(method, "org_rec", "original").top1
            if rec < baseline - REC_SANITY_BAND:
                logger.warning(
                    f"{method}: clean reconstruction Top-1 {rec:.3f} is more than "
                    f"{REC_SANITY_BAND} below the clean baseline {baseline:.3f}"
                )

    def _grid_for(self, methods: Sequence[str]) -> ReportGrid:
        rows = [row for method in methods for row in self._rows(method)]
        grid = ReportGrid(rows=rows, provenance=self.provenance)
        self._check_rec_band(grid)
        return grid

    def run_grid(self) -> ReportGrid:
        """Evaluation grid over every method, input kind and label kind."""
        grid = self._grid_for(self.grid_methods())
        logger.info(
            f"Grid: clean top1={grid.get('none', 'org_img', 'original').top1:.3f}, "
            f"attack success={grid.get('none', 'prt_rec', 'target').top1:.3f}"
        )
        return grid

    def run_baselines(self) -> ReportGrid:
        """Pixel-transform baselines against no defense and generative sampling."""
        return self._grid_for(self.baseline_methods())

    # -- eta consistency ----------------------------------------------------

    def run_eta(self) -> List[EtaRow]:
        """Single-draw persistence and the predicted vs observed consensus success."""
        rows: List[EtaRow] = []
        enc, bank = self.primary_encoder, self.dataset.bank
        trials = self.cfg.calibration.trials_per_sample
        counts = sorted({self.cfg.consensus.num_samples, self._odd_samples()})
        for name in self.cfg.consensus.sampling_sanitizers:
            with self._stage(f"eta_{name}"):
                estimate = calibrate_eta(
                    self.perturbed,
                    self.targets,
                    self.roster[name],
                    enc,
                    bank,
                    trials,
                    self.cfg.seed,
                    self.eval_set.sample_ids,
                )
            decisions = self.decisions(name, "prt")
            for count in counts:
                hits = [d.prefix(count).winner == t for d, t in zip(decisions, self.targets)]
                observed = float(np.mean(hits))
                observed_se = float(np.sqrt(observed * (1.0 - observed) / len(hits)))
                predicted, predicted_se = predicted_majority_success(estimate.per_sample, count)
                pooled = float(np.hypot(observed_se, predicted_se))
                within = abs(predicted - observed) <= 3.0 * pooled + 1e-12
                if not within:
                    logger.warning(
                        f"{name}, N={count}: predicted success {predicted:.3f} vs observed "
                        f"{observed:.3f} differ by more than three standard errors"
                    )
                rows.append(
                    EtaRow(
                        sanitizer=name,
                        num_samples=count,
                        eta_hat=estimate.eta,
                        std_error=estimate.std_error,
                        ci_low=estimate.ci_low,
                        ci_high=estimate.ci_high,
                        trials=estimate.trials,
                        predicted_success=predicted,
                        observed_success=observed,
                        observed_std_error=observed_se,
                        within_three_se=within,
                    )
                )
        return rows

    # -- sweep --------------------------------------------------------------

    def run_sweep(self, n_values: Optional[Sequence[int]] = None) -> List[SweepRow]:
        """Consensus metrics per sanitizer, input kind and number of draws."""
        values = sorted(set(n_values or self.cfg.sweep.n_values))
        rows: List[SweepRow] = []
        for name in self.cfg.sweep.sanitizers:
            for input_kind in ("org", "prt"):
                decisions = self.decisions(name, input_kind)
                available = min(d.num_samples for d in decisions)
                for count in values:
                    if count > available:
                        raise ConfigurationError(
                            f"sweep N={count} exceeds the {available} draws computed for {name}",
                            {"num_samples": count},
                        )
                    records = [
                        PredictionRecord(
                            sample_id=int(sample.sample_id),
                            original_label=sample.label,
                            target_label=target,
                            scores=decision.prefix(count).score_vector(),
                        )
                        for sample, target, decision in zip(self.eval_set, self.targets, decisions)
                    ]
                    original = summarize(records, "original")
                    rows.append(
                        SweepRow(
                            sanitizer=name,
                            input_kind=input_kind,  # type: ignore[arg-type]
                            num_samples=count,
                            top1=original.top1,
                            top5=original.top5,
                            cs_mean=original.cs_mean,
                            cs_std=original.cs_std,
                            target_top1=summarize(records, "target").top1,
                            n=original.n,
                        )
                    )
        return rows

    # -- attack cost --------------------------------------------------------

    def run_attack_cost(
        self,
    ) -> Tuple[List[AttackRecord], List[AttackCostSummary], List[HistogramBin]]:
        """Loops to threshold for the pixel-space and the through-sanitizer attack."""
        attack_cfg = self.cfg.attack
        budget = attack_cfg.loop_budget
        enc, bank = self.primary_encoder, self.dataset.bank
        recon = self.roster[self.cfg.attack_cost.sanitizer]
        pairs = list(zip(self.eval_set, self.targets))

        records: List[AttackRecord] = []
        summaries: List[AttackCostSummary] = []
        for arm, sanitizer, stage in (
            ("undefended", None, "pgd_illusion"),
            ("defended", recon, "adaptive_pgd"),
        ):
            with self._stage(f"attack_cost_{arm}"):
                arm_records = measure_attack_cost(
                    self.eval_set,
                    self.targets,
                    enc,
                    bank,
                    sanitizer,
                    attack_cfg,
                    mapper=self._guarded_mapper(stage),
                )
            records.extend(arm_records)
            estimate = binomial_estimate(sum(r.success for r in arm_records), len(arm_records))
            summaries.append(
                AttackCostSummary(
                    arm=arm,  # type: ignore[arg-type]
                    n=len(arm_records),
                    success_rate=estimate.eta,
                    ci_low=estimate.ci_low,
                    ci_high=estimate.ci_high,
                    median_loops=float(np.median([r.loops_used for r in arm_records])),
                    median_final_cos=float(np.median([r.final_cos for r in arm_records])),
                )
            )
            logger.info(
                f"Attack cost ({arm}): success={estimate.eta:.1%}, "
                f"median loops={summaries[-1].median_loops:.0f}, "
                f"stagnated={sum(r.stagnated for r in arm_records)}"
            )

        def first_flip(pair) -> Optional[float]:
            sample, target = pair
            return cosine_at_first_flip(sample.pixels, target, enc, bank, attack_cfg, budget)

        with self._stage("attack_cost_first_flip"):
            flips = [value for value in self._map(first_flip, pairs) if value is not None]

        loop_edges = np.linspace(0.0, budget, self.cfg.attack_cost.loop_bins + 1)
        cos_edges = np.linspace(-1.0, 1.0, self.cfg.attack_cost.cos_bins + 1)
        bins = histogram("fig3_success_cosine", "undefended", flips, cos_edges)
        for arm, defended_flag in (("undefended", False), ("defended", True)):
            arm_records = [r for r in records if r.defended == defended_flag]
            bins += histogram("fig4_loops", arm, [r.loops_used for r in arm_records], loop_edges)
            bins += histogram(
                "fig5_final_cosine", arm, [r.final_cos for r in arm_records], cos_edges
            )
        return records, summaries, bins

    # -- transfer -----------------------------------------------------------

    def _transfer_rows(self, source: str, target_kind: str) -> List[TransferRow]:
        """Attacks crafted on ``source`` judged on ``target_kind``, with and without defense."""
        if source == self.cfg.encoder.kind:
            crafted = self.attacks
        else:
            with self._stage(f"transfer_attack_{source}"):
                crafted = self._craft(self.encoder(source), self.cfg.attack.max_iters)
        evaluator = self.encoder(target_kind)
        bank = self.dataset.bank
        recon = self.roster[self.cfg.transfer.sanitizer]
        labels = self.eval_set.labels

        def undefended(index: int) -> int:
            return classify(evaluator, bank, crafted[index].perturbed).top1

        def defended(index: int) -> int:
            sample_id = int(self.eval_set.sample_ids[index])
            return self._guarded(
                "transfer consensus",
                sample_id,
                lambda: consensus_classify(
                    crafted[index].perturbed, self.cfg.consensus, evaluator, bank, recon, sample_id
                ).winner,
            )

        rows = []
        for flag, predict in ((False, undefended), (True, defended)):
            predictions = np.asarray(self._map(predict, range(len(self.eval_set))))
            rows.append(
                TransferRow(
                    source_encoder=source,
                    eval_encoder=target_kind,
                    defended=flag,
                    attack_success_rate=float(np.mean(predictions == np.asarray(self.targets))),
                    original_top1=float(np.mean(predictions == labels)),
                    n=len(predictions),
                )
            )
        return rows

    def run_transfer(self) -> List[TransferRow]:
        rows = self._transfer_rows("linear", "mlp") + self._transfer_rows("mlp", "linear")
        for row in rows:
            logger.info(
                f"Transfer {row.source_encoder}->{row.eval_encoder} "
                f"(defended={row.defended}): success={row.attack_success_rate:.1%}"
            )
        return rows

    # -- whole runs ---------------------------------------------------------

    def run(self, experiments: Optional[Sequence[ExperimentName]] = None) -> ReportBundle:
        """Run the requested experiments and collect every table they produce."""
        requested = list(experiments or self.cfg.experiments)
        tables: Dict[str, Any] = {}
        if "grid" in requested:
            tables["grid"] = self.run_grid()
            if self.cfg.consensus.sampling_sanitizers:
                tables["eta"] = self.run_eta()
        if "baselines" in requested:
            tables["baselines"] = self.run_baselines()
        if "sweep" in requested:
            tables["sweep"] = self.run_sweep()
        if "attack_cost" in requested:
            records, summary, bins = self.run_attack_cost()
            tables.update(attack_records=records, attack_summary=summary, histograms=bins)
        if "transfer" in requested:
            tables["transfer"] = self.run_transfer()
        if self.calibration is not None:
            tables["sigma_calibration"] = self.calibration[1]
        return ReportBundle(provenance=self.provenance, **tables)
