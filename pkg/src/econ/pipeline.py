"""
ECON Pipeline

Stages run in dependency order inside one run directory:

    data -> filter -> pretrain-sector -> train-<ablation> -> evaluate-<ablation>
                 \-> baselines

The none, sentiment-all and sentiment-topk variants train straight from the
filter outputs and never wait for pretrain-sector.

Each stage writes manifest.json with the sha256 of every file it read, the
digest of the config sections it depends on, and the digests of its outputs.
A stage whose recorded digests still match is skipped.
"""

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from .baselines import LogisticBaseline, MajorityBaseline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import VARIANT_ORDER, Ablation, RunConfig, derive_seed
from .errors import ContractError, DataError, EconError, StageError
from .evaluation import RunSummary, comparison_table, evaluate, MetricsReport, ConfusionCounts
from .ingestion import (
    MACRO_FILE,
    PRICES_FILE,
    SECTORS_FILE,
    TWEETS_FILE,
    MarketDataset,
    MarketPanel,
    StockDayLabel,
    Tweet,
    build_market_panel,
    chronological_split,
    compute_labels,
    load_dataset,
)
from .predictor import EconModel, PanelTensors, predict, train_predictor, write_training_log
from .selfaware import SectorSelfAware, embed_sequences, train_selfaware
from .synth import write_market
from .text import Vocabulary, encode_and_pad, mask_tweets
from .trends import TrendBuilder, TrendBundle, dump_attention, embeddings_by_day
from .tweet_filter import (
    SENTIMENT_ORDER,
    StockDayKey,
    TweetFilter,
    daily_sentiments,
    get_scorer,
    group_by_stock_day,
    sentiment_panel,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DATA_FILES = (PRICES_FILE, TWEETS_FILE, MACRO_FILE, SECTORS_FILE)
FILTERED_FILE = "filtered_tweets.jsonl"
COUNTS_FILE = "tweet_counts.csv"
ASSOCIATION_FILE = "association.json"
SENTIMENT_FILE = "sentiment.csv"
SHARE_COLUMNS = [s.value for s in SENTIMENT_ORDER]
VOCAB_FILE = "vocab.tsv"
SELFAWARE_FILE = "selfaware.pt"
SELFAWARE_HISTORY = "history.json"
MODEL_FILE = "model.pt"
TRAINING_LOG = "training_log.jsonl"
ATTENTION_FILE = "attention.json"
METRICS_FILE = "metrics.json"
PREDICTIONS_FILE = "predictions.csv"


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass
class Stage:
    name: str
    func: Callable[[Path], Dict[str, Any]]
    requires: Tuple[str, ...] = ()
    reads: Callable[[], List[Path]] = field(default=lambda: [])
    sections: Tuple[str, ...] = ()


@dataclass
class StageResult:
    name: str
    skipped: bool
    manifest: Dict[str, Any]


class Pipeline:
    """
    Registry of stages for one run directory.

    Usage:
        pipeline = Pipeline(config)
        pipeline.run(["evaluate-full"])   # runs data, filter, pretrain-sector, train-full first
    """

    def __init__(self, config: RunConfig, force: bool = False):
        self.config = config
        self.root = Path(config.output_dir)
        self.force = force
        self.stages: Dict[str, Stage] = {}
        self.results: Dict[str, StageResult] = {}
        self._cache: Dict[str, Any] = {}
        self._register_stages()

    # Registration

    def stage(
        self,
        name: str,
        requires: Sequence[str] = (),
        reads: Optional[Callable[[], List[Path]]] = None,
        sections: Sequence[str] = (),
    ):
        """Decorator to register a stage function taking its output directory."""

        def decorator(func: Callable[[Path], Dict[str, Any]]):
            self.stages[name] = Stage(
                name=name,
                func=func,
                requires=tuple(requires),
                reads=reads or (lambda: []),
                sections=tuple(sections),
            )
            return func

        return decorator

    def _register_stages(self) -> None:
        data_dir = self.root / "data"
        data_files = lambda: [data_dir / name for name in DATA_FILES]
        filter_dir = self.root / "filter"
        pretrain_dir = self.root / "pretrain-sector"

        def data_sources() -> List[Path]:
            if self.config.data.synthetic:
                return []
            return [Path(self.config.data.dir) / name for name in DATA_FILES]

        self.stage("data", reads=data_sources, sections=("data", "synth", "seed"))(self._data_stage)
        self.stage(
            "filter",
            requires=["data"],
            reads=data_files,
            sections=("data", "labels", "split", "filter"),
        )(self._filter_stage)
        self.stage(
            "pretrain-sector",
            requires=["data", "filter"],
            reads=lambda: data_files() + [filter_dir / FILTERED_FILE],
            sections=("data", "labels", "split", "text", "selfaware", "seed"),
        )(self._pretrain_stage)
        self.stage(
            "baselines",
            requires=["data", "filter"],
            reads=lambda: data_files() + [filter_dir / COUNTS_FILE],
            sections=("data", "labels", "split", "predictor", "seed"),
        )(self._baselines_stage)

        def model_inputs(ablation: Ablation) -> List[Path]:
            paths = data_files() + [filter_dir / FILTERED_FILE, filter_dir / COUNTS_FILE]
            if ablation.sentiment_only:
                paths.append(filter_dir / SENTIMENT_FILE)
            if ablation.needs_pretraining:
                paths += [pretrain_dir / VOCAB_FILE, pretrain_dir / SELFAWARE_FILE]
            return paths

        for ablation in VARIANT_ORDER:
            train_name = f"train-{ablation.value}"
            requires = ["data", "filter"]
            sections = ("data", "labels", "split", "predictor", "seed")
            if ablation.needs_pretraining:
                requires.append("pretrain-sector")
                sections += ("text",)
            self.stage(
                train_name,
                requires=requires,
                reads=lambda a=ablation: model_inputs(a),
                sections=sections,
            )(self._train_stage_for(ablation))
            self.stage(
                f"evaluate-{ablation.value}",
                requires=[train_name],
                reads=lambda a=ablation, name=train_name: model_inputs(a) + [self.root / name / MODEL_FILE],
                sections=sections,
            )(self._evaluate_stage_for(ablation))

    # Running

    def _order(self, targets: Sequence[str]) -> List[str]:
        ordered: List[str] = []

        def visit(name: str, trail: Tuple[str, ...]) -> None:
            if name not in self.stages:
                raise ContractError(f"unknown stage {name!r}; known: {sorted(self.stages)}")
            if name in trail:
                raise ContractError(f"stage cycle through {name}")
            for dependency in self.stages[name].requires:
                visit(dependency, trail + (name,))
            if name not in ordered:
                ordered.append(name)

        for target in targets:
            visit(target, ())
        return ordered

    def run(self, targets: Sequence[str]) -> Dict[str, StageResult]:
        for name in self._order(targets):
            self.results[name] = self._run_stage(self.stages[name])
        return self.results

    def _inputs(self, stage: Stage) -> Dict[str, str]:
        digests = {}
        for path in stage.reads():
            if not path.exists():
                raise StageError(stage.name, DataError(f"missing input {path}"))
            key = str(path.relative_to(self.root)) if path.is_relative_to(self.root) else str(path)
            digests[key] = file_digest(path)
        return digests

    def _run_stage(self, stage: Stage) -> StageResult:
        stage_dir = self.root / stage.name
        manifest_path = stage_dir / MANIFEST
        inputs = self._inputs(stage)
        config_digest = self.config.digest(*stage.sections)
        if not self.force and manifest_path.exists():
            recorded = json.loads(manifest_path.read_text())
            outputs_intact = all(
                (stage_dir / name).exists() and file_digest(stage_dir / name) == digest
                for name, digest in recorded.get("outputs", {}).items()
            )
            if recorded.get("inputs") == inputs and recorded.get("config_digest") == config_digest and outputs_intact:
                logger.info("stage %s: inputs unchanged, skipping", stage.name)
                return StageResult(stage.name, True, recorded)
        if stage_dir.exists():
            shutil.rmtree(stage_dir)
        stage_dir.mkdir(parents=True)
        logger.info("stage %s: running", stage.name)
        try:
            params = stage.func(stage_dir)
        except EconError as exc:
            raise StageError(stage.name, exc) from exc
        outputs = {
            path.name: file_digest(path)
            for path in sorted(stage_dir.iterdir())
            if path.is_file() and path.name != MANIFEST
        }
        manifest = {
            "stage": stage.name,
            "requires": list(stage.requires),
            "inputs": inputs,
            "config_digest": config_digest,
            "outputs": outputs,
            "params": params,
        }
        write_json(manifest_path, manifest)
        return StageResult(stage.name, False, manifest)

    def stats(self) -> Dict[str, Any]:
        return {
            "stages_registered": len(self.stages),
            "ran": sorted(n for n, r in self.results.items() if not r.skipped),
            "skipped": sorted(n for n, r in self.results.items() if r.skipped),
        }

    # Shared loaders

    def dataset(self) -> MarketDataset:
        if "dataset" not in self._cache:
            self._cache["dataset"] = load_dataset(
                self.root / "data", trading_hours=self.config.data.use_trading_hours
            )
        return self._cache["dataset"]

    def labels(self) -> List[StockDayLabel]:
        if "labels" not in self._cache:
            cfg = self.config.labels
            self._cache["labels"] = compute_labels(self.dataset().bars, cfg.move_band, cfg.vol_threshold)
        return self._cache["labels"]

    def split(self):
        return chronological_split({l.date for l in self.labels()}, self.config.split.ratios())

    def filtered_pairs(self) -> List[Tuple[str, Tweet]]:
        pairs = []
        with (self.root / "filter" / FILTERED_FILE).open(encoding="utf-8") as handle:
            for raw in handle:
                record = json.loads(raw)
                target = record.pop("target")
                pairs.append((target, Tweet.model_validate(record)))
        return pairs

    def tweet_counts(self) -> Dict[Tuple[str, Any], int]:
        frame = pd.read_csv(self.root / "filter" / COUNTS_FILE, dtype={"ticker": str, "date": str, "count": int})
        return {
            (ticker, pd.Timestamp(day).date()): int(count)
            for ticker, day, count in zip(frame["ticker"], frame["date"], frame["count"])
        }

    def panel(self) -> MarketPanel:
        if "panel" not in self._cache:
            cfg = self.config
            self._cache["panel"] = build_market_panel(
                self.dataset(),
                cfg.labels.move_band,
                cfg.labels.vol_threshold,
                cfg.split.ratios(),
                self.tweet_counts(),
            )
        return self._cache["panel"]

    def trend_bundle(self) -> TrendBundle:
        if "bundle" in self._cache:
            return self._cache["bundle"]
        pretrain_dir = self.root / "pretrain-sector"
        vocab = Vocabulary.load(pretrain_dir / VOCAB_FILE)
        payload = load_checkpoint(pretrain_dir / SELFAWARE_FILE, "selfaware")
        model = SectorSelfAware(**payload["dims"], pad_id=vocab.pad_id)
        model.load_state_dict(payload["state_dict"])
        dataset = self.dataset()
        pairs = self.filtered_pairs()
        sequences = mask_tweets(pairs, dataset.sector_map, set(dataset.tickers))
        encoded = encode_and_pad(sequences, vocab, self.config.text.max_len)
        vectors = embed_sequences(model, encoded)
        tweet_days = {tweet.id: tweet.session_date for _, tweet in pairs}
        day_embeddings, day_ids = embeddings_by_day(vectors, [s.tweet_id for s in encoded], tweet_days)
        bundle = TrendBuilder(model.sector_matrix).build(self.panel(), day_embeddings, day_ids)
        self._cache["bundle"] = bundle
        return bundle

    def sentiment_shares(self, ablation: Ablation) -> np.ndarray:
        """[T, n, 3] daily class shares for one sentiment variant."""
        frame = pd.read_csv(self.root / "filter" / SENTIMENT_FILE, dtype={"ticker": str, "date": str, "variant": str})
        frame = frame[frame["variant"] == ablation.value]
        shares = {
            (ticker, pd.Timestamp(day).date()): values
            for ticker, day, values in zip(frame["ticker"], frame["date"], frame[SHARE_COLUMNS].to_numpy())
        }
        panel = self.panel()
        return sentiment_panel(shares, panel.tickers, panel.dates)

    def tensors(self, ablation: Ablation) -> Tuple[PanelTensors, Optional[TrendBundle]]:
        if ablation.sentiment_only:
            return PanelTensors.build(self.panel(), None, sentiment=self.sentiment_shares(ablation)), None
        if not ablation.needs_pretraining:
            return PanelTensors.build(self.panel(), None), None
        bundle = self.trend_bundle()
        return PanelTensors.build(self.panel(), bundle), bundle

    # Stages

    def _data_stage(self, stage_dir: Path) -> Dict[str, Any]:
        cfg = self.config
        if cfg.data.synthetic:
            seed = derive_seed(cfg.seed, "synth")
            write_market(cfg.synth, seed, stage_dir)
            return {"source": "synthetic", "seed": seed}
        for name in DATA_FILES:
            source = Path(cfg.data.dir) / name
            if not source.exists():
                raise DataError(f"missing input file {source}")
            shutil.copyfile(source, stage_dir / name)
        return {"source": str(cfg.data.dir)}

    def _filter_stage(self, stage_dir: Path) -> Dict[str, Any]:
        cfg = self.config
        dataset = self.dataset()
        grouped = group_by_stock_day(dataset.tweets, dataset.tickers)
        tweet_filter = TweetFilter(
            scorer=get_scorer(cfg.filter.scorer, cfg.filter.lexicon),
            k=cfg.filter.k,
            candidates=cfg.filter.candidates,
            slack=cfg.filter.slack,
            lag=cfg.filter.resolved_lag(cfg.data.synthetic),
        )
        report = tweet_filter.calibrate(grouped, self.labels(), self.split().train)
        kept = tweet_filter.apply(grouped)
        n_kept = 0
        with (stage_dir / FILTERED_FILE).open("w", encoding="utf-8", newline="\n") as handle:
            for (ticker, _), tweets in kept.items():
                for tweet in tweets:
                    record = {"target": ticker, **tweet.model_dump(mode="json", exclude_none=True)}
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")
                    n_kept += 1
        counts = TweetFilter.daily_counts(grouped)
        pd.DataFrame(
            [{"ticker": t, "date": d.isoformat(), "count": c} for (t, d), c in sorted(counts.items())],
            columns=["ticker", "date", "count"],
        ).to_csv(stage_dir / COUNTS_FILE, index=False, lineterminator="\n")
        self._write_sentiment(grouped, tweet_filter, stage_dir / SENTIMENT_FILE)
        summary = report.to_dict()
        summary.update(
            {
                "lag": tweet_filter.lag,
                "scorer": tweet_filter.scorer.name,
                "tweets_in": len(dataset.tweets),
                "tweets_kept": n_kept,
            }
        )
        write_json(stage_dir / ASSOCIATION_FILE, summary)
        return {"chosen_k": report.chosen_k, "cramers_v": report.cramers_v, "tweets_kept": n_kept}

    @staticmethod
    def _write_sentiment(grouped: Mapping[StockDayKey, List[Tweet]], tweet_filter: TweetFilter, path: Path) -> None:
        rows = []
        for variant, cap in ((Ablation.SENTIMENT_ALL, None), (Ablation.SENTIMENT_TOPK, tweet_filter.cap)):
            for (ticker, day), daily in daily_sentiments(grouped, tweet_filter.scorer, cap).items():
                rows.append(
                    {
                        "ticker": ticker,
                        "date": day.isoformat(),
                        "variant": variant.value,
                        "tweets": daily.total,
                        **dict(zip(SHARE_COLUMNS, daily.shares)),
                    }
                )
        pd.DataFrame(rows, columns=["ticker", "date", "variant", "tweets", *SHARE_COLUMNS]).to_csv(
            path, index=False, lineterminator="\n"
        )

    def _pretrain_stage(self, stage_dir: Path) -> Dict[str, Any]:
        cfg = self.config
        dataset = self.dataset()
        pairs = self.filtered_pairs()
        sequences = mask_tweets(pairs, dataset.sector_map, set(dataset.tickers))
        if not sequences:
            raise ContractError("no filtered tweet names its target company; nothing to pretrain on")
        split = self.split()
        train_days, val_days = set(split.train), set(split.val)
        tweet_days = {tweet.id: tweet.session_date for _, tweet in pairs}
        train = [s for s in sequences if tweet_days[s.tweet_id] in train_days]
        val = [s for s in sequences if tweet_days[s.tweet_id] in val_days]
        if not train:
            raise ContractError("no masked tweets fall on training days")
        vocab = Vocabulary.build((s.tokens for s in train), cfg.text.min_freq)
        vocab.save(stage_dir / VOCAB_FILE)
        seed = derive_seed(cfg.seed, "selfaware")
        result = train_selfaware(
            encode_and_pad(train, vocab, cfg.text.max_len),
            encode_and_pad(val, vocab, cfg.text.max_len),
            vocab_size=len(vocab),
            n_sectors=dataset.sector_map.m,
            config=cfg.selfaware,
            seed=seed,
            pad_id=vocab.pad_id,
        )
        save_checkpoint(
            stage_dir / SELFAWARE_FILE,
            "selfaware",
            result.model.dims,
            result.model,
            meta={"best_epoch": result.best_epoch, "seed": seed},
        )
        write_json(stage_dir / SELFAWARE_HISTORY, result.history)
        return {
            "sequences": {"train": len(train), "val": len(val)},
            "vocab_size": len(vocab),
            "best_epoch": result.best_epoch,
            "val_accuracy": result.val_accuracy,
        }

    def _train_stage_for(self, ablation: Ablation) -> Callable[[Path], Dict[str, Any]]:
        def run(stage_dir: Path) -> Dict[str, Any]:
            cfg = self.config
            panel = self.panel()
            tensors, bundle = self.tensors(ablation)
            seed = derive_seed(cfg.seed, "train")
            result = train_predictor(panel, tensors, cfg.predictor, ablation, seed)
            save_checkpoint(
                stage_dir / MODEL_FILE,
                "econ",
                result.model.config_dims,
                result.model,
                meta={"ablation": ablation.value, "best_epoch": result.best_epoch, "seed": seed},
            )
            write_training_log(result.history, stage_dir / TRAINING_LOG)
            if bundle is not None:
                with torch.no_grad():
                    _, alpha = result.model.micro(tensors.sector_tweets, tensors.features, tensors.sector_of)
                bundle.alpha_micro = alpha
                dump_attention(bundle, stage_dir / ATTENTION_FILE)
            return {"best_epoch": result.best_epoch, "best_val_mcc": result.best_val_mcc, "seed": seed}

        return run

    def load_model(self, ablation: Ablation, tensors: PanelTensors) -> EconModel:
        path = self.root / f"train-{ablation.value}" / MODEL_FILE
        dims = {k: v for k, v in tensors.dims.items() if k != "n_sectors"}
        payload = load_checkpoint(path, "econ", expected_dims=dims)
        stored = payload["dims"]
        model = EconModel(
            n_stocks=stored["n_stocks"],
            p=stored["p"],
            q=stored["q"],
            embed_width=stored["embed_width"],
            hidden_size=stored["hidden_size"],
            window=stored["window"],
            fusion_dim=stored["fusion_dim"],
            ablation=ablation,
            n_sectors=stored["n_sectors"],
        )
        model.load_state_dict(payload["state_dict"])
        return model

    def _evaluate_stage_for(self, ablation: Ablation) -> Callable[[Path], Dict[str, Any]]:
        def run(stage_dir: Path) -> Dict[str, Any]:
            panel = self.panel()
            tensors, _ = self.tensors(ablation)
            model = self.load_model(ablation, tensors)
            t_idx, s_idx = panel.samples("test", model.window)
            predictions = predict(model, tensors, panel, t_idx, s_idx)
            payload = self._metrics_payload(panel, predictions, model_name="econ")
            payload["ablation"] = ablation.value
            payload["tweets"] = self._tweets_fed(ablation)
            write_json(stage_dir / METRICS_FILE, payload)
            self._write_predictions(panel, predictions, stage_dir / PREDICTIONS_FILE)
            return {
                "movement_accuracy": payload["movement"]["accuracy"],
                "volatility_auc": payload["volatility"]["auc"],
            }

        return run

    def _baselines_stage(self, stage_dir: Path) -> Dict[str, Any]:
        cfg = self.config
        panel = self.panel()
        window = cfg.predictor.window
        t_idx, s_idx = panel.samples("test", window)
        results = []
        for baseline in (MajorityBaseline(), LogisticBaseline(seed=derive_seed(cfg.seed, "baseline"))):
            baseline.fit(panel, window)
            results.append(self._metrics_payload(panel, baseline.predict(panel, t_idx, s_idx), baseline.name))
        write_json(stage_dir / METRICS_FILE, {"baselines": results})
        return {r["model"]: r["movement"]["accuracy"] for r in results}

    def _tweets_fed(self, ablation: Ablation) -> int:
        if ablation.sentiment_only:
            frame = pd.read_csv(self.root / "filter" / SENTIMENT_FILE, dtype={"variant": str})
            return int(frame.loc[frame["variant"] == ablation.value, "tweets"].sum())
        return sum(1 for _ in (self.root / "filter" / FILTERED_FILE).open(encoding="utf-8"))

    def _metrics_payload(self, panel: MarketPanel, predictions, model_name: str) -> Dict[str, Any]:
        cfg = self.config
        keys = {(p.ticker, p.date) for p in predictions}
        labels = [l for l in panel.labels if (l.ticker, l.date) in keys]
        digest = cfg.digest("data", "labels", "split", "filter", "text", "selfaware", "predictor", "synth", "seed")
        reports = {
            task: evaluate(predictions, labels, task, seed=cfg.seed, config_digest=digest, model=model_name)
            for task in ("movement", "volatility")
        }
        config = cfg.model_dump(mode="json")
        config.pop("output_dir", None)
        return {
            "model": model_name,
            "seed": cfg.seed,
            "movement": reports["movement"].to_dict(),
            "volatility": reports["volatility"].to_dict(),
            "config": config,
        }

    @staticmethod
    def _write_predictions(panel: MarketPanel, predictions, path: Path) -> None:
        truth = {(l.ticker, l.date): l for l in panel.labels}
        rows = [
            {
                "ticker": p.ticker,
                "date": p.date.isoformat(),
                "movement_prob": p.movement_prob,
                "volatility_prob": p.volatility_prob,
                "movement": truth[(p.ticker, p.date)].movement.value,
                "volatility": truth[(p.ticker, p.date)].volatility,
            }
            for p in predictions
        ]
        pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")


def run_pipeline(
    config: RunConfig,
    ablations: Optional[Sequence[Ablation]] = None,
    force: bool = False,
) -> Path:
    """Run every stage for the given variants (all six by default) and write the report."""
    ablations = list(ablations) if ablations is not None else list(VARIANT_ORDER)
    pipeline = Pipeline(config, force=force)
    targets = [f"evaluate-{a.value}" for a in ablations] + ["baselines"]
    pipeline.run(targets)
    report([pipeline.root], pipeline.root / "report")
    logger.info("pipeline finished: %s", pipeline.stats())
    return pipeline.root


# Report


def _report_from_metrics(payload: Dict[str, Any], task: str) -> Optional[MetricsReport]:
    data = payload.get(task)
    if not data:
        return None
    return MetricsReport(
        task=task,
        accuracy=data["accuracy"],
        mcc=data["mcc"],
        counts=ConfusionCounts(**data["confusion"]),
        class_counts=data["class_counts"],
        auc=data.get("auc"),
        seed=data.get("seed"),
        config_digest=data.get("config_digest"),
        model=data.get("model", "econ"),
    )


def collect_runs(run_dirs: Sequence[Path]) -> List[RunSummary]:
    runs: List[RunSummary] = []
    for run_dir in map(Path, run_dirs):
        found = False
        for metrics_path in sorted(run_dir.glob(f"evaluate-*/{METRICS_FILE}")):
            payload = json.loads(metrics_path.read_text())
            runs.append(
                RunSummary(
                    name=f"{run_dir.name}/{payload['ablation']}",
                    ablation=payload["ablation"],
                    movement=_report_from_metrics(payload, "movement"),
                    volatility=_report_from_metrics(payload, "volatility"),
                    config=payload.get("config", {}),
                    tweets=payload.get("tweets"),
                )
            )
            found = True
        baselines_path = run_dir / "baselines" / METRICS_FILE
        if baselines_path.exists():
            for payload in json.loads(baselines_path.read_text())["baselines"]:
                runs.append(
                    RunSummary(
                        name=f"{run_dir.name}/{payload['model']}",
                        movement=_report_from_metrics(payload, "movement"),
                        volatility=_report_from_metrics(payload, "volatility"),
                        config=payload.get("config", {}),
                    )
                )
            found = True
        if not found:
            logger.warning("no metrics under %s; listed as absent", run_dir)
            runs.append(RunSummary(name=f"{run_dir.name} (absent)"))
    return runs


def _plot_k_curve(run_dirs: Sequence[Path], path: Path, plt) -> bool:
    fig, ax = plt.subplots(figsize=(6, 4))
    drawn = False
    for run_dir in run_dirs:
        association = Path(run_dir) / "filter" / ASSOCIATION_FILE
        if not association.exists():
            continue
        payload = json.loads(association.read_text())
        curve = [(p["k"], p["v"] if p["v"] is not None else 0.0) for p in payload.get("k_curve", [])]
        if not curve:
            continue
        ks, vs = zip(*curve)
        ax.plot(ks, vs, marker="o", label=Path(run_dir).name)
        if isinstance(payload.get("chosen_k"), int):
            ax.axvline(payload["chosen_k"], linestyle="--", alpha=0.4)
        drawn = True
    ax.set_xlabel("tweets per stock-day (k)")
    ax.set_ylabel("Cramer's V")
    ax.set_title("Sentiment / movement association")
    if drawn:
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
    plt.close(fig)
    return drawn


def _plot_training(run_dirs: Sequence[Path], path: Path, plt) -> bool:
    fig, (loss_ax, acc_ax) = plt.subplots(1, 2, figsize=(10, 4))
    drawn = False
    for run_dir in run_dirs:
        for log_path in sorted(Path(run_dir).glob(f"train-*/{TRAINING_LOG}")):
            history = pd.read_json(log_path, lines=True)
            if history.empty:
                continue
            label = f"{Path(run_dir).name}/{log_path.parent.name.removeprefix('train-')}"
            loss_ax.plot(history["epoch"], history["movement_loss"] + history["volatility_loss"], label=label)
            acc_ax.plot(history["epoch"], history["val_accuracy"], label=label)
            drawn = True
    loss_ax.set_xlabel("epoch")
    loss_ax.set_ylabel("training loss per sample")
    acc_ax.set_xlabel("epoch")
    acc_ax.set_ylabel("validation movement accuracy")
    if drawn:
        acc_ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
    plt.close(fig)
    return drawn


def _plot_roc(run_dirs: Sequence[Path], path: Path, plt) -> bool:
    from sklearn.metrics import roc_curve

    fig, ax = plt.subplots(figsize=(5, 5))
    drawn = False
    for run_dir in run_dirs:
        for predictions_path in sorted(Path(run_dir).glob(f"evaluate-*/{PREDICTIONS_FILE}")):
            frame = pd.read_csv(predictions_path)
            if frame["volatility"].nunique() < 2:
                continue
            fpr, tpr, _ = roc_curve(frame["volatility"], frame["volatility_prob"])
            label = f"{Path(run_dir).name}/{predictions_path.parent.name.removeprefix('evaluate-')}"
            ax.plot(fpr, tpr, label=label)
            drawn = True
    ax.plot([0, 1], [0, 1], linestyle=":", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("Abnormal volatility ROC")
    if drawn:
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
    plt.close(fig)
    return drawn


def report(run_dirs: Sequence[Path], out_dir: Path) -> Dict[str, Path]:
    """Comparison CSV plus k-curve, training-curve and ROC plots for finished runs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not run_dirs:
        raise ContractError("report needs at least one run directory")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = comparison_table(collect_runs(run_dirs))
    written = {"comparison": out_dir / "comparison.csv"}
    table.to_csv(written["comparison"], index=False, lineterminator="\n")
    for name, plot in (("k_curve", _plot_k_curve), ("training_curves", _plot_training), ("roc", _plot_roc)):
        path = out_dir / f"{name}.png"
        if plot(run_dirs, path, plt):
            written[name] = path
    logger.info("report written to %s (%d rows)", out_dir, len(table))
    return written
