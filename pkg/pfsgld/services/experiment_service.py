import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, TypedDict, Union

import numpy as np
from loguru import logger

from pfsgld.config import GenerateConfig, KsdConfig
from pfsgld.data import SegmentedSeries, ingest_prices, load_series, write_series, write_trajectory
from pfsgld.diagnostics import SweepPlan, chain_ksd, evaluate_chain, grad_bias_experiment, ksd_report
from pfsgld.exceptions import DataError, DomainError, MissingReferenceError, PfsgldError
from pfsgld.gradient import GradientReference, reference_for
from pfsgld.model import EXCHANGE_RATE_INIT, SYNTHETIC_PARAMS, ModelKind, ModelParams, get_model
from pfsgld.settings import Settings
from pfsgld.sgld import Chain, SgldConfig, posterior_mean, run_chain
from pfsgld.utils.io_utils import RunManifest, blob_hash, read_manifest, write_csv, write_manifest
from pfsgld.utils.rng_utils import derived_seed

PathLike = Union[str, Path]


class GenerateResult(TypedDict):
    path: str
    manifest: str
    model: str
    T: int


class ReferenceResult(TypedDict):
    path: str
    manifest: str
    model: str
    N: Optional[int]
    gradient: List[float]


class TableResult(TypedDict):
    path: str
    manifest: str
    rows: int


class ChainResult(TypedDict):
    path: str
    manifest: str
    stepsize: float
    posterior_mean: List[float]
    evaluation: Optional[str]


def _resolve_params(kind: ModelKind, params: Optional[Sequence[float]]) -> ModelParams:
    if params is None:
        return SYNTHETIC_PARAMS[kind]
    return ModelParams.from_natural(kind, params)


def _run_chain_job(kind: ModelKind, init, y, config: SgldConfig, chain_index: int, record_timing: bool):
    model = get_model(kind)
    rng = np.random.default_rng(derived_seed(config.seed, chain_index))
    if init == "prior":
        params0 = model.sample_initial_params(rng)
    elif init == "truth":
        params0 = SYNTHETIC_PARAMS[kind]
    elif init == "exchange":
        if kind not in EXCHANGE_RATE_INIT:
            raise DomainError(f"no exchange-rate starting point for {kind.value}")
        params0 = EXCHANGE_RATE_INIT[kind]
    else:
        params0 = ModelParams.from_natural(kind, init)
    return run_chain(model, params0, y, config, rng, record_timing=record_timing), params0


class ExperimentService:
    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or Settings.from_env()
        logger.info("Initialized experiment service with output dir: {}", self.settings.output_dir)

    @property
    def record_timing(self) -> bool:
        return self.settings.record_timing

    def _manifest(self, command: str, seed=None, config=None, inputs: Sequence[PathLike] = (), outputs=(), start=None):
        return RunManifest(
            command=command,
            seed=seed,
            config=config or {},
            inputs={str(p): blob_hash(p) for p in inputs},
            outputs=[str(p) for p in outputs],
            wall_time_s=None if start is None else time.perf_counter() - start,
        )

    def _write_manifest(self, manifest: RunManifest, out: PathLike) -> str:
        return str(write_manifest(manifest, out, record_timing=self.record_timing))

    def generate(self, config: GenerateConfig, out: PathLike) -> GenerateResult:
        """Simulate a synthetic trajectory and write it with its manifest."""
        try:
            start = time.perf_counter()
            params = config.model_params()
            trajectory = get_model(params).simulate(params, config.T, np.random.default_rng(config.seed))
            write_trajectory(trajectory, out)
            snapshot = config.model_dump(mode="json")
            snapshot["natural_params"] = params.as_dict()
            manifest = self._manifest("generate", config.seed, snapshot, outputs=[out], start=start)
            logger.info("Generated {} observations of {} into {}", config.T, params, out)
            return GenerateResult(
                path=str(out), manifest=self._write_manifest(manifest, out), model=params.kind.value, T=config.T
            )
        except PfsgldError as e:
            logger.error(f"Error in generate: {str(e)}")
            raise
        except OSError as e:
            logger.error(f"Error writing {out}: {str(e)}")
            raise DataError(f"cannot write output: {e}", path=str(out)) from e

    def default_reference_path(self, data: PathLike, kind: ModelKind) -> Path:
        return self.settings.reference_dir / f"{Path(data).stem}_{ModelKind(kind).value}.npz"

    def make_reference(
        self,
        kind: ModelKind,
        data: PathLike,
        params: Optional[Sequence[float]] = None,
        N: Optional[int] = 100_000,
        seed: int = 0,
        out: Optional[PathLike] = None,
        resolution: int = 8,
    ) -> ReferenceResult:
        """Cache the reference gradient g(T, 0, N) of a data file; N=None gives the Kalman score."""
        try:
            start = time.perf_counter()
            kind = ModelKind(kind)
            theta = _resolve_params(kind, params)
            series = load_series(data)
            if len(series) != 1:
                raise DataError("reference gradients need a single observation series", path=str(data))
            out = Path(out) if out is not None else self.default_reference_path(data, kind)
            reference = reference_for(theta, series.segments[0], N, np.random.default_rng(seed), resolution)
            reference.save(out)
            config = {"model": kind.value, "natural_params": theta.as_dict(), "N": N, "resolution": reference.resolution}
            manifest = self._manifest("make-reference", seed, config, inputs=[data], outputs=[out], start=start)
            return ReferenceResult(
                path=str(out),
                manifest=self._write_manifest(manifest, out),
                model=kind.value,
                N=N,
                gradient=reference.full.tolist(),
            )
        except PfsgldError as e:
            logger.error(f"Error in make_reference: {str(e)}")
            raise

    def load_reference(self, kind: ModelKind, data: PathLike, theta: ModelParams, path: Optional[PathLike]) -> GradientReference:
        series = load_series(data)
        if len(series) != 1:
            raise DataError("bias experiments need a single observation series", path=str(data))
        if path is None and kind == ModelKind.LGSSM:
            return GradientReference.from_kalman(theta, series.segments[0])
        path = Path(path) if path is not None else self.default_reference_path(data, kind)
        if not path.is_file():
            raise MissingReferenceError(str(path))
        reference = GradientReference.load(path)
        if reference.params != theta:
            raise DomainError(f"reference at {path} was computed at {reference.params}, not {theta}")
        return reference

    def grad_bias(
        self,
        kind: ModelKind,
        data: PathLike,
        plan: SweepPlan,
        out: PathLike,
        params: Optional[Sequence[float]] = None,
        reference: Optional[PathLike] = None,
    ) -> TableResult:
        """Bias / MSE sweep of the buffered estimators on a data file."""
        try:
            start = time.perf_counter()
            kind = ModelKind(kind)
            theta = _resolve_params(kind, params)
            ref = self.load_reference(kind, data, theta, reference)
            y = load_series(data).segments[0]
            table = grad_bias_experiment(plan, y, theta, ref, self.settings.threads, self.record_timing)
            write_csv(table, out)
            config = {"model": kind.value, "natural_params": theta.as_dict(), "plan": plan.model_dump(mode="json")}
            inputs = [data] if reference is None else [data, reference]
            manifest = self._manifest("grad-bias", plan.seed, config, inputs=inputs, outputs=[out], start=start)
            return TableResult(path=str(out), manifest=self._write_manifest(manifest, out), rows=len(table))
        except PfsgldError as e:
            logger.error(f"Error in grad_bias: {str(e)}")
            raise

    def run_sgld(
        self,
        kind: ModelKind,
        data: PathLike,
        config: SgldConfig,
        out: PathLike,
        init: Union[str, Sequence[float]] = "prior",
        eps_grid: Optional[Sequence[float]] = None,
        n_train: Optional[int] = None,
        test: Optional[PathLike] = None,
        eval_every: int = 10,
        r_values: Sequence[int] = (3,),
        eval_N: int = 1000,
    ) -> List[ChainResult]:
        """
        Run one SGLD chain per stepsize and write chain CSVs with manifests.

        With n_train the data segments are split into train and test parts and
        the test part is evaluated along the chain; a separate test file can be
        given instead.
        """
        try:
            kind = ModelKind(kind)
            series = load_series(data)
            test_series: Optional[SegmentedSeries] = load_series(test) if test is not None else None
            if n_train is not None:
                series, test_series = series.split(n_train)
            configs = [config] if not eps_grid else [config.model_copy(update={"stepsize": e}) for e in eps_grid]
            outs = [Path(out)] if len(configs) == 1 else [
                Path(out).with_name(f"{Path(out).stem}_eps{c.stepsize:g}{Path(out).suffix}") for c in configs
            ]
            jobs = [(kind, init, series.segments, c, i, self.record_timing) for i, c in enumerate(configs)]
            if self.settings.threads > 1 and len(jobs) > 1:
                with ProcessPoolExecutor(max_workers=self.settings.threads) as pool:
                    runs = list(pool.map(_run_chain_job, *zip(*jobs)))
            else:
                runs = [_run_chain_job(*job) for job in jobs]

            results = []
            inputs = [p for p in (data, test) if p is not None]
            for (chain, params0), c, path in zip(runs, configs, outs):
                chain.to_csv(path)
                evaluation = None
                if test_series is not None:
                    frame = evaluate_chain(chain, test_series.segments, eval_every, r_values, eval_N, c.seed, c.effective_burnin)
                    evaluation = str(write_csv(frame, path.with_name(path.stem + "_eval.csv")))
                snapshot = {
                    "model": kind.value,
                    "method": c.estimator.value,
                    "sgld": c.model_dump(mode="json"),
                    "initial_params": params0.as_dict(),
                    "n_train": n_train,
                }
                manifest = self._manifest(
                    "sgld",
                    c.seed,
                    snapshot,
                    inputs=inputs,
                    outputs=[str(path)] + ([evaluation] if evaluation else []),
                    start=None,
                )
                mean = posterior_mean(chain, c.effective_burnin, c.thin)
                results.append(
                    ChainResult(
                        path=str(path),
                        manifest=self._write_manifest(manifest, path),
                        stepsize=c.stepsize,
                        posterior_mean=mean.tolist(),
                        evaluation=evaluation,
                    )
                )
            return results
        except PfsgldError as e:
            logger.error(f"Error in run_sgld: {str(e)}")
            raise

    def load_chain(self, path: PathLike):
        """Chain plus its SGLD config, read back through the chain's manifest."""
        manifest = read_manifest(path)
        if manifest.command != "sgld":
            raise DataError(f"{path} was not produced by the sgld command", path=str(path))
        kind = ModelKind(manifest.config["model"])
        config = SgldConfig(**manifest.config["sgld"])
        chain = Chain.from_csv(path, kind, manifest.config.get("method", config.estimator.value))
        return chain, config, manifest

    def evaluate(
        self,
        chain_path: PathLike,
        test: PathLike,
        out: PathLike,
        every: int = 10,
        r_values: Sequence[int] = (3,),
        N: int = 1000,
        seed: int = 0,
        burnin: int = 0,
    ) -> TableResult:
        """Heldout and predictive loglikelihood traces of a saved chain."""
        try:
            chain, _, _ = self.load_chain(chain_path)
            frame = evaluate_chain(chain, load_series(test).segments, every, r_values, N, seed, burnin)
            write_csv(frame, out)
            config = {"every": every, "r_values": list(r_values), "N": N, "burnin": burnin}
            manifest = self._manifest("evaluate", seed, config, inputs=[chain_path, test], outputs=[out])
            return TableResult(path=str(out), manifest=self._write_manifest(manifest, out), rows=len(frame))
        except PfsgldError as e:
            logger.error(f"Error in evaluate: {str(e)}")
            raise

    def ksd(self, chain_paths: Sequence[PathLike], data: PathLike, config: KsdConfig, out: PathLike) -> TableResult:
        """KSD report over chains, grouped by estimator method."""
        try:
            if not chain_paths:
                raise DomainError("ksd needs at least one chain file")
            series = load_series(data)
            results = []
            models = set()
            for path in chain_paths:
                chain, sgld_config, manifest = self.load_chain(path)
                models.add(chain.kind)
                if len(models) > 1:
                    raise DomainError(f"chains mix models: {sorted(m.value for m in models)}")
                y = series.segments
                if manifest.config.get("n_train") is not None:
                    y = series.split(manifest.config["n_train"])[0].segments
                result = chain_ksd(chain, y, sgld_config, config.burnin, config.thin, config.seed)
                results.append((manifest.config.get("method", chain.estimator), chain.kind, result))
            table = ksd_report(results)
            write_csv(table, out)
            manifest = self._manifest(
                "ksd", config.seed, config.model_dump(mode="json"), inputs=[*chain_paths, data], outputs=[out]
            )
            return TableResult(path=str(out), manifest=self._write_manifest(manifest, out), rows=len(table))
        except PfsgldError as e:
            logger.error(f"Error in ksd: {str(e)}")
            raise

    def ingest(self, prices: PathLike, out: PathLike, weekly: bool = True) -> TableResult:
        """Demeaned (weekly segmented) log-returns from a price CSV."""
        try:
            series = ingest_prices(prices, weekly=weekly)
            write_series(series, out)
            config = {"weekly": weekly, "segments": len(series), "demeaning_mean": series.provenance["demeaning_mean"]}
            manifest = self._manifest("ingest", None, config, inputs=[prices], outputs=[out])
            return TableResult(path=str(out), manifest=self._write_manifest(manifest, out), rows=series.n_obs)
        except PfsgldError as e:
            logger.error(f"Error in ingest: {str(e)}")
            raise
