"""
pfsgld command line.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
import json
from pathlib import Path
from typing import Callable, List, Optional

import typer
from pydantic import ValidationError

from pfsgld.config import EPS_GRID, generate_config, ksd_config, sgld_config, sweep_plan
from pfsgld.exceptions import ConfigError, PfsgldError
from pfsgld.model import ModelKind
from pfsgld.services.experiment_service import ExperimentService
from pfsgld.settings import Settings
from pfsgld.utils.logging_utils import configure_logging

app = typer.Typer(help="Buffered particle stochastic gradients and SGLD for state space models.", no_args_is_help=True)


def _floats(value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {value!r}") from e


def _ints(value: Optional[str], allow_inf: bool = False) -> Optional[List[Optional[int]]]:
    if value is None:
        return None
    out = []
    for token in (v.strip() for v in value.split(",")):
        if not token:
            continue
        if allow_inf and token.lower() in ("inf", "infinity"):
            out.append(None)
            continue
        try:
            out.append(int(float(token)))
        except ValueError as e:
            raise ConfigError(f"expected integers, got {token!r}") from e
    return out


def _service(ctx: typer.Context) -> ExperimentService:
    return ctx.obj


def _run(action: Callable[[], object]):
    try:
        result = action()
    except PfsgldError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=e.exit_code)
    typer.echo(json.dumps(result, indent=2, default=str))


@app.callback()
def main(
    ctx: typer.Context,
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker processes (default: PFSGLD_THREADS or cores)"),
    no_timing: bool = typer.Option(False, "--no-timing", help="Write zero wall times and no timestamps (byte-exact reruns)"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Log level (default: PFSGLD_LOG_LEVEL)"),
):
    try:
        settings = Settings.from_env()
        update = {}
        if threads is not None:
            update["threads"] = max(1, threads)
        if no_timing:
            update["record_timing"] = False
        if log_level is not None:
            update["log_level"] = log_level.upper()
        settings = Settings(**{**settings.model_dump(), **update})
    except ValidationError as e:
        typer.echo(f"Error: invalid option: {e}", err=True)
        raise typer.Exit(code=ConfigError.exit_code)
    except PfsgldError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=e.exit_code)
    configure_logging(settings.log_level)
    ctx.obj = ExperimentService(settings)


@app.command()
def generate(
    ctx: typer.Context,
    model: ModelKind = typer.Option(ModelKind.LGSSM, help="Model to simulate"),
    T: Optional[int] = typer.Option(None, "--T", help="Number of observations (default 256)"),
    seed: Optional[int] = typer.Option(None, help="Random seed"),
    out: Path = typer.Option(..., help="Trajectory CSV"),
    params: Optional[str] = typer.Option(None, help="Natural parameters, comma separated"),
    garch: Optional[str] = typer.Option(None, help="GARCH alpha,beta,gamma,tau"),
    config: Optional[Path] = typer.Option(None, help="Config file"),
):
    """Simulate a synthetic trajectory."""
    _run(lambda: _service(ctx).generate(
        generate_config(config, model=model, T=T, seed=seed, params=_floats(params), garch_coefficients=_floats(garch)),
        out,
    ))


@app.command("make-reference")
def make_reference(
    ctx: typer.Context,
    model: ModelKind = typer.Option(..., help="Model"),
    data: Path = typer.Option(..., help="Observation CSV"),
    N: str = typer.Option("100000", "--N", help="Particles, or 'inf' for the Kalman score (LGSSM)"),
    seed: int = typer.Option(0, help="Random seed"),
    out: Optional[Path] = typer.Option(None, help="Cache path (default under PFSGLD_REFERENCE_DIR)"),
    params: Optional[str] = typer.Option(None, help="Natural parameters, comma separated"),
    resolution: int = typer.Option(8, help="Block size of the cached per-index contributions"),
):
    """Cache the reference gradient g(T, 0, N)."""
    def action():
        particles = _ints(N, allow_inf=True)
        if not particles or len(particles) != 1:
            raise ConfigError(f"--N takes one value, got {N!r}")
        return _service(ctx).make_reference(model, data, _floats(params), particles[0], seed, out, resolution)

    _run(action)


@app.command("grad-bias")
def grad_bias(
    ctx: typer.Context,
    model: ModelKind = typer.Option(..., help="Model"),
    data: Path = typer.Option(..., help="Observation CSV"),
    out: Path = typer.Option(..., help="Result CSV"),
    config: Optional[Path] = typer.Option(None, help="Sweep config file"),
    S: Optional[str] = typer.Option(None, "--S", help="Subsequence lengths"),
    B: Optional[str] = typer.Option(None, "--B", help="Buffer sizes"),
    N: Optional[str] = typer.Option(None, "--N", help="Particle counts ('inf' for Kalman)"),
    scheme: Optional[str] = typer.Option(None, help="uniform_start and/or strict_partition"),
    n_reps: Optional[int] = typer.Option(None, help="Replications per cell"),
    seed: Optional[int] = typer.Option(None, help="Master seed"),
    reference: Optional[Path] = typer.Option(None, help="Reference cache"),
    params: Optional[str] = typer.Option(None, help="Natural parameters, comma separated"),
):
    """Gradient bias / MSE sweep."""
    def action():
        schemes = None if scheme is None else [s.strip() for s in scheme.split(",") if s.strip()]
        plan = sweep_plan(
            config, S=_ints(S), B=_ints(B), N=_ints(N, allow_inf=True), schemes=schemes, n_reps=n_reps, seed=seed
        )
        return _service(ctx).grad_bias(model, data, plan, out, _floats(params), reference)

    _run(action)


@app.command()
def sgld(
    ctx: typer.Context,
    model: ModelKind = typer.Option(..., help="Model"),
    data: Path = typer.Option(..., help="Training series CSV"),
    out: Path = typer.Option(..., help="Chain CSV"),
    config: Optional[Path] = typer.Option(None, help="SGLD config file"),
    preset: Optional[str] = typer.Option(None, help="full, buffered, no_buffer, fully_buffered or weekly"),
    stepsize: Optional[float] = typer.Option(None, help="Stepsize eps"),
    eps: Optional[str] = typer.Option(None, help="Several stepsizes, one chain each"),
    eps_grid: bool = typer.Option(False, "--eps-grid", help="One chain per eps in {1, 0.1, 0.01, 0.001}"),
    n_iter: Optional[int] = typer.Option(None, help="Iterations"),
    S: Optional[int] = typer.Option(None, "--S", help="Subsequence length"),
    B: Optional[int] = typer.Option(None, "--B", help="Buffer size"),
    N: Optional[int] = typer.Option(None, "--N", help="Particles"),
    backend: Optional[str] = typer.Option(None, help="pf or kalman"),
    seed: Optional[int] = typer.Option(None, help="Random seed"),
    init: str = typer.Option("prior", help="prior, truth, exchange or natural parameters"),
    test: Optional[Path] = typer.Option(None, help="Test series evaluated along the chain"),
    n_train: Optional[int] = typer.Option(None, help="Split the data segments into train/test"),
    eval_every: int = typer.Option(10, help="Evaluate every k-th sample"),
    r: str = typer.Option("3", "--r", help="Predictive horizons; r scores y_{t+r-1} given y_{1:t-1}, so r=1 is one step ahead and r=k is horizon k-1 in the y_{t+r} convention"),
    eval_N: int = typer.Option(1000, help="Particles for evaluation"),
):
    """Run Buffered PF-SGLD chains."""
    def action():
        cfg = sgld_config(
            config, preset=preset, stepsize=stepsize, n_iter=n_iter, S=S, B=B, N=N, backend=backend, seed=seed
        )
        grid = list(EPS_GRID) if eps_grid else _floats(eps)
        start = init if init in ("prior", "truth", "exchange") else _floats(init)
        return _service(ctx).run_sgld(
            model, data, cfg, out, start, grid, n_train, test, eval_every, _ints(r), eval_N
        )

    _run(action)


@app.command()
def evaluate(
    ctx: typer.Context,
    chain: Path = typer.Option(..., help="Chain CSV"),
    test: Path = typer.Option(..., help="Test series CSV"),
    out: Path = typer.Option(..., help="Result CSV"),
    every: int = typer.Option(10, help="Evaluate every k-th sample"),
    r: str = typer.Option("3", "--r", help="Predictive horizons; r scores y_{t+r-1} given y_{1:t-1}, so r=1 is one step ahead and r=k is horizon k-1 in the y_{t+r} convention"),
    N: int = typer.Option(1000, "--N", help="Particles"),
    seed: int = typer.Option(0, help="Random seed"),
    burnin: int = typer.Option(0, help="Samples to skip"),
):
    """Heldout and predictive loglikelihood along a chain."""
    _run(lambda: _service(ctx).evaluate(chain, test, out, every, _ints(r), N, seed, burnin))


@app.command()
def ksd(
    ctx: typer.Context,
    chains: List[Path] = typer.Argument(..., help="Chain CSVs"),
    data: Path = typer.Option(..., help="Training series CSV"),
    out: Path = typer.Option(..., help="Report CSV"),
    config: Optional[Path] = typer.Option(None, help="KSD config file"),
    burnin: Optional[int] = typer.Option(None, help="Samples to drop (default: first half)"),
    thin: Optional[int] = typer.Option(None, help="Thinning"),
    seed: Optional[int] = typer.Option(None, help="Seed of the score estimates"),
):
    """KSD report per method."""
    _run(lambda: _service(ctx).ksd(chains, data, ksd_config(config, burnin=burnin, thin=thin, seed=seed), out))


@app.command()
def ingest(
    ctx: typer.Context,
    prices: Path = typer.Option(..., help="Price CSV with columns [timestamp,]price"),
    out: Path = typer.Option(..., help="Series CSV"),
    weekly: bool = typer.Option(True, "--weekly/--no-weekly", help="Segment by ISO week"),
):
    """Demeaned log-returns from prices."""
    _run(lambda: _service(ctx).ingest(prices, out, weekly))


if __name__ == "__main__":
    app()
