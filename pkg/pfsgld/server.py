from typing import List, Optional

from dotenv import load_dotenv
from loguru import logger
from mcp.server.fastmcp import FastMCP

from pfsgld.config import generate_config, ksd_config, sgld_config, sweep_plan
from pfsgld.services.experiment_service import ExperimentService
from pfsgld.settings import Settings
from pfsgld.utils.logging_utils import configure_logging

# Load environment variables from .env file
load_dotenv()

settings = Settings.from_env()
configure_logging(settings.log_level)

# Initialize experiment service
experiment_service = ExperimentService(settings)

# Initialize FastMCP
mcp = FastMCP("PF-SGLD Experiment Server")


def _fmt(values: List[float]) -> str:
    return ", ".join(f"{v:.6g}" for v in values)


@mcp.tool()
def generate_data(model: str = "lgssm", T: int = 256, seed: int = 0, out: str = "runs/data.csv",
                  params: Optional[List[float]] = None) -> str:
    """
    Simulate a synthetic series from an LGSSM, SVM or GARCH model.

    Args:
        model: lgssm, svm or garch
        T: Number of observations
        seed: Random seed
        out: Output CSV path
        params: Natural parameters (phi, sigma, tau) or (mu, phi, lambda, tau); defaults to the synthetic-experiment values

    Returns:
        str: Output and manifest paths
    """
    try:
        result = experiment_service.generate(generate_config(model=model, T=T, seed=seed, params=params), out)
        return f"Generated {result['T']} {result['model']} observations: {result['path']} (manifest {result['manifest']})"
    except Exception as e:
        return f"Error generating data: {str(e)}"


@mcp.tool()
def make_reference(model: str, data: str, N: int = 100_000, seed: int = 0, out: Optional[str] = None,
                   params: Optional[List[float]] = None) -> str:
    """
    Cache the full-sequence particle reference gradient of a data file.

    Args:
        model: lgssm, svm or garch
        data: Observation CSV
        N: Number of particles
        seed: Random seed
        out: Cache path (defaults under PFSGLD_REFERENCE_DIR)
        params: Natural parameters at which the gradient is taken

    Returns:
        str: Cache path and reference gradient
    """
    try:
        result = experiment_service.make_reference(model, data, params, N, seed, out)
        return f"Reference gradient [{_fmt(result['gradient'])}] written to {result['path']}"
    except Exception as e:
        return f"Error making reference gradient: {str(e)}"


@mcp.tool()
def grad_bias(model: str, data: str, out: str, config: Optional[str] = None, reference: Optional[str] = None,
              n_reps: Optional[int] = None, seed: Optional[int] = None) -> str:
    """
    Run a gradient bias / MSE sweep over (S, B, N).

    Args:
        model: lgssm, svm or garch
        data: Observation CSV
        out: Result CSV path
        config: Sweep config file (S, B, N, schemes, n_reps, seed)
        reference: Reference cache; the LGSSM uses the Kalman score when omitted
        n_reps: Replications per cell
        seed: Master seed

    Returns:
        str: Result path and row count
    """
    try:
        plan = sweep_plan(config, n_reps=n_reps, seed=seed)
        result = experiment_service.grad_bias(model, data, plan, out, reference=reference)
        return f"Wrote {result['rows']} bias rows to {result['path']}"
    except Exception as e:
        return f"Error running bias sweep: {str(e)}"


@mcp.tool()
def run_sgld(model: str, data: str, out: str, preset: str = "buffered", config: Optional[str] = None,
             stepsize: Optional[float] = None, n_iter: Optional[int] = None, seed: Optional[int] = None,
             init: str = "prior") -> str:
    """
    Run a Buffered PF-SGLD chain.

    Args:
        model: lgssm, svm or garch
        data: Training series CSV
        out: Chain CSV path
        preset: full, buffered, no_buffer, fully_buffered or weekly
        config: SGLD config file
        stepsize: Stepsize before division by the number of observations
        n_iter: Iterations
        seed: Random seed
        init: prior, truth or exchange

    Returns:
        str: Chain path and posterior mean
    """
    try:
        cfg = sgld_config(config, preset=preset, stepsize=stepsize, n_iter=n_iter, seed=seed)
        results = experiment_service.run_sgld(model, data, cfg, out, init=init)
        lines = [f"{r['path']}: posterior mean [{_fmt(r['posterior_mean'])}]" for r in results]
        return "\n".join(lines)
    except Exception as e:
        return f"Error running SGLD: {str(e)}"


@mcp.tool()
def evaluate_chain(chain: str, test: str, out: str, every: int = 10, r: int = 3, N: int = 1000) -> str:
    """
    Heldout and r-step predictive loglikelihood along a saved chain.

    Args:
        chain: Chain CSV written by run_sgld
        test: Test series CSV
        out: Result CSV path
        every: Evaluate every k-th sample
        r: Prediction horizon; the term at t scores y_{t+r-1} given y_{1:t-1}, so r=1 is the
            one-step (heldout) term and r=k is horizon k-1 in the y_{t+r} convention
        N: Number of particles

    Returns:
        str: Result path
    """
    try:
        result = experiment_service.evaluate(chain, test, out, every, (r,), N)
        return f"Wrote {result['rows']} evaluation rows to {result['path']}"
    except Exception as e:
        return f"Error evaluating chain: {str(e)}"


@mcp.tool()
def ksd_report(chains: List[str], data: str, out: str, burnin: Optional[int] = None, seed: int = 0) -> str:
    """
    Kernel Stein discrepancy report (log10, mean and SD per method).

    Args:
        chains: Chain CSV paths
        data: Training series the chains were run on
        out: Report CSV path
        burnin: Samples to drop (default: first half)
        seed: Seed of the score estimates

    Returns:
        str: Report path
    """
    try:
        result = experiment_service.ksd(chains, data, ksd_config(burnin=burnin, seed=seed), out)
        return f"Wrote KSD report ({result['rows']} rows) to {result['path']}"
    except Exception as e:
        return f"Error computing KSD: {str(e)}"


@mcp.tool()
def ingest_prices(prices: str, out: str, weekly: bool = True) -> str:
    """
    Demeaned log-returns from a price CSV, split into ISO weeks.

    Args:
        prices: CSV with columns [timestamp,]price
        out: Output series CSV
        weekly: Segment by ISO week when timestamps are present

    Returns:
        str: Output path
    """
    try:
        result = experiment_service.ingest(prices, out, weekly)
        return f"Wrote {result['rows']} returns to {result['path']}"
    except Exception as e:
        return f"Error ingesting prices: {str(e)}"


def main():
    logger.info("Starting PF-SGLD MCP server")
    mcp.run()


if __name__ == "__main__":
    main()
