import numpy as np


def derived_seed(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """
    Seed addressed by a path of integer keys under the master seed.

    The child for a one-key path `(i,)` is SeedSequence(master_seed).spawn(n)[i],
    so a chain or sweep cell depends only on the master seed and its position.

    Args:
        master_seed: Root seed
        *keys: Path, e.g. (cell_index, replicate)

    Returns:
        np.random.SeedSequence: Deterministic child for that path
    """
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in keys))
