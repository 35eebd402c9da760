import hashlib
import json
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd


def derive_seed(seed: int, *keys: Any) -> int:
    """
    Derive a 64-bit seed from a master `seed` and any number of `keys`. The result
    depends only on the values passed, never on call order, so streams derived for
    different rounds or clients are independent of scheduling.

    Example::

        >>> derive_seed(7, "client", 1, 3) == derive_seed(7, "client", 1, 3)
        True

    Args:
        seed: Master seed.
        *keys: Identifiers for the stream, e.g. a round index and a client id. They are
            converted with `str()`, so `1` and `"1"` derive the same seed.

    Returns:
        Non-negative integer below 2**64.
    """

    material = "/".join([str(int(seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *keys: Any) -> np.random.Generator:
    """
    Build a `numpy.random.Generator` seeded by `derive_seed(seed, *keys)`.
    """

    return np.random.default_rng(derive_seed(seed, *keys))


def format_float(value: float, places: int = 3) -> str:
    """
    Format `value` with a fixed number of decimal `places`, rounding half to even on
    the exact binary value, e.g. `0.0625` becomes `"0.062"`.
    """

    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(value).quantize(quantum, rounding=ROUND_HALF_EVEN))


def array_fingerprint(*arrays: np.ndarray) -> str:
    """
    Hex sha256 over the dtype, shape and raw bytes of each array in `arrays`.
    """

    hasher = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        hasher.update(str(array.dtype).encode("utf-8"))
        hasher.update(str(array.shape).encode("utf-8"))
        hasher.update(array.tobytes())
    return hasher.hexdigest()


def load_json(
    file_path: Union[str, Path],
) -> Dict[str, Any]:
    """
    Load `file_path` from JSON to dict.
    """

    file_path = Path(file_path)

    with open(file_path, "r") as f:
        loaded_json = json.load(f)

    return loaded_json


def load_csv(file_path: Union[str, Path], **kwargs) -> pd.DataFrame:
    """
    Load `file_path` from CSV to DataFrame. Floats are parsed with round-trip
    precision so values written at full `repr` precision load back unchanged.

    Args:
        file_path: Path to CSV file.
        **kwargs: Passed to `pandas.read_csv()`.
    """

    kwargs.setdefault("float_precision", "round_trip")
    return pd.read_csv(Path(file_path), **kwargs)


def write_csv(
    df: pd.DataFrame,
    out_dir: Union[str, Path],
    basename: str,
    **kwargs,
) -> Path:
    """
    Write `df` to a file named `basename`.csv in directory `out_dir`.

    Args:
        df: DataFrame to write.
        out_dir: Directory to write in.
        basename: Stem for the file name to write to.
        **kwargs: Passed to `DataFrame.to_csv()`.

    Returns:
        Path to the written CSV.
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{basename}.csv"
    df.to_csv(out_path, **kwargs)
    return out_path


def write_text(text: str, out_dir: Union[str, Path], filename: str) -> Path:
    """
    Write `text` to `out_dir`/`filename`, creating the directory if needed.
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / filename
    out_path.write_text(text, encoding="utf-8")
    return out_path
