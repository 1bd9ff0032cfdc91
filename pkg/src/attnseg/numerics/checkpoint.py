"""Parameter checkpoints: named row-major float64 arrays plus a JSON header."""

import json

import numpy as np

FORMAT = "attnseg-checkpoint/1"


def save_checkpoint(path, params, config):
    """Write ``params`` (name -> array) and a JSON-serialisable ``config``."""
    header = {"format": FORMAT, "config": config,
              "params": [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()]}
    arrays = {f"p/{k}": np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Return ``(params, config)`` as written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not an attnseg checkpoint")
        params = {}
        for entry in header["params"]:
            arr = z[f"p/{entry['name']}"]
            if list(arr.shape) != entry["shape"]:
                raise ValueError(f"{path}: shape mismatch for {entry['name']}")
            params[entry["name"]] = arr
    return params, header["config"]
