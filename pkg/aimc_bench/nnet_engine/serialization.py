import hashlib
import logging
from pathlib import Path
from typing import Union

import numpy as np

from aimc_bench.errors import SchemaVersionError
from aimc_bench.nnet_engine.network import Network
from aimc_bench.search_space import format_encoding

logger = logging.getLogger(__name__)

WEIGHTS_FORMAT_VERSION = 1


def save_weights(net: Network, path: Union[str, Path]) -> str:
    """Writes parameters and batch-norm buffers to an .npz container; returns its SHA3-256 digest."""
    state = net.state_dict()
    with open(path, "wb") as f:
        np.savez(f, __format_version__=np.array(WEIGHTS_FORMAT_VERSION),
                 __encoding__=np.array(format_encoding(net.encoding)), **state)
    digest = hashlib.sha3_256(Path(path).read_bytes()).hexdigest()
    logger.info(f"Saved {len(state)} tensors to {path} (sha3 {digest[:12]})")
    return digest


def load_weights(net: Network, path: Union[str, Path]) -> str:
    with np.load(path) as data:
        version = int(data["__format_version__"])
        if version != WEIGHTS_FORMAT_VERSION:
            raise SchemaVersionError(version, WEIGHTS_FORMAT_VERSION)
        stored = str(data["__encoding__"])
        if stored != format_encoding(net.encoding):
            raise ValueError(f"Weights in {path} belong to cell {stored}, not {format_encoding(net.encoding)}")
        net.load_state_dict({name: data[name] for name in data.files if not name.startswith("__")})
    return hashlib.sha3_256(Path(path).read_bytes()).hexdigest()
