import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import requests
from pydantic import BaseModel

logger = logging.getLogger(__name__)


def remote_log(config: Dict[str, Any], content: str) -> None:
    """Ships a log document to the configured endpoint; a no-op unless remote logging is enabled."""
    if config.get('remote_log_enabled', False) is False:
        return

    endpoint = config.get('remote_log_endpoint')
    if not endpoint:
        logger.warning("Remote logging enabled but no remote_log_endpoint configured")
        return
    headers = {
        "X-API-Key": config.get('remote_log_api_key') or ""
    }
    try:
        requests.post(
            f"{endpoint}/log",
            headers=headers,
            json={"run_id": config.get('run_id'), "log_content": content},
            timeout=10,
        )
    except requests.RequestException as e:
        logger.warning(f"Remote log failed: {e}")


def canonical_json(obj: Any) -> str:
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json")
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj: Any) -> str:
    """SHA3-256 of the canonical JSON form of a config object."""
    return hashlib.sha3_256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]],
              digest: str = "") -> None:
    """CSV with an optional leading ``# config_digest: ...`` comment line."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        if digest:
            f.write(f"# config_digest: {digest}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_csv(path: Union[str, Path]) -> List[List[str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [row for row in csv.reader(line for line in f if not line.startswith("#"))]
