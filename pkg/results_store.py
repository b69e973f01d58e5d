import json
import os
import tempfile
from typing import Dict, Any, List, Optional

from runlog import get_current_time


RECORD_FIELDS = ("h", "l2_u", "h1semi_u", "l2_p", "h1semi_p", "l2_un", "l2_div", "dofs", "elements")


def series_key(formulation: str, order: int) -> str:
    return f"{formulation}-k{int(order)}"


def write_text_atomic(path: str, text: str, prefix: str = ".write.") -> None:
    """Write through a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=prefix, dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


class ResultsStore:
    """JSON-backed store of convergence records with atomic writes.

    - JSON schema:
      {
        "series": {
          "sf-k2": {"levels": {"0": {"h": ..., "l2_u": ..., ...}, "1": {...}},
                    "updated_at": "..."}
        }
      }
    - A record is written as soon as its grid point finishes, so an interrupted
      sweep keeps every completed level.
    """

    def __init__(self, path: str):
        self.path = path
        self.data: Dict[str, Any] = {"series": {}}
        self._loaded = False

    def _load_file(self) -> None:
        if self._loaded:
            return
        try:
            if os.path.exists(self.path):
                with open(self.path, "r", encoding="utf-8") as f:
                    self.data = json.load(f)
                    if "series" not in self.data or not isinstance(self.data["series"], dict):
                        self.data = {"series": {}}
            else:
                self.data = {"series": {}}
        except (OSError, ValueError):
            # unreadable store starts empty; next save overwrites it
            self.data = {"series": {}}
        finally:
            self._loaded = True

    def _save_atomic(self) -> None:
        write_text_atomic(self.path, json.dumps(self.data, ensure_ascii=False, indent=2, sort_keys=True), ".results.")

    def put(self, formulation: str, order: int, level: int, record: Dict[str, Any]) -> None:
        self._load_file()
        missing = [name for name in RECORD_FIELDS if name not in record]
        if missing:
            raise ValueError(f"Record is missing fields: {', '.join(missing)}")
        key = series_key(formulation, order)
        series = self.data["series"].setdefault(key, {"levels": {}})
        series["levels"][str(int(level))] = {name: record[name] for name in RECORD_FIELDS}
        series["updated_at"] = get_current_time().isoformat()
        self._save_atomic()

    def get(self, formulation: str, order: int, level: int) -> Dict[str, Any]:
        self._load_file()
        key = series_key(formulation, order)
        try:
            return dict(self.data["series"][key]["levels"][str(int(level))])
        except KeyError:
            raise KeyError(f"No record for {key} level {level}")

    def levels(self, formulation: str, order: int) -> List[int]:
        self._load_file()
        series = self.data["series"].get(series_key(formulation, order))
        if not series:
            return []
        return sorted(int(level) for level in series["levels"])

    def summary_path(self, name: Optional[str] = None) -> str:
        return os.path.join(os.path.dirname(os.path.abspath(self.path)), name or "eoc_summary.json")
