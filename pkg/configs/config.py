import json
import logging
import os
from functools import lru_cache
from multiprocessing import cpu_count

logger = logging.getLogger(__name__)

config_dir = os.path.dirname(os.path.abspath(__file__))
fit_config_file = "fit.json"
LOG_FORMAT = "%(asctime)s\t%(name)s\t%(levelname)s\t%(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class HParams:
    """Read-only attribute view of a loaded JSON object; nested objects nest."""

    def __init__(self, **kwargs):
        self._values = {k: HParams(**v) if isinstance(v, dict) else v for k, v in kwargs.items()}

    def __getattr__(self, key):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def __contains__(self, key):
        return key in self._values

    def get(self, key, default=None):
        return self._values.get(key, default)

    def to_dict(self):
        return {k: v.to_dict() if isinstance(v, HParams) else v for k, v in self._values.items()}

    def __repr__(self):
        return "HParams(%r)" % self.to_dict()


def get_hparams_from_file(config_path):
    with open(config_path, "r", encoding="utf-8") as f:
        return HParams(**json.load(f))


def load_study_config(name_or_path):
    """Study preset by name (``configs/studies/<name>.json``) or by path."""
    path = name_or_path
    if not os.path.exists(path):
        preset = os.path.join(config_dir, "studies", "%s.json" % name_or_path)
        if os.path.exists(preset):
            path = preset
    hps = get_hparams_from_file(path)
    logger.debug("loaded study config %s", path)
    return hps


def log_level_from_env(default="INFO"):
    level = os.environ.get("BITMAT_LOG", default).strip().upper()
    if level not in LOG_LEVELS:
        logger.warning("unknown BITMAT_LOG level %r, using %s", level, default)
        level = default
    return level


def setup_logging(level=None):
    level = level or log_level_from_env()
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)
    # joblib chatter stays below WARNING
    logging.getLogger("joblib").setLevel(logging.WARNING)
    return level


def threads_from_env() -> int:
    raw = os.environ.get("BITMAT_THREADS", "")
    if not raw:
        return cpu_count()
    try:
        n = int(raw)
    except ValueError:
        logger.warning("BITMAT_THREADS=%r is not an integer, using %d", raw, cpu_count())
        return cpu_count()
    return max(1, n)


class Config:
    """Process settings: log level, worker count and the fit defaults in fit.json."""

    def __init__(self):
        self.log_level = log_level_from_env()
        self.n_threads = threads_from_env()
        with open(os.path.join(config_dir, fit_config_file), "r", encoding="utf-8") as f:
            self.json_config = json.load(f)

    @property
    def fit_defaults(self) -> dict:
        return dict(self.json_config)


@lru_cache(maxsize=None)
def get_config() -> Config:
    """The process-wide Config, read from the environment on first use."""
    return Config()
