# refil/service/data_service.py
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

from refil.autodiff import checkpoint
from refil.autodiff.model import Model
from refil.errors import ConfigError, UnknownModelError

logger = logging.getLogger("split-server")

SERVER_SUFFIX = ".server.rflm"


class ModelCatalog:
    """Immutable set of server-side models keyed by model id."""

    def __init__(self, models: Mapping[str, Model]):
        if not models:
            raise ConfigError("model catalog is empty")
        self._models: Dict[str, Model] = dict(models)

    @classmethod
    def from_directory(cls, directory: Union[str, Path]) -> "ModelCatalog":
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigError(f"model directory {directory} does not exist")
        models = {}
        for path in sorted(directory.glob(f"*{SERVER_SUFFIX}")):
            model_id = path.name[:-len(SERVER_SUFFIX)]
            models[model_id] = checkpoint.load(path)
            logger.info(f"Loaded server model '{model_id}' from {path}")
        if not models:
            raise ConfigError(f"no *{SERVER_SUFFIX} checkpoints in {directory}")
        return cls(models)

    def get_all_ids(self) -> List[str]:
        return sorted(self._models)

    def get_by_id(self, model_id: str) -> Optional[Model]:
        return self._models.get(model_id)

    def require(self, model_id: str) -> Model:
        model = self.get_by_id(model_id)
        if model is None:
            raise UnknownModelError(model_id, self.get_all_ids())
        return model

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._models

    def __len__(self) -> int:
        return len(self._models)
