import pathlib
from typing import Optional, Union


class GraphDistillError(Exception):
    pass


class GraphError(GraphDistillError):
    pass


class DataError(GraphDistillError):
    pass


class ConfigError(GraphDistillError):
    pass


class ParseError(GraphDistillError):
    def __init__(
        self,
        message: str,
        path: Optional[Union[str, pathlib.Path]] = None,
        line_no: Optional[int] = None,
    ) -> None:
        self.path = path
        self.line_no = line_no
        if path is not None:
            message += f" in {path}"
        if line_no is not None:
            message += f" at line {line_no}"
        super().__init__(message)


class SpectralError(GraphDistillError):
    pass


class ShapeError(GraphDistillError):
    pass


class TrainingError(GraphDistillError):
    def __init__(self, message: str, epoch: Optional[int] = None) -> None:
        self.epoch = epoch
        if epoch is not None:
            message += f" at epoch {epoch}"
        super().__init__(message)
