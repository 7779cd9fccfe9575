from typing import Any, Optional, TypeVar

from pydantic import BaseModel, ValidationError

ModelT = TypeVar("ModelT", bound=BaseModel)


class FirstStageError(Exception):
    """
    Base class for every error the retrieval pipeline raises on purpose.

    The command line exits with exit_code when the error escapes a command.
    """

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(FirstStageError):
    exit_code = 64


class InputFormatError(FirstStageError):
    """
    A file could not be read or one of its records could not be parsed.

    Args:
        detail (str): What went wrong.
        path (Optional[str]): The offending file.
        line (Optional[int]): 1-based line number of the bad record, 0 when the file itself is unreadable.
    """

    exit_code = 65

    def __init__(
        self, detail: str, path: Optional[str] = None, line: Optional[int] = None
    ):
        location = ""
        if path is not None and line:
            location = f"{path}, line {line}: "
        elif path is not None:
            location = f"{path}: "
        elif line:
            location = f"line {line}: "
        super().__init__(f"{location}{detail}")
        self.path = path
        self.line = line


class DuplicateIdError(InputFormatError):
    pass


class ChunkingError(FirstStageError):
    exit_code = 65


class EmptyCollectionError(FirstStageError):
    exit_code = 65


class UnknownPassageError(FirstStageError):
    exit_code = 65


class DimensionMismatchError(FirstStageError):
    exit_code = 65


class IndexCompatibilityError(FirstStageError):
    exit_code = 65


class ContainerError(FirstStageError):
    exit_code = 66


def config_from(model_type: type[ModelT], **values: Any) -> ModelT:
    """
    Validates configuration values into a pydantic model, reporting failures as ConfigError.
    """
    try:
        return model_type(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model_type.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"invalid {model_type.__name__}: {problems}")
