"""Error hierarchy shared across the package.

DataError covers malformed inputs and files (CLI exit 2); BackendError covers
LLM/embedding transport failures (CLI exit 3).
"""


class EcptError(Exception):
    pass


class DataError(EcptError):
    pass


class BackendError(EcptError):
    pass
