from .core import (
    Ack,
    LimitExceededError,
    ModelDescriptor,
    NotJoinedError,
    ServiceError,
    SessionService,
    TokenConflictError,
    UnknownModelError,
    UnknownTokenError,
)
from .store import DataStore

__all__ = [
    "Ack",
    "DataStore",
    "LimitExceededError",
    "ModelDescriptor",
    "NotJoinedError",
    "ServiceError",
    "SessionService",
    "TokenConflictError",
    "UnknownModelError",
    "UnknownTokenError",
]
