"""Storage port: abstract interface for run artifacts (checkpoints, datasets, reports)."""

from abc import ABC, abstractmethod


class StoragePort(ABC):
    """Paths are relative to the storage root and use forward slashes."""

    @abstractmethod
    async def save(self, path: str, content: bytes) -> str:
        """Write ``content`` to ``path``, replacing any existing file. Returns the resolved location."""
        ...

    @abstractmethod
    async def append(self, path: str, content: bytes) -> None:
        ...

    @abstractmethod
    async def read(self, path: str) -> bytes:
        """Raises MissingArtifactError when ``path`` does not exist."""
        ...

    @abstractmethod
    async def exists(self, path: str) -> bool:
        ...

    @abstractmethod
    async def delete(self, path: str) -> None:
        ...

    @abstractmethod
    async def list(self, prefix: str = "") -> list[str]:
        """Relative paths of all files under ``prefix``, sorted; a file prefix lists itself."""
        ...
