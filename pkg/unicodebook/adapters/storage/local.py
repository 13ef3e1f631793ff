"""Local filesystem storage adapter."""

import logging
from pathlib import Path

import aiofiles
import aiofiles.os

from unicodebook.domain.errors import MissingArtifactError
from unicodebook.ports.storage import StoragePort

logger = logging.getLogger(__name__)


class LocalStorageAdapter(StoragePort):
    """Store run artifacts under one directory on the local filesystem."""

    def __init__(self, base_path: str | Path) -> None:
        self._base = Path(base_path)
        self._base.mkdir(parents=True, exist_ok=True)
        logger.debug("LocalStorage initialized at: %s", self._base.resolve())

    @property
    def root(self) -> Path:
        return self._base

    def _resolve(self, path: str) -> Path:
        return self._base / path

    async def save(self, path: str, content: bytes) -> str:
        """Write via a temporary sibling and rename, so readers never see a partial file."""
        target = self._resolve(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        async with aiofiles.open(tmp, "wb") as f:
            await f.write(content)
        await aiofiles.os.replace(str(tmp), str(target))
        logger.debug("Saved file: %s (%d bytes)", path, len(content))
        return str(target)

    async def append(self, path: str, content: bytes) -> None:
        target = self._resolve(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(target, "ab") as f:
            await f.write(content)
            await f.flush()

    async def read(self, path: str) -> bytes:
        target = self._resolve(path)
        if not target.is_file():
            raise MissingArtifactError(f"Artifact not found: {target}")
        async with aiofiles.open(target, "rb") as f:
            content = await f.read()
        logger.debug("Read file: %s (%d bytes)", path, len(content))
        return content

    async def exists(self, path: str) -> bool:
        return await aiofiles.os.path.exists(str(self._resolve(path)))

    async def delete(self, path: str) -> None:
        target = self._resolve(path)
        if target.exists():
            await aiofiles.os.remove(str(target))
            logger.info("Deleted file: %s", path)
        else:
            logger.warning("File not found for deletion: %s", path)

    async def list(self, prefix: str = "") -> list[str]:
        root = self._resolve(prefix)
        if root.is_file():
            return [prefix]
        if not root.exists():
            return []
        return sorted(str(p.relative_to(self._base)) for p in root.rglob("*") if p.is_file())
