"""Local artifact storage."""

import pytest

from unicodebook.adapters.storage.local import LocalStorageAdapter
from unicodebook.domain.errors import MissingArtifactError


@pytest.mark.asyncio
async def test_save_and_read(storage: LocalStorageAdapter):
    location = await storage.save("runs/a/checkpoint.ucbk", b"\x00\x01payload")
    assert location.endswith("checkpoint.ucbk")
    assert await storage.read("runs/a/checkpoint.ucbk") == b"\x00\x01payload"
    assert await storage.exists("runs/a/checkpoint.ucbk")


@pytest.mark.asyncio
async def test_save_replaces_without_leftovers(storage: LocalStorageAdapter):
    await storage.save("report.json", b"{}")
    await storage.save("report.json", b'{"a": 1}')
    assert await storage.read("report.json") == b'{"a": 1}'
    assert await storage.list() == ["report.json"]


@pytest.mark.asyncio
async def test_append_accumulates(storage: LocalStorageAdapter):
    await storage.append("log/metrics.csv", b"step,mse\n")
    await storage.append("log/metrics.csv", b"1,0.5\n")
    assert await storage.read("log/metrics.csv") == b"step,mse\n1,0.5\n"


@pytest.mark.asyncio
async def test_read_missing(storage: LocalStorageAdapter):
    with pytest.raises(MissingArtifactError):
        await storage.read("nothing.bin")
    assert not await storage.exists("nothing.bin")


@pytest.mark.asyncio
async def test_list_and_delete(storage: LocalStorageAdapter):
    await storage.save("dumps/b.ppm", b"P6")
    await storage.save("dumps/a.ppm", b"P6")
    await storage.save("manifest.json", b"{}")
    assert await storage.list("dumps") == ["dumps/a.ppm", "dumps/b.ppm"]
    assert await storage.list("absent") == []
    assert await storage.list("manifest.json") == ["manifest.json"]
    await storage.delete("dumps/a.ppm")
    await storage.delete("dumps/a.ppm")
    assert await storage.list() == ["dumps/b.ppm", "manifest.json"]


def test_root_is_created(tmp_path):
    adapter = LocalStorageAdapter(tmp_path / "deep" / "root")
    assert adapter.root.is_dir()
