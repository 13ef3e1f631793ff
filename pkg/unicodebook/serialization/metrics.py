"""Append-only metrics CSV: header first, one flushed row per training step."""

from __future__ import annotations

import asyncio
import csv
import io
from types import TracebackType

from unicodebook.domain.errors import UsageError
from unicodebook.domain.models import MetricsRow
from unicodebook.ports.storage import StoragePort


def csv_line(values: tuple | list) -> bytes:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="\n").writerow(values)
    return buffer.getvalue().encode("utf-8")


class MetricsSink:
    """
    Row callback that streams metrics into ``path`` through a storage port.

    Entering the context writes the header. Training runs in a worker thread
    (``asyncio.to_thread``) and every row it reports is appended on the event
    loop before the next step starts.
    """

    def __init__(self, storage: StoragePort, path: str) -> None:
        self._storage = storage
        self._path = path
        self._loop: asyncio.AbstractEventLoop | None = None

    async def __aenter__(self) -> MetricsSink:
        self._loop = asyncio.get_running_loop()
        await self._storage.save(self._path, csv_line(MetricsRow.HEADER))
        return self

    async def __aexit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self._loop = None

    def __call__(self, row: MetricsRow) -> None:
        loop = self._loop
        if loop is None:
            raise UsageError("MetricsSink used outside its context")
        try:
            running = asyncio.get_running_loop()
        except RuntimeError:
            running = None
        if running is loop:
            raise UsageError("MetricsSink rows must come from a worker thread, not the event loop")
        asyncio.run_coroutine_threadsafe(self._storage.append(self._path, csv_line(row.as_row())), loop).result()


def read_metrics(text: str) -> list[dict[str, str]]:
    reader = csv.DictReader(text.splitlines())
    if tuple(reader.fieldnames or ()) != MetricsRow.HEADER:
        raise UsageError(f"Unexpected metrics header {reader.fieldnames}")
    return list(reader)
