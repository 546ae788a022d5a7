import logging
from concurrent.futures import ThreadPoolExecutor

import pytest

from core.logger import NO_IMAGE, image_scope, log


class _Collect(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.records = []

    def emit(self, record):
        self.records.append(record)


@pytest.fixture
def collected():
    handler = _Collect()
    log.addHandler(handler)
    yield handler.records
    log.removeHandler(handler)


def test_records_outside_an_image_are_untagged(collected):
    log.debug("startup")
    assert collected[-1].image == NO_IMAGE


def test_scope_tags_and_restores(collected):
    with image_scope("tile.png"):
        log.debug("inside")
    log.debug("after")
    assert [r.image for r in collected] == ["tile.png", NO_IMAGE]


def test_worker_threads_keep_their_own_image(collected):
    def work(name):
        with image_scope(name):
            log.debug(name)

    names = [f"synth_{i:03d}.png" for i in range(8)]
    with ThreadPoolExecutor(max_workers=4) as executor:
        list(executor.map(work, names))
    assert all(r.image == r.getMessage() for r in collected)
    assert sorted(r.image for r in collected) == names
