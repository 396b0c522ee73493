import numpy as np
import pytest

from theia.predicates import Photo
from tests import acceptance_log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_log.any_recorded():
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.lines():
        terminalreporter.write_line(line)


def uniform_photo(photo_id: str, rgb: tuple[int, int, int], w: int = 16, h: int = 12) -> Photo:
    pixels = np.zeros((h, w, 3), dtype=np.uint8)
    pixels[:, :] = rgb
    return Photo(id=photo_id, pixels=pixels)


def random_photo(photo_id: str, seed: int, w: int = 16, h: int = 12) -> Photo:
    rng = np.random.default_rng(seed)
    return Photo(id=photo_id, pixels=rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8))


@pytest.fixture
def blue_photo() -> Photo:
    return uniform_photo("blue", (0, 0, 255))


@pytest.fixture
def red_photo() -> Photo:
    return uniform_photo("red", (255, 0, 0))
