"""Shared fixtures and the end-of-run acceptance summary."""

import math

import numpy as np
import pytest

from gqsm.core import build_codebook, ebn0_to_n0, iq_decouple, modulate, rotated_constellation
from gqsm.priors import prior_matrix

ACCEPTANCE_LINES = []


class Frames:
    """A batch of GQSM frames through a Rayleigh channel, plus everything needed to detect."""

    def __init__(self, n_t, n_r, p, ebn0_db, count, seed, m=4):
        rng = np.random.default_rng(seed)
        self.codebook = build_codebook(n_t, p)
        self.pilots = rotated_constellation(m).pilots(p)
        self.prior = prior_matrix(self.codebook)
        nb = 2 * self.codebook.bits_per_rail
        self.bits = rng.integers(0, 2, (count, nb)).astype(np.uint8)
        self.frame = modulate(self.bits, self.codebook, self.pilots)
        shape = (count, n_r, n_t)
        self.h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
        self.n0 = ebn0_to_n0(ebn0_db, n_t, p, self.codebook) if ebn0_db is not None else 0.0
        w = (rng.standard_normal((count, n_r)) + 1j * rng.standard_normal((count, n_r)))
        self.y = (self.h @ self.frame.x[..., None])[..., 0] + math.sqrt(self.n0 / 2) * w
        self.sys = iq_decouple(self.h, self.n0)

    def bit_errors(self, result):
        return int(np.sum(result.bits_hat != self.bits))


@pytest.fixture
def make_frames():
    return Frames


def record_acceptance(line):
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
