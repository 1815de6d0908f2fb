import numpy as np
import pytest


def random_homography(rng, scale=1.0):
    """Mild projective transform around a 960x540 frame."""
    H = np.eye(3)
    H[:2, :2] += rng.normal(0, 0.05 * scale, (2, 2))
    H[:2, 2] = rng.normal(0, 20 * scale, 2)
    H[2, :2] = rng.normal(0, 5e-5 * scale, 2)
    return H


def rel_frobenius(A, B):
    A = A / A[2, 2]
    B = B / B[2, 2]
    return np.linalg.norm(A - B) / np.linalg.norm(B)


def textured(h, w, seed=0):
    """Smooth-ish random texture in 0..255 that ZNCC can lock onto."""
    import cv2

    rng = np.random.default_rng(seed)
    img = np.zeros((h, w), np.float32)
    for cell, amp in [(4, 60.0), (9, 50.0), (23, 40.0)]:
        small = rng.uniform(-1, 1, (h // cell + 2, w // cell + 2)).astype(np.float32)
        img += amp * cv2.resize(small, (w, h), interpolation=cv2.INTER_CUBIC)
    img = img - img.min()
    return np.clip(img * (255.0 / img.max()), 0, 255).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
