import numpy as np
import pytest

from occamnas.dataio import save_idx


def write_blob_dataset(root, n_train=120, n_test=40, side=8, seed=0):
    """Two classes of 8x8 images: a bright blob top-left versus bottom-right."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)

    def make(n):
        labels = np.arange(n) % 2
        imgs = rng.uniform(0, 60, (n, side, side))
        half = side // 2
        for i, lab in enumerate(labels):
            if lab == 0:
                imgs[i, :half, :half] += 150
            else:
                imgs[i, half:, half:] += 150
        return imgs, labels

    for prefix, n in (("train", n_train), ("t10k", n_test)):
        imgs, labels = make(n)
        save_idx(root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte", imgs, labels)
    return root


@pytest.fixture
def blob_dir(tmp_path):
    return write_blob_dataset(tmp_path / "blobs")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
