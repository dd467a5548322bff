import numpy as np
import pytest
import torch

from semsynth.data import InstanceMap, LabelMap, build_conditioning

# Criterion results registered by the acceptance suite; printed at exit.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def random_scene(rng: np.random.Generator, height: int, width: int, num_classes: int = 4):
    """A small label/instance pair with a couple of rectangular instances."""
    label = np.zeros((height, width), dtype=np.int32)
    label[height // 2 :, :] = 1
    inst = np.zeros((height, width), dtype=np.int32)
    h4, w4 = height // 4, width // 4
    label[h4 : 2 * h4, w4 : 2 * w4] = 2
    inst[h4 : 2 * h4, w4 : 2 * w4] = 1
    label[2 * h4 : 3 * h4, 2 * w4 : 3 * w4] = 3
    inst[2 * h4 : 3 * h4, 2 * w4 : 3 * w4] = 2
    return (
        LabelMap(grid=label, num_classes=num_classes),
        InstanceMap(grid=inst),
    )


def cond_tensor(label, instance, features=None) -> torch.Tensor:
    cond = build_conditioning(label, instance, features)
    return torch.from_numpy(cond.planes).unsqueeze(0)


@pytest.fixture
def torch_seed():
    torch.manual_seed(0)
    return torch.Generator().manual_seed(0)
