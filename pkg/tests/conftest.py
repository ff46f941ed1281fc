import pytest

from vrpssr.instance_gen import Cell, CustomerSpec, Instance, InstanceConfig


def make_instance(width=5, height=5, horizon=10, depot=(2, 2), customers=(), reward=10.0):
    """Hand-built instance; ``customers`` is a sequence of (x, y, request_time)."""
    cfg = InstanceConfig(
        width=width, height=height, horizon=horizon, depot=Cell(*depot),
        cluster_centers=(Cell(*depot),), cluster_weights=(1.0,),
        initial_mean=0.0, ongoing_mean_total=0.0, reward_per_customer=reward,
    )
    specs = tuple(CustomerSpec(i, Cell(x, y), t) for i, (x, y, t) in enumerate(customers))
    inst = Instance(cfg, specs, seed=0)
    inst.validate()
    return inst


@pytest.fixture
def build():
    return make_instance


# Acceptance criteria report one line each at the end of the session.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
