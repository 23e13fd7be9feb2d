import numpy as np
import pytest

from hbsae.io import write_rows
from hbsae.simulation import generate_population, generate_responses, preset
from hbsae.streams import SeededStream


def write_instance(tmp_path, seed=7, **changes):
    """Write a simulated sample/census pair in the CLI's CSV layout."""
    cfg = preset("smoke", **changes)
    pop = generate_population(cfg, SeededStream(seed))
    y = generate_responses(pop, cfg, SeededStream(seed).child("y"))
    idx = pop.sample_index
    p = pop.X.shape[1] - 1
    xs = [f"x{j}" for j in range(1, p + 1)]
    sample_rows = [{"area": int(pop.area[i]), "welfare": float(np.exp(y[i])),
                    "survey_weight": float(pop.N_d[pop.area[i] - 1] / pop.n_d[pop.area[i] - 1]),
                    **{x: float(pop.X[i, j + 1]) for j, x in enumerate(xs)}}
                   for i in idx]
    rest = np.ones(pop.area.size, dtype=bool)
    rest[idx] = False
    keys, counts = np.unique(np.column_stack([pop.area, pop.X[:, 1:]])[rest], axis=0,
                             return_counts=True)
    census_rows = [{"area": int(k[0]), "count": int(c),
                    **{x: float(k[j + 1]) for j, x in enumerate(xs)}}
                   for k, c in zip(keys, counts)]
    sp, cp = tmp_path / "sample.csv", tmp_path / "census.csv"
    write_rows(sp, sample_rows, ["area", "welfare", "survey_weight"] + xs)
    write_rows(cp, census_rows, ["area", "count"] + xs)
    return sp, cp, cfg


@pytest.fixture
def instance(tmp_path):
    return write_instance(tmp_path)


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def record(key, passed, detail):
    ACCEPTANCE[key] = (bool(passed), detail)
    print(f"ACCEPTANCE {key}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (isinstance(k, str), str(k).zfill(3))):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
