import numpy as np
import pytest

from app.database import session_factory
from app.forward import ConcentricAnnulusOracle, Excitation, solve_annular_dirichlet
from app.geometry import TestDomain, make_circle

POLE = Excitation(kind="pole", pole_radius=1.25)


@pytest.fixture
def results_url(tmp_path):
    return f"sqlite:///{tmp_path / 'results.db'}"


@pytest.fixture
def db_session(results_url):
    """Session on a results store that lives only as long as the test"""
    db = session_factory(results_url)()
    try:
        yield db
    finally:
        db.close()


@pytest.fixture(scope="session")
def unit_circle():
    return make_circle((0.0, 0.0), 1.0, 256)


@pytest.fixture(scope="session")
def cos_oracle():
    """Concentric annulus 0.3 < r < 1 with f = cos θ"""
    return ConcentricAnnulusOracle(1.0, 0.3, {1: (1.0, 0.0)})


@pytest.fixture(scope="session")
def cos_data(cos_oracle):
    return cos_oracle.cauchy_data(256)


@pytest.fixture(scope="session")
def cos_solver_data():
    """Boundary-integral data for the same annulus, 128 nodes on each circle"""
    omega = make_circle((0.0, 0.0), 1.0, 128)
    obstacle = make_circle((0.0, 0.0), 0.3, 128)
    return solve_annular_dirichlet(omega, obstacle, np.cos(omega.params))


@pytest.fixture(scope="session")
def pole_oracle():
    """D = disk(0, 0.5), pole trace with s = 1.25: singular points on [0, 0.2] × {0}"""
    return ConcentricAnnulusOracle(1.0, 0.5, POLE.fourier_coefficients())


@pytest.fixture(scope="session")
def pole_data(pole_oracle):
    return pole_oracle.cauchy_data(256)


@pytest.fixture
def centered_disk():
    """Factory for test disks centered at the origin"""

    def build(radius, n=64):
        return TestDomain(curve=make_circle((0.0, 0.0), radius, n), id=f"disk-{radius:g}")

    return build


@pytest.fixture
def scenario_file(tmp_path):
    """Write a scenario TOML into tmp_path and return its path"""

    def write(text, name="scenario.toml"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write
