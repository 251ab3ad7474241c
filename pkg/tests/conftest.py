import numpy as np
import pytest

from firegen import data_model as dm


@pytest.fixture(scope="session")
def toy_records():
    """Small handwritten dataset covering several categories and months."""
    rows = [
        (100.0, 200.0, 1, 5, 8, 30, 1),
        (110.0, 210.0, 2, 40, 9, 45, 2),
        (120.0, 190.0, 6, 160, 14, 60, 1),
        (130.0, 205.0, 7, 190, 18, 120, 3),
        (140.0, 195.0, 11, 310, 20, 15, 2),
        (150.0, 215.0, 12, 350, 23, 88, 1),
        (105.0, 202.0, 3, 70, 0, 11, 3),
        (125.0, 208.0, 9, 250, 11, 240, 2),
    ]
    return [dm.InterventionRecord(*r) for r in rows]


@pytest.fixture(scope="session")
def toy_schema(toy_records):
    return dm.fit_schema(toy_records)


@pytest.fixture(scope="session")
def surrogate_1k():
    return dm.surrogate_dataset(seed=7, n=1000)


@pytest.fixture
def stations_file(tmp_path):
    """Synthetic two-station example config (not real-world data)."""
    p = tmp_path / "stations.csv"
    p.write_text(
        "station_id,x,y,vehicle_type,count,crew\n"
        "S1,0,0,VSAV,2,3\n"
        "S1,0,0,FPT,1,6\n"
        "S2,10000,0,VSAV,1,3\n")
    return p


@pytest.fixture
def rules_file(tmp_path):
    p = tmp_path / "rules.csv"
    p.write_text(
        "incident,vehicle_type,quantity\n"
        "1,VSAV,1\n"
        "2,VSAV,1\n"
        "2,FPT,1\n")
    return p


def make_zones(*centroids):
    return dm.ZonePartition(np.asarray(centroids, dtype=np.float64))
