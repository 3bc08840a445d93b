"""Regenerate the bundled synthetic station panel in ``src/mdns/data``.

47 stations over the simulation rectangle with a central ridge in
elevation, 31 daily fields drawn from a log-mean-dependent model with a
linear-plus-elevation mean, clipped at zero and squared to millimetres
(so ``--sqrt-transform`` recovers the modelling scale). About 3% of
station-days are removed at random.
"""
from pathlib import Path

import numpy as np

from mdns.covariance import CovParams, LinkFamily, LinkKind
from mdns.geometry import KM_PER_DEGREE, ObservationPanel, SiteSet, build_design, write_observations, write_stations
from mdns.simulation import simulate_day

OUT = Path(__file__).resolve().parents[1] / "src" / "mdns" / "data"
N_STATIONS, N_DAYS, SEED = 47, 31, 20130501


def main():
    rng = np.random.Generator(np.random.Philox(SEED))
    lon = np.round(rng.uniform(-67.2, -65.7, N_STATIONS), 4)
    lat = np.round(rng.uniform(17.95, 18.45, N_STATIONS), 4)
    ridge = np.exp(-(((lat - 18.18) / 0.08) ** 2)) * (0.6 + 0.4 * np.cos((lon + 66.4) * 2.0))
    elev = np.round(np.clip(1100.0 * ridge + rng.normal(0, 40, N_STATIONS), 2, None), 0)
    sites = SiteSet(lon, lat, elev, tuple(f"PR{i + 1:03d}" for i in range(N_STATIONS)), KM_PER_DEGREE)
    Z = build_design(sites, "linear4")
    eta = CovParams(-2.0, 0.8, -0.5, 0.6, 6.0, -0.2, LinkFamily(LinkKind.LMDNS, LinkKind.LMDNS, LinkKind.MDNS))
    values = np.empty((N_STATIONS, N_DAYS))
    for t in range(N_DAYS):
        level = rng.gamma(2.0, 0.8)
        g_lon, g_lat, g_elev = rng.normal(0.6, 0.4), rng.normal(1.5, 0.8), rng.normal(0.8, 0.3) / 1000.0
        beta = np.array([level + 66.5 * g_lon - 18.2 * g_lat, g_lon, g_lat, g_elev])
        values[:, t] = simulate_day(sites, Z, beta, eta, rng)
    mm = np.round(np.clip(values, 0.0, None) ** 2, 1)
    observed = rng.uniform(size=mm.shape) > 0.03
    observed[:, ~observed.any(axis=0)] = True
    labels = tuple(f"2013-05-{d:02d}" for d in range(1, N_DAYS + 1))
    panel = ObservationPanel(np.where(observed, mm, np.nan), observed, labels)
    OUT.mkdir(parents=True, exist_ok=True)
    write_stations(OUT / "stations.csv", sites)
    write_observations(OUT / "observations.csv", sites, panel)


if __name__ == "__main__":
    main()
