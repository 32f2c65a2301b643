#!/usr/bin/env python3
"""Smoke test for the ctlab_py extension module.

Build the module first:

    cargo build -p ctlab-py --features extension-module

then run this script from the repository root.
"""
import json
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("debug", "release"):
        so = ROOT / "target" / profile / "libctlab_py.so"
        if so.exists():
            tmp = pathlib.Path(tempfile.mkdtemp(prefix="ctlab-py-"))
            shutil.copy(so, tmp / "ctlab_py.so")
            sys.path.insert(0, str(tmp))
            import ctlab_py

            return ctlab_py
    sys.exit("libctlab_py.so not found; build with "
             "`cargo build -p ctlab-py --features extension-module`")


def main():
    m = load_module()

    # Protocol: frozen derivation vector and epoch arithmetic.
    assert m.derive_code("00" * 16, 0, 0) == "499f785446f9bf2f8ca08173a40a5d1d"
    assert m.epoch_of(900.0) == 1
    assert m.epoch_of(899.9) == 0

    # Deanonymization window and haversine sanity.
    assert m.admission_window(50.0, 10.0, 8.0) == 10.0
    paris_london = m.haversine_km(48.8566, 2.3522, 51.5074, -0.1278)
    assert abs(paris_london - 343.5) / 343.5 < 0.005, paris_london

    # Exposure server round trip with the firewall.
    server = m.ExposureServer()
    server.register_covidcode("cc")
    account = server.create_account("10.0.0.1")
    code = m.derive_code("11" * 16, 0, 5)
    server.upload_records(account, [(code, 5)])
    assert server.poll_notifications(account) == []
    server.report_positive("cc", [("11" * 16, 0)], 0)
    assert server.poll_notifications(account) == [code]
    for _ in range(9):
        server.create_account("10.0.0.1")
    try:
        server.create_account("10.0.0.1")
        raise AssertionError("firewall should have rejected the 11th account")
    except RuntimeError:
        pass

    # Attack pipelines from bundled configs.
    configs = ROOT / "crates" / "ctlab" / "configs"
    isolate = json.loads(m.run_isolation((configs / "table5.toml").read_text(), 1, 3))
    assert isolate["rounds_used"] == 1 and isolate["accounts_used"] == 3
    assert isolate["identified_devices"] == [2]

    pollute = json.loads(m.run_pollution((configs / "fig4_pair.toml").read_text(), 0))
    assert pollute["false_notifications"] == 1

    # POI coverage on the synthetic city.
    coverage, overlap, freq = m.fixture_coverage(0.3, 5.0)
    assert abs(coverage - 0.25) < 0.03, coverage
    assert abs(overlap - 0.368) < 0.01, overlap
    assert abs(freq - 1.58) < 0.01, freq

    # Small population detection rate runs end to end.
    small = """
[population]
population = 300
infection_rate = 0.05
num_tags = 330
num_infected_tags = 12
sensors = 1200
"""
    rate = m.detection_rate(small, 0)
    assert 0.0 < rate <= 1.0, rate

    print("smoke test passed")


if __name__ == "__main__":
    main()
