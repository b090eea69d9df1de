import json
import os

import numpy as np
import pytest

from fufi.errors import DatasetFormatError
from fufi.io import load_dataset, save_dataset


def test_round_trip(tmp_path, geo_ds):
    save_dataset(geo_ds, tmp_path)
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.flows, geo_ds.flows.astype(np.float32))
    assert back.flows.dtype == np.float32
    assert np.array_equal(back.timestamps, geo_ds.timestamps)
    assert back.externals == geo_ds.externals
    np.testing.assert_allclose(back.geo.raw, geo_ds.geo.raw, rtol=1e-6)
    assert back.upscale_n == 4


def test_ticket_price_round_trip(tmp_path):
    from conftest import small_spec
    from fufi.synthetic import generate_synthetic

    ds = generate_synthetic(small_spec(samples=8, ticket=True))
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.has_ticket_price and back.externals == ds.externals


def test_truncated_payload(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    path = os.path.join(tmp_path, "flows.bin")
    with open(path, "r+b") as fh:
        fh.truncate(os.path.getsize(path) - 4)
    with pytest.raises(DatasetFormatError, match="bytes"):
        load_dataset(tmp_path)


def test_unknown_dtype(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    mpath = os.path.join(tmp_path, "manifest.json")
    manifest = json.load(open(mpath))
    manifest["dtype"] = "f16le"
    json.dump(manifest, open(mpath, "w"))
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path)


def test_misaligned_externals(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    cpath = os.path.join(tmp_path, "externals.csv")
    lines = open(cpath).read().splitlines()
    open(cpath, "w").write("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DatasetFormatError, match="alignment check failed"):
        load_dataset(tmp_path)
