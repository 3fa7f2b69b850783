import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import pytest

from infoclt.errors import OutputError
from infoclt.families import DistributionSpec
from infoclt.reporting import ReportWriter, frame_to_csv, normalize_float, to_jsonable


@dataclass
class Sample:
    value: float
    hidden: list = field(default_factory=list, repr=False)


def test_normalize_float():
    assert normalize_float(math.inf) == "inf"
    assert normalize_float(-math.inf) == "-inf"
    assert normalize_float(math.nan) == "nan"
    assert normalize_float(1 / 3) == 0.333333333333


def test_to_jsonable():
    payload = {
        "spec": DistributionSpec(family="gamma", params={"shape": 5}),
        "sample": Sample(np.float64(2.0) / 3, hidden=[1, 2]),
        "arr": np.array([1.0, np.inf]),
        "flag": np.bool_(True),
        "n": np.int64(4),
    }
    out = to_jsonable(payload)
    assert out["spec"] == {"family": "gamma", "params": {"shape": 5}, "center_and_scale": False}
    assert out["sample"] == {"value": 0.666666666667}
    assert out["arr"] == [1.0, "inf"]
    assert out["flag"] is True
    assert out["n"] == 4
    json.dumps(out)


def test_csv_writes_infinities():
    frame = pd.DataFrame({"n": [1, 2], "J": [math.inf, 0.25]})
    assert frame_to_csv(frame) == "n,J\n1,inf\n2,0.25\n"


def test_commit_writes_all_files(tmp_path):
    out = tmp_path / "reports"
    writer = ReportWriter(out, ["csv", "json"])
    writer.table("rows", pd.DataFrame({"a": [1.0]}))
    writer.document("summary", {"J": math.inf})
    assert writer.staged == ["rows.csv", "summary.json"]
    written = writer.commit()
    assert sorted(p.name for p in written) == ["rows.csv", "summary.json"]
    assert sorted(p.name for p in out.iterdir()) == ["rows.csv", "summary.json"]
    assert json.loads((out / "summary.json").read_text()) == {"J": "inf"}
    assert writer.staged == []


def test_format_filter(tmp_path):
    writer = ReportWriter(tmp_path, ["json"])
    writer.table("rows", pd.DataFrame({"a": [1.0]}))
    writer.document("summary", {})
    assert writer.staged == ["summary.json"]


def test_output_dir_is_a_file(tmp_path):
    target = tmp_path / "taken"
    target.write_text("x")
    writer = ReportWriter(target, ["csv"])
    writer.table("rows", pd.DataFrame({"a": [1.0]}))
    with pytest.raises(OutputError):
        writer.commit()
