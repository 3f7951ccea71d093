import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.report import ExperimentReport, aitken_limit, geometric_rate, line_fit, write_csv
from horizon.svg import line_plot


def test_missing_scalars_are_flagged():
    rep = ExperimentReport("x")
    rep.set_scalar("a", math.nan)
    rep.set_scalar("b", None)
    rep.set_scalar("c", 1.5)
    assert rep.scalars == {"a": None, "b": None, "c": 1.5}
    assert rep.flags == {"a_missing": True, "b_missing": True}
    assert not rep.unreliable
    rep.flags["budget_saturated"] = True
    assert rep.unreliable


def test_json_is_strict_and_canonical():
    rep = ExperimentReport("x", seed=3)
    rep.series["v"] = np.array([1.0, np.inf, 2.0])
    rep.scalars["z"] = 1 + 2j
    rep.scalars["n"] = np.int64(4)
    text = rep.to_json(with_timestamp=False)
    d = json.loads(text)
    assert d["series"]["v"] == [1.0, None, 2.0]
    assert d["scalars"] == {"n": 4, "z": [1.0, 2.0]}
    assert "timestamp" not in d
    assert text == rep.to_json(with_timestamp=False)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_round_trips_floats(values):
    text = write_csv(["v"], [values])
    cells = text.split("\r\n")[1:-1]
    assert [float(c) for c in cells] == [float(v) for v in values]


def test_csv_pads_short_columns():
    text = write_csv(["a", "b"], [[1, 2, 3], [True]])
    assert text.split("\r\n") == ["a,b", "1,true", "2,", "3,", ""]


def test_line_fit_and_rate():
    fit = line_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert (fit.slope, fit.intercept, fit.r2, fit.points) == pytest.approx((2, 1, 1, 4))
    g = geometric_rate([0, 1, 2, 3], [1, 0.5, 0.25, 0.125])
    assert math.exp(-g.slope) == pytest.approx(2)
    assert geometric_rate([0, 1], [0, 1]) is None
    with pytest.raises(ValueError):
        line_fit([1], [1])


def test_aitken_on_geometric_sequence():
    a = [3 + 0.5 ** n for n in range(6)]
    assert aitken_limit(a) == pytest.approx(3, abs=1e-12)


def test_svg_skips_non_positive_on_log_axis():
    text = line_plot([0, 1, 2], {"s": [1.0, 0.0, 10.0]}, "t", log_y=True)
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert text.count(",") >= 2 and "polyline" in text
