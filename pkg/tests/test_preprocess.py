from __future__ import annotations

import math
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from emrgraph.errors import ConfigValidationError, MalformedNumber
from emrgraph.preprocess import (
    SOURCE_SCHEMAS,
    MissingPolicy,
    NormalizationConfig,
    RecordTable,
    TablePolicy,
    convert_unit,
    format_decimal,
    load_normalization_config,
    normalization_config_from_dict,
    normalize_qualitative,
    preprocess_table,
    read_table,
    split_multivalue,
    table_to_csv,
)


@pytest.fixture(scope="module")
def config() -> NormalizationConfig:
    return load_normalization_config(DATA / "normalization.json")


def ar_row(result="5", unit="g/L", name="血红蛋白", aid="1"):
    return (aid, "859", "2012-01-04", name, result, unit, "")


def test_qualitative_examples(config):
    assert normalize_qualitative("(+)", config) == "positive"
    assert normalize_qualitative("negative (-)", config) == "negative"
    assert normalize_qualitative("120", config) == "120"
    # fullwidth parentheses and padding fold before lookup
    assert normalize_qualitative(" （+） ", config) == "positive"
    assert normalize_qualitative("阴性（-）", config) == "negative"


def test_convert_unit_examples(config):
    assert convert_unit(Decimal("12"), "hemoglobin", "g/dL", config) == (Decimal("120"), "g/L")
    assert convert_unit(Decimal("95"), "hemoglobin", "g/L", config) == (Decimal("95"), "g/L")
    assert convert_unit(Decimal("7.5"), "unknown-quantity", "mg", config) == (Decimal("7.5"), "mg")


def test_decimal_text_has_no_float_drift():
    cfg = normalization_config_from_dict(
        {"units": [{"quantity": "q", "from": "a", "to": "b", "factor": "0.1"}]})
    value, _ = convert_unit(Decimal("0.3"), "q", "a", cfg)
    assert format_decimal(value) == "0.03"
    assert format_decimal(Decimal("120.0")) == "120"
    assert format_decimal(Decimal("1E+3")) == "1000"


def test_split_examples(config):
    assert split_multivalue("冠心病, 心力衰竭", config) == ["冠心病", "心力衰竭"]
    assert split_multivalue("心力衰竭", config) == ["心力衰竭"]
    assert split_multivalue("a;; b ,", config) == ["a", "b"]
    assert split_multivalue("高血压；糖尿病、胃癌", config) == ["高血压", "糖尿病", "胃癌"]


def test_dr_row_explodes_into_two(config):
    dr = RecordTable("DR", SOURCE_SCHEMAS["DR"],
                     [("213", "859", "2012-01-01", "冠心病, 心力衰竭", "恶化")])
    out = preprocess_table(dr, config)
    assert [r[3] for r in out.rows] == ["冠心病", "心力衰竭"]
    assert [r[0] for r in out.rows] == ["213-1", "213-2"]
    assert all(r[1:3] + r[4:] == ("859", "2012-01-01", "恶化") for r in out.rows)


def test_ar_row_qualitative_and_units(config):
    ar = RecordTable("AR", SOURCE_SCHEMAS["AR"],
                     [ar_row("(+)", "", "尿蛋白"), ar_row("12", "g/dL", "血红蛋白", "2")])
    out = preprocess_table(ar, config)
    assert out.rows[0][4] == "positive"
    assert out.rows[1][4:6] == ("120", "g/L")


def test_empty_table(config):
    assert preprocess_table(RecordTable("SR", SOURCE_SCHEMAS["SR"]), config).rows == ()


def test_malformed_number_has_context(config):
    ar = RecordTable("AR", SOURCE_SCHEMAS["AR"], [ar_row(), ar_row("lots", "g/dL", aid="2")])
    with pytest.raises(MalformedNumber) as info:
        preprocess_table(ar, config)
    assert (info.value.table, info.value.row, info.value.column) == ("AR", 1, "Result")


def test_drop_row_policy(config):
    dr = RecordTable("DR", SOURCE_SCHEMAS["DR"],
                     [("1", "859", "", "冠心病", ""), ("2", "859", "2012-01-01", "冠心病", "")])
    assert [r[0] for r in preprocess_table(dr, config).rows] == ["2"]


def test_config_rejects_nonpositive_factor():
    with pytest.raises(ConfigValidationError):
        normalization_config_from_dict(
            {"units": [{"quantity": "q", "from": "a", "to": "b", "factor": "0"}]})


def test_policy_with_unknown_column_rejected():
    cfg = NormalizationConfig(table_policies={"SR": TablePolicy(mandatory=("Nope",))})
    with pytest.raises(ConfigValidationError):
        preprocess_table(RecordTable("SR", SOURCE_SCHEMAS["SR"]), cfg)


def test_csv_round_trip(tmp_path):
    t = RecordTable("SR", SOURCE_SCHEMAS["SR"], [("1", "859", "2012-01-09", 'a,"b"')])
    path = tmp_path / "SR.csv"
    path.write_text(table_to_csv(t), encoding="utf-8")
    assert read_table(path) == t


# --- properties ------------------------------------------------------------------

cells = st.text(alphabet="ab心 ,;；、", max_size=8)
qual_cells = st.sampled_from(["(+)", "negative (-)", "阳性", "（-）", "", "7", "12.50", "x"])
num_cells = st.decimals(min_value=-1000, max_value=1000, places=2, allow_nan=False).map(str)


@st.composite
def ar_tables(draw):
    rows = []
    for i in range(draw(st.integers(0, 6))):
        unit = draw(st.sampled_from(["g/dL", "g/L", "mg", ""]))
        name = draw(st.sampled_from(["血红蛋白", "hemoglobin", "尿蛋白", ""]))
        result = draw(num_cells) if unit and draw(st.booleans()) else draw(qual_cells)
        if unit == "g/dL" and name in ("血红蛋白", "hemoglobin"):
            result = draw(num_cells)
        rows.append((str(i), "p", draw(st.sampled_from(["2012-01-01", ""])), name, result, unit, ""))
    return RecordTable("AR", SOURCE_SCHEMAS["AR"], rows)


@st.composite
def dr_tables(draw):
    rows = [(str(i), "p", draw(st.sampled_from(["2012-01-01", ""])), draw(cells), draw(cells))
            for i in range(draw(st.integers(0, 6)))]
    return RecordTable("DR", SOURCE_SCHEMAS["DR"], rows)


@given(st.one_of(ar_tables(), dr_tables()))
@settings(max_examples=200, deadline=None)
def test_preprocess_is_idempotent(table):
    config = load_normalization_config(DATA / "normalization.json")
    once = preprocess_table(table, config)
    assert preprocess_table(once, config) == once


@given(dr_tables(), st.sampled_from(list(MissingPolicy)))
@settings(max_examples=200, deadline=None)
def test_explosion_conservation(table, policy):
    delims = [",", ";", "；", "、", " "]
    cfg = NormalizationConfig(
        split_delimiters=frozenset(delims), missing_policy=policy,
        table_policies={"DR": TablePolicy(multivalue=("Disease", "Situation"),
                                          mandatory=("Date",))})

    def pieces(cell):
        for d in delims:
            cell = cell.replace(d, "\x00")
        return [p for p in cell.split("\x00") if p.strip()]

    expected = 0
    for row in table.rows:
        produced = math.prod(max(1, len(pieces(row[i]))) for i in (3, 4))
        dropped = policy is MissingPolicy.DROP_ROW and not row[2].strip()
        expected += 0 if dropped else produced
    assert len(preprocess_table(table, cfg).rows) == expected


@given(num_cells, st.sampled_from([("hemoglobin", "g/dL"), ("hemoglobin", "g/L"), ("x", "mg")]))
@settings(max_examples=200, deadline=None)
def test_convert_twice_is_identity_on_target(value, key):
    config = load_normalization_config(DATA / "normalization.json")
    once = convert_unit(Decimal(value), key[0], key[1], config)
    assert convert_unit(once[0], key[0], once[1], config) == once
