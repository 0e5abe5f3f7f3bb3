import hashlib

import numpy as np
import pytest

from lwids import flows, synth
from lwids.flows import FlowDataError, SchemaOptions


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_basic(tmp_path):
    t = flows.load_csv(write(tmp_path, " A ,B,Label\n1,2,Normal\n3,4,IC\n"))
    assert t.columns == ("A", "B", "Label")
    assert t.row_count == 2


def test_load_csv_quoted_cells(tmp_path):
    t = flows.load_csv(write(tmp_path, 'A,B\n"1,5",x\n'))
    assert t.rows == (("1,5", "x"),)


def test_load_csv_ragged_row_named(tmp_path):
    with pytest.raises(FlowDataError, match="row 3"):
        flows.load_csv(write(tmp_path, "A,B,Label\n1,2,Normal\n3,4\n"))


@pytest.mark.parametrize("text,match", [("", "empty"), ("A,A\n1,2\n", "duplicate")])
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(FlowDataError, match=match):
        flows.load_csv(write(tmp_path, text))


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(FlowDataError):
        flows.load_csv(tmp_path / "nope.csv")


def _scvic_like(tmp_path, n_normal=40, n_pos=10, extra_rows=()):
    spec = synth.SynthSpec(77, ((0, 6.0),), n_normal, n_pos, 1.0, 1, synth.SCVIC_FEATURES)
    p = tmp_path / "scvic.csv"
    synth.write_csv(synth.generate(spec), p, extra_rows=extra_rows)
    return p


def test_84_columns_become_77_features(tmp_path):
    table = flows.load_csv(_scvic_like(tmp_path))
    assert len(table.columns) == 84
    ds = flows.preprocess(table)
    assert ds.schema.feature_count == 77
    assert set(ds.schema.dropped_columns) == set(flows.IDENTIFIER_COLUMNS)
    assert ds.schema.feature_names == synth.SCVIC_FEATURES


def test_stage_isolation_and_missing_rows(tmp_path):
    n_cols = 84
    good = ["x"] * 5 + ["6"] + ["t"] + ["1.0"] * 76 + ["Normal"]
    recon = list(good)
    recon[-1] = "Reconnaissance"
    inf_row = list(good)
    inf_row[10] = "Infinity"
    nan_row = list(good)
    nan_row[11] = "NaN"
    empty_row = list(good)
    empty_row[12] = ""
    assert len(good) == n_cols
    p = _scvic_like(tmp_path, extra_rows=[recon, inf_row, nan_row, empty_row])
    ds = flows.preprocess(flows.load_csv(p))
    assert ds.row_count == 50
    assert ds.dropped_row_count == 3
    assert np.isfinite(ds.features).all()


def test_categorical_lexicographic_codes(tmp_path):
    p = write(tmp_path, "proto,v,Label\nudp,1,Normal\ntcp,2,IC\ntcp,3,normal\n")
    with pytest.warns(flows.MissingColumnWarning):
        ds = flows.preprocess(flows.load_csv(p))
    assert ds.encoding_maps == {"proto": {"tcp": 0, "udp": 1}}
    assert ds.schema.feature_kinds == ("categorical", "numeric")
    assert ds.features[:, 0].tolist() == [1.0, 0.0, 0.0]
    assert ds.labels.tolist() == [0, 1, 0]


def test_label_synonyms_case_insensitive(tmp_path):
    p = write(tmp_path, "v,label\n1,NormalTraffic\n2,initial compromise\n3,INITIALCOMPROMISE\n4,Pivoting\n")
    with pytest.warns(flows.MissingColumnWarning):
        ds = flows.preprocess(flows.load_csv(p))
    assert ds.labels.tolist() == [0, 1, 1]


def test_identifier_matching_ignores_case_and_spaces(tmp_path):
    p = write(tmp_path, "flowid,TIME STAMP,SrcIP,dst ip,Src Port,DstPort,v,Label\n"
                        "a,b,c,d,1,2,0.5,Normal\na,b,c,d,1,2,0.7,IC\n")
    ds = flows.preprocess(flows.load_csv(p), SchemaOptions(strict_identifiers=True))
    assert ds.schema.feature_names == ("v",)


def test_missing_label_column(tmp_path):
    p = write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(FlowDataError, match="available columns: a, b"):
        flows.preprocess(flows.load_csv(p))


def test_strict_identifiers_raise(tmp_path):
    p = write(tmp_path, "v,Label\n1,Normal\n")
    with pytest.raises(FlowDataError, match="identifier"):
        flows.preprocess(flows.load_csv(p), SchemaOptions(strict_identifiers=True))


def test_zero_rows_after_filter(tmp_path):
    p = write(tmp_path, "v,Label\nInfinity,Normal\n1,Recon\n")
    with pytest.warns(flows.MissingColumnWarning), pytest.raises(FlowDataError, match="no rows"):
        flows.preprocess(flows.load_csv(p))


def test_preprocess_idempotent(tmp_path):
    p = write(tmp_path, "proto,v,w,Label\nudp,1.5,-2,Normal\ntcp,2.25,1e-300,IC\ntcp,3,7,Normal\n")
    with pytest.warns(flows.MissingColumnWarning):
        ds = flows.preprocess(flows.load_csv(p))
        again = flows.preprocess(ds.to_table())
    assert again.schema.feature_names == ds.schema.feature_names
    assert again.encoding_maps == ds.encoding_maps
    assert np.array_equal(again.features, ds.features)
    assert np.array_equal(again.labels, ds.labels)
    assert again.dropped_row_count == 0


def _toy(n0, n1):
    X = np.arange(n0 + n1, dtype=float)[:, None]
    y = np.r_[np.zeros(n0), np.ones(n1)]
    return flows.FlowDataset(flows.FeatureSchema(("x",), ("numeric",)), X, y)


def test_stratified_split_counts():
    s = flows.split(_toy(90, 10), seed=1, train_fraction=0.8)
    assert s.train.class_counts() == {0: 72, 1: 8}
    assert s.test.class_counts() == {0: 18, 1: 2}
    assert s.train.row_count + s.test.row_count == 100


def test_paper_scale_stratified_rounding():
    # 0.8 * 307817 = 246253.6 -> 246254 ; 0.8 * 150 = 120
    assert flows._round_half_up(0.8 * 307_817) == 246_254
    assert flows._round_half_up(0.8 * 150) == 120


def test_split_deterministic():
    ds = _toy(300, 30)
    a = flows.split(ds, seed=7)
    b = flows.split(ds, seed=7)
    c = flows.split(ds, seed=8)
    digest = lambda s: hashlib.sha256(s.train.features.tobytes()).hexdigest()
    assert digest(a) == digest(b)
    assert digest(a) != digest(c)


def test_plain_split_size():
    s = flows.split(_toy(300, 100), seed=2, stratify=False)
    assert s.train.row_count == 320


@pytest.mark.parametrize("n0,n1,frac", [(10, 1, 0.8), (10, 3, 0.1), (10, 3, 1.0), (10, 3, 0.0)])
def test_split_errors(n0, n1, frac):
    with pytest.raises(FlowDataError):
        flows.split(_toy(n0, n1), seed=0, train_fraction=frac)


def test_column_order_preserved_through_split_and_select():
    spec = synth.SynthSpec(5, ((2, 5.0),), 50, 10, seed=4)
    ds = synth.generate(spec)
    s = flows.split(ds, seed=1)
    assert s.train.schema.feature_names == ds.schema.feature_names == s.test.schema.feature_names
    sub = s.select([3, 1])
    assert sub.train.schema.feature_names == ("F3", "F1")
    assert np.array_equal(sub.train.features[:, 0], s.train.features[:, 3])


def test_dataset_immutable():
    ds = _toy(5, 5)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_dataset_csv_roundtrip(tmp_path):
    ds = synth.generate(synth.SynthSpec(4, ((1, 3.0),), 20, 5, seed=9))
    flows.write_dataset_csv(ds, tmp_path / "d.csv")
    back = flows.read_dataset_csv(tmp_path / "d.csv", ds.schema)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
