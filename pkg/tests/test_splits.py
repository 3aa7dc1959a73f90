import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txdiff import splits as sp
from txdiff.chem import scaffold_from_smiles
from txdiff.synthetic import synthetic_index

NAPHTHYL = ["c1ccc2ccccc2c1", "Cc1ccc2ccccc2c1", "Oc1ccc2ccccc2c1", "Nc1ccc2ccccc2c1", "CCc1ccc2ccccc2c1"]
BIPHENYL = ["c1ccc(-c2ccccc2)cc1", "Cc1ccc(-c2ccccc2)cc1", "Oc1ccc(-c2ccccc2)cc1", "Fc1ccc(-c2ccccc2)cc1"]


def _records(smiles, tissue="Lung", line="L-1"):
    return [sp.Record(f"r{k:04d}", s, line, tissue, "NSCLC") for k, s in enumerate(smiles)]


@pytest.fixture(scope="module")
def index():
    return sp.DatasetIndex(synthetic_index(600, seed=3))


# --- random ---------------------------------------------------------------------


@pytest.mark.parametrize("n,expected", [(100, (85, 10, 5)), (1000, (850, 100, 50))])
def test_random_ratio(n, expected):
    ds = sp.DatasetIndex(_records(["C"] * n))
    split = sp.random_split(ds, seed=1)
    assert tuple(split.counts().values()) == expected
    assert set(split.partition) == set(ds.ids)


def test_random_deterministic_and_seed_sensitive():
    ds = sp.DatasetIndex(_records(["CCO"] * 200))
    assert sp.random_split(ds, 4).partition == sp.random_split(ds, 4).partition
    assert sp.random_split(ds, 4).partition != sp.random_split(ds, 5).partition


def test_random_too_small():
    with pytest.raises(sp.TooSmall):
        sp.random_split(sp.DatasetIndex(_records(["C"] * 19)))


def test_duplicate_record_ids():
    with pytest.raises(sp.DuplicateRecord):
        sp.DatasetIndex([sp.Record("a", "C"), sp.Record("a", "CC")])


# --- scaffold --------------------------------------------------------------------


def test_greedy_hand_trace_85_15():
    # targets 85/10/5: the 85-cluster fills train, the 15-cluster goes where most room is left (val)
    smiles = [NAPHTHYL[k % 5] for k in range(85)] + [BIPHENYL[k % 4] for k in range(15)]
    with pytest.warns(sp.UnsplittableWarning):
        split = sp.scaffold_split(sp.DatasetIndex(_records(smiles)))
    parts = [split.partition[f"r{k:04d}"] for k in range(100)]
    assert set(parts[:85]) == {"train"}
    assert set(parts[85:]) == {"val"}
    assert split.dropped == []


def test_single_scaffold_unsplittable():
    ds = sp.DatasetIndex(_records([NAPHTHYL[k % 5] for k in range(40)]))
    with pytest.warns(sp.UnsplittableWarning):
        split = sp.scaffold_split(ds)
    assert set(split.partition.values()) == {"train"}
    assert "empty_test" in split.flags


def test_trivial_scaffolds_forced_to_train_and_capped():
    smiles = ["c1ccccc1"] * 30 + ["CCO"] * 20 + [NAPHTHYL[k % 5] for k in range(12)] + \
        [BIPHENYL[k % 4] for k in range(8)] + ["c1ccc2cc3ccccc3cc2c1"] * 4
    ds = sp.DatasetIndex(_records(smiles))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sp.UnsplittableWarning)
        split = sp.scaffold_split(ds, seed=2)
    # median non-trivial cluster size is 8
    benzene = [f"r{k:04d}" for k in range(30)]
    acyclic = [f"r{k:04d}" for k in range(30, 50)]
    for group in (benzene, acyclic):
        kept = [i for i in group if i in split.partition]
        assert len(kept) == 8
        assert {split.partition[i] for i in kept} == {"train"}
    assert len(split.dropped) == (30 - 8) + (20 - 8)
    assert set(split.partition).isdisjoint(split.dropped)


def test_parse_failure_names_record():
    ds = sp.DatasetIndex(_records(["CCO"] * 25 + ["C1CC"]))
    with pytest.raises(sp.ParseFailure) as err:
        sp.scaffold_split(ds)
    assert err.value.record_id == "r0025"


def test_scaffold_partition_constant_per_scaffold(index):
    split = sp.scaffold_split(index, seed=0)
    by_scaffold = {}
    for r in index.records:
        if r.id in split.partition:
            by_scaffold.setdefault(scaffold_from_smiles(r.smiles), set()).add(split.partition[r.id])
    assert all(len(parts) == 1 for parts in by_scaffold.values())
    assert set(split.partition) | set(split.dropped) == set(index.ids)
    assert split.partition == sp.scaffold_split(index, seed=0).partition


# --- cell lines ---------------------------------------------------------------------


def test_hold_out_lung(index):
    split = sp.cell_split(index, {"Lung"}, seed=1)
    lung = {r.id for r in index.records if r.tissue == "Lung"}
    assert set(split.members("test")) == lung
    lines = {p: {r.cell_line for r in index.records if split.partition[r.id] == p} for p in sp.PARTITIONS}
    assert not lines["train"] & lines["test"]
    assert not lines["train"] & lines["val"]


def test_cell_lines_split_89_11():
    records = [sp.Record(f"r{k}", "CCO", f"B-{k % 100}", "Breast", "Basal") for k in range(300)]
    records += [sp.Record(f"l{k}", "CCN", f"L-{k % 5}", "Lung", "NSCLC") for k in range(20)]
    split = sp.cell_split(sp.DatasetIndex(records), {"Lung"}, seed=0)
    train_lines = {r.cell_line for r in records if split.partition[r.id] == "train"}
    val_lines = {r.cell_line for r in records if split.partition[r.id] == "val"}
    assert (len(train_lines), len(val_lines)) == (89, 11)
    assert all(line.startswith("B-") for line in val_lines)


def test_hold_out_tumor_type(index):
    split = sp.cell_split(index, (), seed=0, held_out_tumor_types={"Melanoma"})
    assert set(split.members("test")) == {r.id for r in index.records if r.tumor_type == "Melanoma"}


def test_unknown_tissue(index):
    with pytest.raises(sp.UnknownTissue):
        sp.cell_split(index, {"Liver"})
    untagged = sp.DatasetIndex([sp.Record("a", "C", "X-1", "", "")] + _records(["C"] * 3))
    with pytest.raises(sp.UnknownTissue):
        sp.cell_split(untagged, {"Lung"})


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), held=st.sampled_from(["Lung", "Breast", "Skin", "Colon", "Blood"]))
def test_cell_partition_constant_per_line(index, seed, held):
    split = sp.cell_split(index, {held}, seed=seed)
    by_line = {}
    for r in index.records:
        by_line.setdefault(r.cell_line, set()).add(split.partition[r.id])
    assert all(len(parts) == 1 for parts in by_line.values())
    assert split.partition == sp.cell_split(index, {held}, seed=seed).partition


# --- audit -------------------------------------------------------------------------


def test_clean_scaffold_split_passes(index):
    report = sp.leakage_audit(index, sp.scaffold_split(index, seed=5))
    assert report.passed
    assert report.scaffold_overlap == 0 and report.duplicate_smiles == 0
    assert report.summary().startswith("PASS")


def test_corrupted_assignment_fails_with_offenders(index):
    split = sp.scaffold_split(index, seed=5)
    victim = split.members("train")[0]
    split.partition[victim] = "test"
    report = sp.leakage_audit(index, split)
    assert not report.passed
    assert report.scaffold_overlap >= 1
    assert victim in report.offending["scaffold"]
    assert report.summary().startswith("FAIL")


def test_random_split_reports_without_failing(index):
    report = sp.leakage_audit(index, sp.random_split(index, seed=0))
    assert report.scaffold_overlap > 0
    assert report.passed


def test_cell_audit_guards_cell_lines(index):
    split = sp.cell_split(index, {"Skin"}, seed=0)
    assert sp.leakage_audit(index, split).passed
    line = next(r.cell_line for r in index.records if split.partition[r.id] == "train")
    moved = next(r.id for r in index.records if r.cell_line == line)
    split.partition[moved] = "test"
    report = sp.leakage_audit(index, split)
    assert not report.passed and moved in report.offending["cell_line"]


def test_audit_unknown_ids(index):
    with pytest.raises(KeyError):
        sp.leakage_audit(index, sp.SplitAssignment({"nope": "train"}, "random"))


# --- files ---------------------------------------------------------------------------


def test_index_and_split_round_trip(tmp_path, index):
    sp.write_index(tmp_path / "idx.csv", index)
    assert (tmp_path / "idx.csv").read_text().splitlines()[0] == "id,smiles,cell_line,tissue,tumor_type"
    back = sp.read_index(tmp_path / "idx.csv")
    assert back.records == index.records
    split = sp.random_split(index, seed=3)
    sp.write_split(tmp_path / "split.csv", split)
    assert sp.read_split(tmp_path / "split.csv").partition == split.partition


def test_split_file_rejects_unknown_partition(tmp_path):
    (tmp_path / "s.csv").write_text("id,partition\na,holdout\n")
    with pytest.raises(ValueError):
        sp.read_split(tmp_path / "s.csv")
