import json
import shutil
from pathlib import Path

import pytest

from kgdta.cli import main
from kgdta.downstream import save_affinity_tsv
from kgdta.schema import parse_ntriples
from kgdta.synthetic import make_planted_world

FIXTURES = Path(__file__).parent / "fixtures"


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def workdir(tmp_path):
    for name in ("schema.json", "schema_extra.json", "proteins.tsv", "molecules.csv",
                 "interactions.jsonl", "extra.tsv"):
        shutil.copy(FIXTURES / name, tmp_path / name)
    return tmp_path


def test_build_kg_deterministic(workdir, capsys):
    out1 = workdir / "g1.nt"
    out2 = workdir / "g2.nt"
    code, _, _ = run(["build-kg", "--schema", str(workdir / "schema.json"), "--out", str(out1)], capsys)
    assert code == 0
    code, _, _ = run(["build-kg", "--schema", str(workdir / "schema.json"), "--out", str(out2)], capsys)
    assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    graph = parse_ntriples(out1.read_text())
    assert graph.num_triples() > 0
    # sameAs links were resolved away during the build
    assert all(t.relation.name != "sameAs" for t in graph.triples())


def test_build_kg_merge_reports_overlap(workdir, capsys):
    base = workdir / "base.nt"
    extra = workdir / "extra.nt"
    run(["build-kg", "--schema", str(workdir / "schema.json"), "--out", str(base)], capsys)
    run(["build-kg", "--schema", str(workdir / "schema_extra.json"), "--out", str(extra)], capsys)
    merged = workdir / "merged.nt"
    code, out, _ = run(
        ["build-kg", "--schema", str(workdir / "schema.json"), "--out", str(merged),
         "--merge", str(extra)],
        capsys,
    )
    assert code == 0
    assert "merged entities shared with" in out and ": 1" in out  # P06820 overlaps
    graph = parse_ntriples(merged.read_text())
    from kgdta.graph import NodeId
    rels = {t.relation.name for t in graph.triples() if t.source == NodeId("uniprot", "P06820")}
    assert {"sequence", "organism", "function"} <= rels


def test_build_kg_invalid_schema_exit_2(workdir, capsys):
    bad = workdir / "bad_schema.json"
    doc = json.loads((workdir / "schema.json").read_text())
    doc["entity_types"][0]["id_column"] = "no_such_column"
    bad.write_text(json.dumps(doc))
    code, _, err_out = run(["build-kg", "--schema", str(bad), "--out", str(workdir / "x.nt")], capsys)
    assert code == 2
    assert "no_such_column" in err_out


def test_build_kg_missing_source_exit_3(workdir, capsys):
    doc = json.loads((workdir / "schema.json").read_text())
    doc["sources"][0]["path"] = "gone.tsv"
    bad = workdir / "bad2.json"
    bad.write_text(json.dumps(doc))
    code, _, _ = run(["build-kg", "--schema", str(bad), "--out", str(workdir / "x.nt")], capsys)
    assert code == 3


PRETRAIN_DIMS = [
    "--proj-dim", "8", "--hidden-dim", "8", "--out-dim", "8",
    "--sequence-dim", "8", "--text-dim", "8", "--fingerprint-dim", "16",
]
PRETRAIN_SMALL = [*PRETRAIN_DIMS, "--epochs", "2", "--lr", "0.001"]


def _write_world_nt(tmp_path, seed=0):
    from kgdta.schema import to_ntriples

    world = make_planted_world(n_drugs=8, n_proteins=6, seed=seed)
    path = tmp_path / "kg.nt"
    path.write_text(to_ntriples(world.graph), encoding="utf-8")
    return world, path


def test_pretrain_requires_seed(tmp_path, capsys):
    _, kg = _write_world_nt(tmp_path)
    code, _, _ = run(["pretrain", "--graph", str(kg), "--out", str(tmp_path / "c.json")], capsys)
    assert code == 2


def test_pretrain_deterministic_and_k1_matches_auto_on_small_graph(tmp_path, capsys):
    _, kg = _write_world_nt(tmp_path)
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    k1 = tmp_path / "k1.json"
    base = ["pretrain", "--graph", str(kg), "--seed", "3", *PRETRAIN_SMALL]
    assert run([*base, "--out", str(a)], capsys)[0] == 0
    assert run([*base, "--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    # --partitions auto collapses to 1 on a graph this small
    assert run([*base, "--out", str(k1), "--partitions", "1"], capsys)[0] == 0
    assert a.read_bytes() == k1.read_bytes()
    assert (tmp_path / "a.json.log.jsonl").exists()


def test_pretrain_restricted_links(tmp_path, capsys):
    _, kg = _write_world_nt(tmp_path)
    out = tmp_path / "r.json"
    code, _, _ = run(
        ["pretrain", "--graph", str(kg), "--seed", "0", "--out", str(out),
         "--links", "restricted=binding_to", "--flow-control", *PRETRAIN_SMALL],
        capsys,
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["meta"]["links"] == "restricted=binding_to"
    assert doc["policy"]["mode"] == "controlled"


def test_infer_outputs_two_json_lines(tmp_path, capsys):
    _, kg = _write_world_nt(tmp_path)
    ckpt = tmp_path / "c.json"
    run(["pretrain", "--graph", str(kg), "--seed", "1", "--out", str(ckpt), *PRETRAIN_SMALL], capsys)
    code, out, _ = run(["infer", "--ckpt", str(ckpt), "--modality", "smiles", "--value", "CCO"], capsys)
    assert code == 0
    lines = [json.loads(ln) for ln in out.strip().splitlines()]
    assert [ln["embedding"] for ln in lines] == ["initial", "gnn"]
    assert lines[0]["dim"] == 16  # fingerprint dim the checkpoint was trained with
    assert lines[1]["dim"] == 8
    # repeated call identical
    _, out2, _ = run(["infer", "--ckpt", str(ckpt), "--modality", "smiles", "--value", "CCO"], capsys)
    assert out == out2


def test_infer_unknown_modality_usage_error(tmp_path, capsys):
    code, _, _ = run(["infer", "--ckpt", "x.json", "--modality", "image", "--value", "v"], capsys)
    assert code == 2


def test_benchmark_end_to_end(tmp_path, capsys):
    world, kg = _write_world_nt(tmp_path)
    c1, c2 = tmp_path / "c1.json", tmp_path / "c2.json"
    run(["pretrain", "--graph", str(kg), "--seed", "0", "--out", str(c1), *PRETRAIN_SMALL], capsys)
    run(["pretrain", "--graph", str(kg), "--seed", "0", "--out", str(c2), "--score", "transe",
         *PRETRAIN_SMALL], capsys)
    data = tmp_path / "affinity.tsv"
    save_affinity_tsv(world.dataset, str(data))
    args = [
        "benchmark", "--dataset", str(data), "--split", "random",
        "--ckpts", f"{c1},{c2}", "--seeds", "0,1", "--seed", "0",
        "--steps", "15", "--lr", "0.001", "--batch", "16",
        "--init-hidden", "8,4", "--gnn-hidden", "8,4", "--eval-every", "5",
        "--out", str(tmp_path / "report"),
    ]
    code, out, _ = run(args, capsys)
    assert code == 0
    text = (tmp_path / "report.txt").read_text()
    rows = [json.loads(ln) for ln in (tmp_path / "report.jsonl").read_text().splitlines()]
    names = [r["model"] for r in rows]
    assert names == ["baseline", "c1", "c2", "ensemble"]
    assert "baseline" in text and "ensemble" in text

    # byte-identical on repeat
    first = (tmp_path / "report.jsonl").read_bytes()
    code, _, _ = run(args, capsys)
    assert code == 0
    assert (tmp_path / "report.jsonl").read_bytes() == first


def test_benchmark_infeasible_split_exit_3(tmp_path, capsys):
    from kgdta.downstream import AffinityDataset, AffinityRow

    rows = [AffinityRow("CCO", f"M{i}", float(i)) for i in range(8)]
    data = tmp_path / "one_drug.tsv"
    save_affinity_tsv(AffinityDataset("one", rows), str(data))
    world, kg = _write_world_nt(tmp_path)
    ckpt = tmp_path / "c.json"
    run(["pretrain", "--graph", str(kg), "--seed", "0", "--out", str(ckpt), *PRETRAIN_SMALL], capsys)
    code, _, err_out = run(
        ["benchmark", "--dataset", str(data), "--split", "drug", "--ckpts", str(ckpt),
         "--seeds", "0", "--seed", "0", "--out", str(tmp_path / "rep")],
        capsys,
    )
    assert code == 3
    assert "drug" in err_out


def test_full_pipeline_on_fixture_schema(workdir, capsys):
    """build-kg (with merge + sameAs resolution) -> pretrain (regression, restricted
    links, flow control) -> infer, all through the CLI on heterogeneous fixtures."""
    base, extra, merged = workdir / "b.nt", workdir / "e.nt", workdir / "m.nt"
    assert run(["build-kg", "--schema", str(workdir / "schema.json"), "--out", str(base)], capsys)[0] == 0
    assert run(["build-kg", "--schema", str(workdir / "schema_extra.json"), "--out", str(extra)], capsys)[0] == 0
    code, out, _ = run(
        ["build-kg", "--schema", str(workdir / "schema.json"), "--out", str(merged),
         "--merge", str(extra)], capsys,
    )
    assert code == 0

    ckpt = workdir / "fixture_ckpt.json"
    code, out, err_out = run(
        ["pretrain", "--graph", str(merged), "--seed", "2", "--out", str(ckpt),
         "--links", "restricted=target_of,binding_to", "--flow-control", "--regression",
         "--epochs", "3", "--lr", "0.002", *PRETRAIN_DIMS],
        capsys,
    )
    assert code == 0, err_out
    doc = json.loads(ckpt.read_text())
    # numeric attribute relations got regression heads; graph relations got weights
    assert set(doc["regression"]["heads"]) == {"confidence", "length", "mass"}
    assert "target_of" in doc["score"]["relations"]

    code, out, _ = run(["infer", "--ckpt", str(ckpt), "--modality", "sequence",
                        "--value", "MKTAYIAKQR"], capsys)
    assert code == 0
    lines = [json.loads(ln) for ln in out.strip().splitlines()]
    assert [ln["embedding"] for ln in lines] == ["initial", "gnn"]


def test_config_file_supplies_flags(tmp_path, capsys):
    _, kg = _write_world_nt(tmp_path)
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "graph": str(kg), "seed": 4, "epochs": 1, "lr": 0.001,
        "proj_dim": 8, "hidden_dim": 8, "out_dim": 8,
        "sequence_dim": 8, "text_dim": 8, "fingerprint_dim": 16,
    }))
    out = tmp_path / "from_config.json"
    code, _, _ = run(["pretrain", "--config", str(cfg), "--out", str(out)], capsys)
    assert code == 0

    # explicit flags override the config
    out2 = tmp_path / "override.json"
    code, _, _ = run(["pretrain", "--config", str(cfg), "--seed", "5", "--out", str(out2)], capsys)
    assert code == 0
    assert json.loads(out2.read_text())["meta"]["seed"] == 5
    assert json.loads(out.read_text())["meta"]["seed"] == 4
