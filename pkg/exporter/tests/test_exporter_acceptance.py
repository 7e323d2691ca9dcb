"""Acceptance for the exporter: exported files pass the consuming
pipeline's validation, and the served endpoint satisfies its wire-protocol
conformance suite using only a recorded fixture (no real model)."""

import warnings

from clip_exporter.backends import FixtureBackend, HashBackend, record_fixture
from clip_exporter.export import ExportJob, export_text_embeddings
from clip_exporter.server import ExporterServer

from pseudopair.embeddings import load_embeddings
from pseudopair.protocol import _PROBE_TEXTS, check_endpoint_conformance


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion 11 {name:<52} {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


def test_c11_export_and_endpoint_conformance(tmp_path):
    # exported EMB1 loads cleanly through the consuming package
    words = [f"word {i}" for i in range(25)]
    out = tmp_path / "words.emb1"
    export_text_embeddings(ExportJob(model="hash:96", inputs=words, out_path=str(out)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bank = load_embeddings(out)
    export_ok = bank.count == 25 and bank.dim == 96 and bank.unit_normalized

    # endpoint conformance, served from a recorded fixture alone
    rec = tmp_path / "recorded.json"
    record_fixture(rec, HashBackend(96), texts=list(_PROBE_TEXTS))
    with ExporterServer(FixtureBackend(rec)) as srv:
        report = check_endpoint_conformance(srv.address)
    endpoint_ok = report.dim == 96 and len(report.checks) >= 9

    _verdict(
        "EMB1 validation + fixture endpoint conformance",
        export_ok and endpoint_ok,
        f"{bank.count} rows loaded; checks: {', '.join(report.checks)}",
    )
