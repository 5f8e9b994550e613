import json
import os

import pytest
from hypothesis import given, strategies as st

from ttpmap.errors import DuplicateId, FormatError, MalformedId
from ttpmap.taxonomy import (TechniqueId, format_id, load_taxonomy, parse_id,
                             truncate)


class TestParseId:
    def test_subtechnique(self):
        tid = parse_id("T1098.004")
        assert tid.technique == "T1098"
        assert tid.sub == "004"
        assert tid.is_subtechnique

    def test_technique(self):
        tid = parse_id("T1195")
        assert tid.technique == "T1195"
        assert tid.sub is None
        assert not tid.is_subtechnique

    def test_missing_prefix(self):
        with pytest.raises(MalformedId):
            parse_id("1098.004")

    def test_whitespace_and_case_tolerated(self):
        assert parse_id("  t1059.001\n") == TechniqueId("T1059", "001")

    @pytest.mark.parametrize("bad", [
        "T105", "T10590", "T1059.01", "T1059.0012", "T1059.001.002",
        "TA0001", "", "T", "Technique T1059 stuff", "T1059x",
    ])
    def test_rejects_other_shapes(self, bad):
        with pytest.raises(MalformedId):
            parse_id(bad)


class TestTruncate:
    def test_drops_sub(self):
        assert truncate(parse_id("T1059.001")) == parse_id("T1059")

    def test_identity_on_technique(self):
        assert truncate(parse_id("T1195")) == parse_id("T1195")

    def test_idempotent(self):
        assert truncate(truncate(parse_id("T1053.005"))) == parse_id("T1053")


technique_ids = st.builds(
    TechniqueId,
    technique=st.integers(min_value=0, max_value=9999).map(lambda n: f"T{n:04d}"),
    sub=st.one_of(st.none(),
                  st.integers(min_value=0, max_value=999).map(lambda n: f"{n:03d}")),
)


@given(technique_ids)
def test_roundtrip(tid):
    assert parse_id(format_id(tid)) == tid


@given(technique_ids)
def test_truncate_properties(tid):
    truncated = truncate(tid)
    assert truncated.sub is None
    assert truncate(truncated) == truncated


class TestCsvLoading:
    def test_parent_links(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text(
            "id,name,description\n"
            "T1059,Interpreter,runs scripts\n"
            "T1059.001,PowerShell,runs powershell\n"
            "T1027,Obfuscation,hides things\n",
            encoding="utf-8",
        )
        tax = load_taxonomy(path, "csv")
        assert len(tax) == 3
        assert tax["T1059.001"].parent == parse_id("T1059")
        assert tax["T1027"].parent is None

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text(
            "id,name,description\nT1027,A,x\nT1027,B,y\n", encoding="utf-8")
        with pytest.raises(DuplicateId):
            load_taxonomy(path, "csv")

    def test_missing_column(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text("id,name\nT1027,A\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_taxonomy(path, "csv")

    def test_malformed_id_carries_row(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text("id,name,description\nT1027,A,x\nbogus,B,y\n",
                        encoding="utf-8")
        with pytest.raises(MalformedId, match=":3"):
            load_taxonomy(path, "csv")

    def test_orphan_subtechnique_rejected(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text("id,name,description\nT1059.001,PowerShell,x\n",
                        encoding="utf-8")
        with pytest.raises(FormatError, match="parent"):
            load_taxonomy(path, "csv")

    def test_quoted_description(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text(
            'id,name,description\nT1027,Obfuscation,"hides, what matters"\n',
            encoding="utf-8",
        )
        tax = load_taxonomy(path, "csv")
        assert tax["T1027"].description == "hides, what matters"

    def test_empty_description_ok(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text("id,name,description\nT1027,Obfuscation,\n",
                        encoding="utf-8")
        assert load_taxonomy(path, "csv")["T1027"].description == ""

    def test_optional_revoked_column(self, tmp_path):
        path = tmp_path / "tax.csv"
        path.write_text(
            "id,name,description,revoked\nT1027,Obfuscation,x,true\n"
            "T1059,Interpreter,y,\n",
            encoding="utf-8",
        )
        tax = load_taxonomy(path, "csv")
        assert tax["T1027"].revoked
        assert not tax["T1059"].revoked


def make_attack_pattern(external_id: str, name: str, description: str = "",
                        revoked: bool = False, deprecated: bool = False) -> dict:
    obj = {
        "type": "attack-pattern",
        "id": f"attack-pattern--{external_id.lower().replace('.', '-')}",
        "name": name,
        "description": description,
        "external_references": [
            {"source_name": "mitre-attack", "external_id": external_id,
             "url": f"https://attack.mitre.org/techniques/{external_id.replace('.', '/')}"},
        ],
    }
    if revoked:
        obj["revoked"] = True
    if deprecated:
        obj["x_mitre_deprecated"] = True
    return obj


class TestStixLoading:
    def test_bundle_parsing(self, tmp_path):
        bundle = {
            "type": "bundle",
            "id": "bundle--1",
            "objects": [
                make_attack_pattern("T1059", "Command and Scripting Interpreter"),
                make_attack_pattern("T1059.001", "PowerShell", "runs powershell"),
                make_attack_pattern("T1027", "Obfuscated Files", revoked=True),
                {"type": "x-mitre-tactic", "name": "Execution",
                 "external_references": [{"source_name": "mitre-attack",
                                          "external_id": "TA0002"}]},
                {"type": "relationship", "source_ref": "a", "target_ref": "b"},
            ],
        }
        path = tmp_path / "bundle.json"
        path.write_text(json.dumps(bundle), encoding="utf-8")
        tax = load_taxonomy(path, "stix-bundle")
        assert len(tax) == 3
        assert tax["T1059.001"].parent == parse_id("T1059")
        assert tax["T1059.001"].description == "runs powershell"
        assert tax["T1027"].revoked
        assert not tax["T1059"].revoked
        assert "TA0002" not in [str(e.id) for e in tax]

    def test_enterprise_scale_bundle(self, tmp_path):
        # Shaped like a full Enterprise matrix export: parents plus subs,
        # a sprinkling of revoked entries, well over 550 techniques total.
        objects = []
        for n in range(200):
            base = f"T{1000 + n:04d}"
            objects.append(make_attack_pattern(base, f"Technique {n}"))
            for sub in range(2):
                objects.append(make_attack_pattern(
                    f"{base}.{sub + 1:03d}", f"Technique {n} variant {sub}",
                    deprecated=(n % 50 == 0 and sub == 0)))
        path = tmp_path / "enterprise.json"
        path.write_text(json.dumps({"type": "bundle", "objects": objects}),
                        encoding="utf-8")
        tax = load_taxonomy(path, "stix-bundle")
        assert len(tax) >= 550
        assert sum(1 for e in tax if e.revoked) == 4

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bundle.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(FormatError):
            load_taxonomy(path, "stix-bundle")


ATTACK_STIX = os.environ.get("TTPMAP_ATTACK_STIX", "")


@pytest.mark.skipif(not ATTACK_STIX, reason="set TTPMAP_ATTACK_STIX to a real "
                                            "enterprise-attack bundle to run")
def test_real_enterprise_bundle_lower_bound():
    tax = load_taxonomy(ATTACK_STIX, "stix-bundle")
    assert len(tax) >= 550


class TestTaxonomy:
    def test_membership_total_over_strings(self, taxonomy):
        assert "T1059.001" in taxonomy
        assert "t1059.001" in taxonomy
        assert "T9999" not in taxonomy
        assert "bogus" not in taxonomy

    def test_lookup(self, taxonomy):
        assert taxonomy["T1552.004"].name == "Private Keys"
        assert taxonomy.get("T9999") is None

    def test_subtechnique_parents_present(self, taxonomy):
        for entry in taxonomy:
            if entry.parent is not None:
                assert entry.parent in taxonomy
                assert entry.parent == truncate(entry.id)
