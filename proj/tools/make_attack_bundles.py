#!/usr/bin/env python3
"""Rebuild the offline ATT&CK STIX bundles under data/attack/ from the MISP
galaxy redistribution of the MITRE ATT&CK content (pymispgalaxies wheel).

The MISP galaxy clusters carry the MITRE techniques, groups and "uses"
relations; this script re-emits them as STIX 2.1 bundles in the same object
layout as the ATT&CK data repositories (x-mitre-matrix, x-mitre-tactic,
attack-pattern, intrusion-set, relationship, x-mitre-collection).

ICS content in MISP predates the STIX release of ATT&CK for ICS: technique
ids use the old three-digit form (T800) and a few ids were duplicated on the
old wiki. Ids are normalised to the four-digit form and duplicates are
resolved by technique name. The Privilege Escalation tactic and the two
techniques below were added to ATT&CK for ICS after that snapshot and are
supplemented here so the matrix matches the published twelve-tactic layout.

usage: make_attack_bundles.py PATH/TO/misp-galaxy/clusters OUT_DIR
"""

import json
import re
import sys
import uuid
from pathlib import Path

NS = uuid.UUID("6f1c3d52-3a35-4d55-9a8e-4b1c0d6e2a10")
CREATED = "2021-10-21T00:00:00.000Z"

ICS_TACTICS = [
    ("TA0108", "Initial Access", "initial-access-ics"),
    ("TA0104", "Execution", "execution-ics"),
    ("TA0110", "Persistence", "persistence-ics"),
    ("TA0111", "Privilege Escalation", "privilege-escalation-ics"),
    ("TA0103", "Evasion", "evasion-ics"),
    ("TA0102", "Discovery", "discovery-ics"),
    ("TA0109", "Lateral Movement", "lateral-movement-ics"),
    ("TA0100", "Collection", "collection-ics"),
    ("TA0101", "Command and Control", "command-and-control-ics"),
    ("TA0107", "Inhibit Response Function", "inhibit-response-function"),
    ("TA0106", "Impair Process Control", "impair-process-control"),
    ("TA0105", "Impact", "impact-ics"),
]

ICS_TACTIC_TEXT = {
    "Persistence": "The adversary is trying to maintain their foothold in your ICS environment.",
    "Privilege Escalation": "The adversary is trying to gain higher-level permissions.",
    "Lateral Movement": "The adversary is trying to move through your ICS environment.",
    "Inhibit Response Function": "The adversary is trying to prevent your safety, protection, quality assurance, and operator intervention functions from responding to a failure, hazard, or unsafe state.",
}

# Wiki-era duplicate ids, resolved to the published ids by name.
ICS_ID_BY_NAME = {
    "Default Credentials": "T0812",
    "Internet Accessible Device": "T0883",
    "Scripting": "T0853",
}

ICS_SUPPLEMENT = [
    ("T0888", "Remote System Information Discovery", ["Discovery"],
     "An adversary may attempt to get detailed information about remote systems and their peripherals, such as make/model, role, and configuration. Adversaries may use information from Remote System Information Discovery to aid in targeting and shaping follow-on behaviors."),
    ("T0890", "Exploitation for Privilege Escalation", ["Privilege Escalation"],
     "Adversaries may exploit software vulnerabilities in an attempt to elevate privileges. Exploitation of a software vulnerability occurs when an adversary takes advantage of a programming error in a program, service, or within the operating system software or kernel itself to execute adversary-controlled code."),
]

ICS_EXTRA_TACTICS = {"Hooking": ["Privilege Escalation"]}

ICS_GROUP_IDS = {
    "ALLANITE": "G1000",
    "APT33": "G0064",
    "Dragonfly": "G0035",
    "Dragonfly 2.0": "G0074",
    "HEXANE": "G1001",
    "Lazarus group": "G0032",
    "Leafminer": "G0077",
    "OilRig": "G0049",
    "Sandworm": "G0034",
    "XENOTIME": "G0088",
}

ENTERPRISE_TACTICS = [
    ("TA0043", "Reconnaissance", "reconnaissance", "The adversary is trying to gather information they can use to plan future operations."),
    ("TA0042", "Resource Development", "resource-development", "The adversary is trying to establish resources they can use to support operations."),
    ("TA0001", "Initial Access", "initial-access", "The adversary is trying to get into your network."),
    ("TA0002", "Execution", "execution", "The adversary is trying to run malicious code."),
    ("TA0003", "Persistence", "persistence", "The adversary is trying to maintain their foothold."),
    ("TA0004", "Privilege Escalation", "privilege-escalation", "The adversary is trying to gain higher-level permissions."),
    ("TA0005", "Defense Evasion", "defense-evasion", "The adversary is trying to avoid being detected."),
    ("TA0006", "Credential Access", "credential-access", "The adversary is trying to steal account names and passwords."),
    ("TA0007", "Discovery", "discovery", "The adversary is trying to figure out your environment."),
    ("TA0008", "Lateral Movement", "lateral-movement", "The adversary is trying to move through your environment."),
    ("TA0009", "Collection", "collection", "The adversary is trying to gather data of interest to their goal."),
    ("TA0011", "Command and Control", "command-and-control", "The adversary is trying to communicate with compromised systems to control them."),
    ("TA0010", "Exfiltration", "exfiltration", "The adversary is trying to steal data."),
    ("TA0040", "Impact", "impact", "The adversary is trying to manipulate, interrupt, or destroy your systems and data."),
]


def sid(kind, key):
    return f"{kind}--{uuid.uuid5(NS, key)}"


def ext_ref(ext_id, path):
    return [{"source_name": "mitre-attack", "external_id": ext_id,
             "url": f"https://attack.mitre.org/{path}/{ext_id.replace('.', '/')}"}]


def base(kind, stix_id, domain):
    return {"type": kind, "id": stix_id, "spec_version": "2.1", "created": CREATED,
            "modified": CREATED, "x_mitre_domains": [domain]}


def tactic_objects(tactics, domain, texts):
    objs = []
    for ext_id, name, short, *rest in tactics:
        o = base("x-mitre-tactic", sid("x-mitre-tactic", domain + short), domain)
        o.update(name=name, x_mitre_shortname=short,
                 description=rest[0] if rest else texts.get(name, ""),
                 external_references=ext_ref(ext_id, "tactics"))
        objs.append(o)
    return objs


def matrix_object(domain, tactic_objs, name):
    o = base("x-mitre-matrix", sid("x-mitre-matrix", domain), domain)
    o.update(name=name, description=f"{name} matrix",
             tactic_refs=[t["id"] for t in tactic_objs],
             external_references=[{"source_name": "mitre-attack", "external_id": domain}])
    return o


def uses(src, dst, domain):
    o = base("relationship", sid("relationship", src + dst), domain)
    o.update(relationship_type="uses", source_ref=src, target_ref=dst)
    return o


def bundle(domain, objects, source_version):
    coll = base("x-mitre-collection", sid("x-mitre-collection", domain), domain)
    coll.update(name=domain, x_mitre_version=f"misp-galaxy-{source_version}",
                description="Offline ATT&CK bundle reconstructed from the MISP galaxy redistribution of MITRE ATT&CK.")
    return {"type": "bundle", "id": sid("bundle", domain), "objects": [coll] + objects}


def build_ics(clusters):
    tech_doc = json.loads((clusters / "mitre-ics-techniques.json").read_text())
    tac_doc = json.loads((clusters / "mitre-ics-tactics.json").read_text())
    grp_doc = json.loads((clusters / "mitre-ics-groups.json").read_text())
    domain = "ics-attack"
    texts = dict(ICS_TACTIC_TEXT)
    for v in tac_doc["values"]:
        texts.setdefault(v["value"], v["description"])
    tactics = tactic_objects(ICS_TACTICS, domain, texts)
    short_by_name = {name: short for _, name, short in ICS_TACTICS}
    names_longest_first = sorted(short_by_name, key=len, reverse=True)

    def parse_tactics(raw):
        found, text = [], " ".join(raw)
        for n in names_longest_first:
            if n in text:
                found.append(n)
                text = text.replace(n, "")
        return found

    objects, by_name, by_old_id = [], {}, {}
    entries = []
    for v in tech_doc["values"]:
        old = v["meta"]["Technique ID"][0]
        name = v["value"]
        ext_id = ICS_ID_BY_NAME.get(name, "T0" + old[1:])
        tac = parse_tactics(v["meta"].get("Tactic", [])) + ICS_EXTRA_TACTICS.get(name, [])
        entries.append((ext_id, name, tac, v["description"], v["uuid"], old))
    for ext_id, name, tac, text in ICS_SUPPLEMENT:
        entries.append((ext_id, name, tac, text, str(uuid.uuid5(NS, ext_id)), None))
    for ext_id, name, tac, text, uid, old in sorted(entries):
        o = base("attack-pattern", f"attack-pattern--{uid}", domain)
        o.update(name=name, description=text, external_references=ext_ref(ext_id, "techniques"),
                 kill_chain_phases=[{"kill_chain_name": "mitre-ics-attack",
                                     "phase_name": short_by_name[t]} for t in tac],
                 x_mitre_is_subtechnique=False)
        objects.append(o)
        by_name[name] = o["id"]
        if old and name not in ICS_ID_BY_NAME:
            by_old_id[old] = o["id"]

    for v in grp_doc["values"]:
        gid = ICS_GROUP_IDS[v["value"]]
        g = base("intrusion-set", f"intrusion-set--{v['uuid']}", domain)
        g.update(name=v["value"], description=v["description"],
                 aliases=v["meta"].get("Associated Group Descriptions", [v["value"]]),
                 external_references=ext_ref(gid, "groups"))
        objects.append(g)
        for used in v["meta"].get("Techniques Used", []):
            target = by_name.get(used.split(" - ")[0].strip())
            if target is None:
                m = re.search(r"Technique/(T\d+)", used)
                target = by_old_id.get(m.group(1)) if m else None
            if target is None:
                print(f"ics: {v['value']}: unresolved technique {used[:60]!r}", file=sys.stderr)
                continue
            objects.append(uses(g["id"], target, domain))
    objects = tactics + [matrix_object(domain, tactics, "ATT&CK for ICS")] + objects
    return bundle(domain, objects, tech_doc.get("version", 0))


def strip_suffix(value):
    return re.sub(r"\s+-\s+[TG]\d{4}(\.\d{3})?$", "", value)


def build_enterprise(clusters):
    ap_doc = json.loads((clusters / "mitre-attack-pattern.json").read_text())
    is_doc = json.loads((clusters / "mitre-intrusion-set.json").read_text())
    domain = "enterprise-attack"
    tactics = tactic_objects(ENTERPRISE_TACTICS, domain, {})
    known = {short for _, _, short, _ in ENTERPRISE_TACTICS}
    objects, ids = [], set()
    for v in ap_doc["values"]:
        phases = sorted({k.split(":", 1)[1] for k in v["meta"].get("kill_chain", [])
                         if k.startswith("attack-") and k.split(":", 1)[1] in known})
        if not phases:
            continue
        ext_id = v["meta"]["external_id"]
        o = base("attack-pattern", f"attack-pattern--{v['uuid']}", domain)
        desc = v["description"]
        o.update(name=strip_suffix(v["value"]), description=desc,
                 external_references=ext_ref(ext_id, "techniques"),
                 kill_chain_phases=[{"kill_chain_name": "mitre-attack", "phase_name": p} for p in phases],
                 x_mitre_is_subtechnique="." in ext_id)
        if v.get("revoked"):
            o["revoked"] = True
        if "deprecated" in desc[:80].lower():
            o["x_mitre_deprecated"] = True
        objects.append(o)
        ids.add(v["uuid"])
        for r in v.get("related", []):
            if r["type"] == "subtechnique-of":
                rel = base("relationship", sid("relationship", v["uuid"] + r["dest-uuid"]), domain)
                rel.update(relationship_type="subtechnique-of", source_ref=o["id"],
                           target_ref=f"attack-pattern--{r['dest-uuid']}")
                objects.append(rel)
    for v in is_doc["values"]:
        g = base("intrusion-set", f"intrusion-set--{v['uuid']}", domain)
        g.update(name=strip_suffix(v["value"]), description=v.get("description", ""),
                 aliases=v["meta"].get("synonyms", []),
                 external_references=ext_ref(v["meta"]["external_id"], "groups"))
        objects.append(g)
        for r in v.get("related", []):
            if r["type"] == "uses" and r["dest-uuid"] in ids:
                objects.append(uses(g["id"], f"attack-pattern--{r['dest-uuid']}", domain))
    objects = tactics + [matrix_object(domain, tactics, "Enterprise ATT&CK")] + objects
    return bundle(domain, objects, ap_doc.get("version", 0))


def main():
    clusters, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    for name, b in (("ics-attack.json", build_ics(clusters)),
                    ("enterprise-attack.json", build_enterprise(clusters))):
        (out / name).write_text(json.dumps(b, indent=1, ensure_ascii=False) + "\n")
        print(f"{name}: {len(b['objects'])} objects")


if __name__ == "__main__":
    main()
