import { execFileSync } from "node:child_process";
import { describe, expect, it } from "vitest";

import { QueryDraft } from "../src/draft.js";
import { BUDGET_PRESETS, TEMPLATES, templateByName } from "../src/templates.js";

function skyDraft(queryId = 314): QueryDraft {
  const draft = new QueryDraft(queryId);
  draft.addFromTemplate(templateByName("RGB_Threshold"));
  draft.addFromTemplate(templateByName("Texture_Match"));
  draft.budget = 150;
  return draft;
}

describe("QueryDraft", () => {
  it("serializes the composed structure", () => {
    const xml = skyDraft().toXml();
    expect(xml).toContain('<?xml version="1.0" encoding="ISO-8859-1"?>');
    expect(xml).toContain('<query id="314">');
    expect(xml).toContain('<and number_of_predicates="2">');
    expect(xml).toContain('<predicate name="RGB_Threshold">');
    expect(xml).toContain('<parameters num="1" p0="B"/>');
    expect(xml).toContain('<threshold value="0.75"/>');
  });

  it("produces XML the server-side parser accepts", () => {
    const xml = skyDraft().toXml();
    // the reference parser is the authority on the wire format
    execFileSync("python3", ["-c",pythonParseCheck], { input: xml });
  });

  it("escapes attribute values", () => {
    const draft = new QueryDraft(1);
    const p = draft.addFromTemplate(templateByName("Face (front)"));
    expect(p.name).toBe("Face (front)");
    const xml = draft.toXml();
    expect(xml).toContain('name="Face (front)"');
    execFileSync("python3", ["-c", pythonParseCheck], { input: xml });
  });

  it("revise keeps the query id, renew rotates it", () => {
    const draft = skyDraft(99);
    expect(draft.revise().queryId).toBe(99);
    expect(draft.renew().queryId).not.toBe(99);
    const revised = draft.revise();
    revised.predicates[0]!.threshold = 0.9;
    expect(draft.predicates[0]!.threshold).not.toBe(0.9); // deep copy
  });

  it("validates budget and thresholds locally", () => {
    const draft = new QueryDraft(1);
    expect(draft.validate()).toContain("add at least one predicate");
    draft.addFromTemplate(templateByName("All_Accept"));
    draft.budget = 5;
    expect(draft.validate().some((p) => p.includes("budget"))).toBe(true);
    draft.budget = 150;
    draft.predicates[0]!.threshold = 2;
    expect(draft.validate().some((p) => p.includes("threshold"))).toBe(true);
  });

  it("offers the documented budget presets", () => {
    expect(BUDGET_PRESETS).toEqual([100, 150, 200]);
    expect(TEMPLATES.length).toBeGreaterThanOrEqual(4);
  });
});

const pythonParseCheck = `
import sys
from theia.query import parse_query
spec = parse_query(sys.stdin.read())
assert spec.root.children, "no predicates parsed"
`;
