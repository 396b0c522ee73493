/** A query draft under composition, serializable to the XML wire format. */

import { ParameterField, PredicateTemplate } from "./templates.js";

export interface DraftPredicate {
  name: string;
  parameters: ParameterField[];
  threshold: number;
}

export class QueryDraft {
  op: "and" | "or" = "and";
  predicates: DraftPredicate[] = [];
  budget = 150;
  /** Stable across revisions of the same search intent. */
  queryId: number;

  constructor(queryId?: number) {
    this.queryId = queryId ?? QueryDraft.freshId();
  }

  static freshId(): number {
    return Math.floor(Math.random() * 2 ** 31);
  }

  addFromTemplate(template: PredicateTemplate): DraftPredicate {
    const predicate: DraftPredicate = {
      name: template.name,
      parameters: template.parameters.map((p) => ({ ...p })),
      threshold: template.threshold,
    };
    this.predicates.push(predicate);
    return predicate;
  }

  removeAt(index: number): void {
    this.predicates.splice(index, 1);
  }

  /** Start a revision: same structure, same query id (state carries over). */
  revise(): QueryDraft {
    const next = new QueryDraft(this.queryId);
    next.op = this.op;
    next.budget = this.budget;
    next.predicates = this.predicates.map((p) => ({
      ...p,
      parameters: p.parameters.map((f) => ({ ...f })),
    }));
    return next;
  }

  /** Start over under a fresh query id: no shared searched-photo state. */
  renew(): QueryDraft {
    const next = this.revise();
    next.queryId = QueryDraft.freshId();
    return next;
  }

  validate(): string[] {
    const problems: string[] = [];
    if (this.predicates.length === 0) problems.push("add at least one predicate");
    if (!Number.isInteger(this.budget) || this.budget < 12)
      problems.push("budget must be an integer of at least 12 units");
    for (const p of this.predicates) {
      if (p.threshold < 0 || p.threshold > 1)
        problems.push(`${p.name}: threshold must lie in [0, 1]`);
    }
    return problems;
  }

  toXml(): string {
    const lines: string[] = [
      '<?xml version="1.0" encoding="ISO-8859-1"?>',
      `<query id="${this.queryId}">`,
      `  <${this.op} number_of_predicates="${this.predicates.length}">`,
    ];
    for (const p of this.predicates) {
      lines.push(`    <predicate name="${escapeAttr(p.name)}">`);
      const params = p.parameters
        .map((f, i) => ` p${i}="${escapeAttr(formatValue(f.value))}"`)
        .join("");
      lines.push(`      <parameters num="${p.parameters.length}"${params}/>`);
      lines.push('      <dependencies num="0"/>');
      lines.push(`      <threshold value="${formatValue(p.threshold)}"/>`);
      lines.push("    </predicate>");
    }
    lines.push(`  </${this.op}>`, "</query>", "");
    return lines.join("\n");
  }
}

function formatValue(value: number | string): string {
  if (typeof value === "string") return value;
  return Number.isInteger(value) ? String(value) : String(value);
}

function escapeAttr(value: string): string {
  return value
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}
