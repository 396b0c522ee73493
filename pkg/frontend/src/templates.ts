/** Predicate templates the composer offers, with editable parameters. */

export interface ParameterField {
  name: string;
  kind: "number" | "string";
  value: number | string;
}

export interface PredicateTemplate {
  /** Registry name the server resolves. */
  name: string;
  label: string;
  parameters: ParameterField[];
  threshold: number;
  thresholdRange: [number, number];
  /** Detector stand-ins decide by their own rule; threshold is cosmetic. */
  usesThreshold: boolean;
}

export const TEMPLATES: PredicateTemplate[] = [
  {
    name: "Face (front)",
    label: "Face detection",
    parameters: [],
    threshold: 1,
    thresholdRange: [0, 1],
    usesThreshold: false,
  },
  {
    name: "RGB_Threshold",
    label: "Color channel threshold",
    parameters: [{ name: "channel", kind: "string", value: "B" }],
    threshold: 160 / 255,
    thresholdRange: [0, 1],
    usesThreshold: true,
  },
  {
    name: "Texture_Match",
    label: "Texture match",
    parameters: [
      { name: "mean", kind: "number", value: 169 },
      { name: "std", kind: "number", value: 3 },
      { name: "grad", kind: "number", value: 2 },
    ],
    threshold: 0.75,
    thresholdRange: [0, 1],
    usesThreshold: true,
  },
  {
    name: "All_Accept",
    label: "Accept everything",
    parameters: [],
    threshold: 0,
    thresholdRange: [0, 1],
    usesThreshold: false,
  },
];

export function templateByName(name: string): PredicateTemplate {
  const found = TEMPLATES.find((t) => t.name === name);
  if (!found) throw new Error(`unknown template ${name}`);
  return found;
}

/** Per-result charge in the default cost model. */
export const PER_RESULT_COST = 10;

/** Moderate budgets of 10x / 15x / 20x the per-result cost work well. */
export const BUDGET_PRESETS = [10, 15, 20].map((k) => k * PER_RESULT_COST);
