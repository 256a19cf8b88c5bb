// Slice predicate builder: rows of (dimension, comparator, value) combined
// with one AND/OR connective. Only dimensions declared by the analysis are
// offered, so unsupportable slices are rejected before submission.

import type { PredicateDoc } from "./types.js";

export interface ClauseDraft {
  column: string;
  cmp: "eq" | "ne" | "in";
  value: string; // 'in' uses comma-separated values
}

export interface PredicateDraft {
  op: "and" | "or";
  clauses: ClauseDraft[];
}

export function emptyDraft(): PredicateDraft {
  return { op: "and", clauses: [] };
}

export function validateDraft(draft: PredicateDraft,
                              dimensions: string[]): string[] {
  const problems: string[] = [];
  if (draft.clauses.length === 0) {
    problems.push("add at least one clause (or open the overall scorecard)");
  }
  for (const clause of draft.clauses) {
    if (!clause.column) {
      problems.push("every clause needs a dimension");
    } else if (!dimensions.includes(clause.column)) {
      problems.push(`'${clause.column}' is not a dimension of this analysis`);
    }
    if (clause.value.trim() === "") {
      problems.push(`clause on '${clause.column || "?"}' needs a value`);
    }
  }
  return problems;
}

export function draftToDocument(draft: PredicateDraft): PredicateDoc {
  if (draft.clauses.length === 0) return true;
  const children: PredicateDoc[] = draft.clauses.map((clause) => {
    if (clause.cmp === "in") {
      const values = clause.value.split(",").map((v) => v.trim()).filter(Boolean);
      return { col: clause.column, cmp: "in", value: values };
    }
    return { col: clause.column, cmp: clause.cmp, value: clause.value.trim() };
  });
  if (children.length === 1) return children[0];
  return { op: draft.op, children };
}

// Harvest picker values from already-computed slice keys: the pre-computed
// single-value slices mention each dimension value the service knows about.
export function valuesFromSliceKeys(sliceKeys: string[]): Record<string, string[]> {
  const out: Record<string, Set<string>> = {};
  for (const key of sliceKeys) {
    let doc: PredicateDoc;
    try {
      doc = JSON.parse(key) as PredicateDoc;
    } catch {
      continue;
    }
    collectValues(doc, out);
  }
  const sorted: Record<string, string[]> = {};
  for (const [col, values] of Object.entries(out)) {
    sorted[col] = [...values].sort();
  }
  return sorted;
}

function collectValues(doc: PredicateDoc, out: Record<string, Set<string>>) {
  if (doc === true || typeof doc !== "object") return;
  if ("op" in doc) {
    for (const child of doc.children) collectValues(child, out);
    return;
  }
  if (typeof doc.value === "string") {
    (out[doc.col] ??= new Set()).add(doc.value);
  } else if (Array.isArray(doc.value)) {
    for (const v of doc.value) {
      if (typeof v === "string") (out[doc.col] ??= new Set()).add(v);
    }
  }
}

export function describePredicate(doc: PredicateDoc): string {
  if (doc === true) return "overall";
  if ("op" in doc) {
    const parts = doc.children.map(describePredicate);
    return parts.join(doc.op === "and" ? " AND " : " OR ");
  }
  const value = Array.isArray(doc.value) ? `{${doc.value.join(", ")}}` : String(doc.value);
  const symbol = { eq: "=", ne: "≠", lt: "<", le: "≤", gt: ">",
                   ge: "≥", in: "∈" }[doc.cmp] ?? doc.cmp;
  return `${doc.col} ${symbol} ${value}`;
}
