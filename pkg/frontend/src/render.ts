// DOM rendering. Pure functions from view state to elements; every numeric
// cell carries data-raw with the exact scorecard field value so displayed
// figures are mechanically traceable to the document.

import { renderChart } from "./charts.js";
import { formatNumber, formatP, precisionOf } from "./format.js";
import { describePredicate, valuesFromSliceKeys } from "./predicate.js";
import type { PredicateDraft } from "./predicate.js";
import type { PlotKind, ViewState } from "./state.js";
import type { EffectDoc, MetricResultDoc, PredicateDoc } from "./types.js";

export interface Handlers {
  onOpen(id: string): void;
  onSelectSlice(canonical: string): void;
  onSubmitDraft(draft: PredicateDraft): void;
  onPlotKind(kind: PlotKind): void;
  onToggleCate(): void;
  onRetry(): void;
}

type Attrs = Record<string, string | ((event: Event) => void)>;

function h(tag: string, attrs: Attrs = {}, children: Array<Node | string> = []):
    HTMLElement {
  const el = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "function") {
      el.addEventListener(key, value);
    } else {
      el.setAttribute(key, value);
    }
  }
  for (const child of children) {
    el.append(child);
  }
  return el;
}

function numberCell(value: number, field: string, precision: number,
                    asP = false): HTMLElement {
  return h("td", { "data-field": field, "data-raw": String(value) },
           [asP ? formatP(value) : formatNumber(value, precision)]);
}

export function renderApp(state: ViewState, handlers: Handlers): HTMLElement {
  const root = h("div", { class: "app" });
  if (state.listError !== null) {
    root.append(h("div", { class: "banner error", role: "alert" }, [
      `service unreachable: ${state.listError} `,
      h("button", { class: "retry", click: () => handlers.onRetry() }, ["retry"]),
    ]));
  }
  root.append(renderAnalysisList(state, handlers));
  if (state.selectedId !== null) {
    root.append(renderConsole(state, handlers));
  }
  return root;
}

function renderAnalysisList(state: ViewState, handlers: Handlers): HTMLElement {
  const panel = h("section", { class: "analyses" });
  panel.append(h("h2", {}, ["Analyses"]));
  if (state.analyses.length === 0 && state.listError === null) {
    panel.append(h("p", { class: "empty" },
                   ["no analyses yet - submit one through the API"]));
    return panel;
  }
  const list = h("ul", { class: "analysis-list" });
  for (const summary of state.analyses) {
    const item = h("li", {
      class: summary.id === state.selectedId ? "selected" : "",
      "data-analysis": summary.id,
    });
    item.append(h("button", { class: "open", click: () => handlers.onOpen(summary.id) },
                  [summary.name]));
    item.append(h("span", { class: `state ${summary.state}` }, [summary.state]));
    item.append(h("span", { class: "meta" },
                  [`${summary.metrics.length} metrics, ${summary.slice_count} slices`]));
    list.append(item);
  }
  panel.append(list);
  return panel;
}

function renderConsole(state: ViewState, handlers: Handlers): HTMLElement {
  const panel = h("section", { class: "console" });
  panel.append(renderSliceChips(state, handlers));
  panel.append(renderBuilder(state, handlers));
  if (state.scorecardError !== null) {
    panel.append(h("div", { class: "banner error" }, [state.scorecardError]));
  }
  if (state.loading || state.scorecard === null) {
    if (state.scorecardError === null) {
      panel.append(h("p", { class: "loading" },
                     [`loading ${describeCanonical(state.activeSlice)}...`]));
    }
    return panel;
  }
  const scorecard = state.scorecard;
  const header = h("header", { class: "scorecard-header" });
  header.append(h("h2", {}, [`Scorecard: ${describeCanonical(scorecard.slice_canonical)}`]));
  header.append(h("p", { class: "provenance" }, [
    `analysis ${scorecard.analysis_id.slice(0, 12)} | seed `,
    h("span", { "data-field": "seed", "data-raw": String(scorecard.seed) },
      [String(scorecard.seed)]),
    ` | engine ${scorecard.engine_version} | data ${scorecard.data_fingerprint.slice(0, 12)}`,
  ]));
  panel.append(header);
  panel.append(renderKindToggles(state, handlers));
  for (const metric of scorecard.metrics) {
    panel.append(renderMetric(state, metric));
  }
  return panel;
}

function describeCanonical(canonical: string): string {
  try {
    return describePredicate(JSON.parse(canonical) as PredicateDoc);
  } catch {
    return canonical;
  }
}

function renderSliceChips(state: ViewState, handlers: Handlers): HTMLElement {
  const bar = h("div", { class: "chips" });
  const computed = Object.keys(state.detail?.slices ?? {}).sort();
  for (const canonical of computed) {
    bar.append(h("button", {
      class: canonical === state.activeSlice ? "chip active" : "chip",
      "data-slice": canonical,
      click: () => handlers.onSelectSlice(canonical),
    }, [describeCanonical(canonical)]));
  }
  for (const pending of state.pending) {
    bar.append(h("span", {
      class: `chip pending ${pending.state}`,
      "data-slice": pending.canonical,
    }, [`${describeCanonical(pending.canonical)} (${pending.state})`]));
  }
  return bar;
}

function renderBuilder(state: ViewState, handlers: Handlers): HTMLElement {
  const dims = state.detail?.spec.dimensions ?? [];
  const values = valuesFromSliceKeys(Object.keys(state.detail?.slices ?? {}));
  const form = h("form", {
    class: "builder",
    submit: (event) => {
      event.preventDefault();
      handlers.onSubmitDraft(readDraft(form));
    },
  });
  form.append(h("h3", {}, ["Slice console"]));
  const rows = h("div", { class: "clauses" });
  form.append(rows);
  const addRow = () => rows.append(renderClauseRow(dims, values));
  addRow();
  form.append(h("button", { type: "button", class: "add-clause",
                            click: () => addRow() }, ["+ clause"]));
  const connective = h("select", { name: "op", class: "op" }, [
    h("option", { value: "and" }, ["ALL (AND)"]),
    h("option", { value: "or" }, ["ANY (OR)"]),
  ]);
  form.append(connective);
  form.append(h("button", { type: "submit", class: "submit" }, ["compute slice"]));
  if (state.draftProblems.length > 0) {
    form.append(h("ul", { class: "problems" },
                  state.draftProblems.map((p) => h("li", {}, [p]))));
  }
  return form;
}

function renderClauseRow(dims: string[], values: Record<string, string[]>):
    HTMLElement {
  const row = h("div", { class: "clause" });
  const dim = h("select", { class: "dim" },
                dims.map((d) => h("option", { value: d }, [d])));
  const cmp = h("select", { class: "cmp" }, [
    h("option", { value: "eq" }, ["="]),
    h("option", { value: "ne" }, ["≠"]),
    h("option", { value: "in" }, ["in"]),
  ]);
  const value = h("input", { class: "value", list: "dim-values" });
  const datalist = h("datalist", { id: "dim-values" });
  for (const vs of Object.values(values)) {
    for (const v of vs) datalist.append(h("option", { value: v }));
  }
  row.append(dim, cmp, value, datalist);
  return row;
}

export function readDraft(form: HTMLElement): PredicateDraft {
  const op = (form.querySelector("select.op") as HTMLSelectElement | null)
    ?.value === "or" ? "or" : "and";
  const clauses = [...form.querySelectorAll(".clause")].map((row) => ({
    column: (row.querySelector(".dim") as HTMLSelectElement).value,
    cmp: (row.querySelector(".cmp") as HTMLSelectElement).value as
      "eq" | "ne" | "in",
    value: (row.querySelector(".value") as HTMLInputElement).value,
  })).filter((clause) => clause.value.trim() !== "");
  return { op, clauses };
}

function renderKindToggles(state: ViewState, handlers: Handlers): HTMLElement {
  const bar = h("div", { class: "kind-toggles" });
  for (const kind of ["ci-interval", "box", "timeseries"] as PlotKind[]) {
    bar.append(h("button", {
      class: kind === state.plotKind ? "kind active" : "kind",
      "data-kind": kind,
      click: () => handlers.onPlotKind(kind),
    }, [kind]));
  }
  bar.append(h("button", { class: "cate-toggle", click: () => handlers.onToggleCate() },
               [state.showCateTable ? "hide segment effects" : "show segment effects"]));
  return bar;
}

function renderMetric(state: ViewState, metric: MetricResultDoc): HTMLElement {
  const precision = precisionOf(metric.display);
  const block = h("article", { class: "metric", "data-metric": metric.name });
  const label = typeof metric.display["label"] === "string"
    ? (metric.display["label"] as string) : metric.name;
  block.append(h("h3", {}, [label]));

  const summary = h("table", { class: "summaries" });
  summary.append(h("tr", {}, ["cell", "units", "mean", "variance"].map(
    (t) => h("th", {}, [t]))));
  for (const [cell, cellSummary] of Object.entries(metric.summaries).sort()) {
    const path = `metrics.${metric.name}.summaries.${cell}`;
    summary.append(h("tr", {}, [
      h("td", {}, [cell]),
      numberCell(cellSummary.count, `${path}.count`, 0),
      numberCell(cellSummary.mean, `${path}.mean`, precision),
      numberCell(cellSummary.variance, `${path}.variance`, precision),
    ]));
  }
  block.append(summary);

  const mainEffects = metric.effects.filter((e) => e.kind === "ate");
  if (mainEffects.length > 0) {
    block.append(renderEffectsTable(metric.name, mainEffects, precision,
                                    "effects"));
  }
  if (state.showCateTable) {
    const cates = metric.effects.filter((e) => e.kind === "cate");
    if (cates.length > 0) {
      block.append(h("h4", {}, ["segment effects"]));
      block.append(renderEffectsTable(metric.name, cates, precision, "cate"));
    }
  }

  const key = `${metric.name}:${state.plotKind}`;
  const payload = state.payloads[key];
  const reason = state.disabledKinds[key];
  if (payload !== undefined) {
    const chart = h("figure", { class: "chart" });
    chart.innerHTML = renderChart(payload);
    block.append(chart);
  } else if (reason !== undefined) {
    block.append(h("p", { class: "chart-unavailable", title: reason },
                   [`${state.plotKind} unavailable: ${reason}`]));
  }
  return block;
}

function renderEffectsTable(metricName: string, effects: EffectDoc[],
                            precision: number, cls: string): HTMLElement {
  const table = h("table", { class: cls });
  table.append(h("tr", {}, ["model", "segment", "estimate", "ci low", "ci high",
                            "p-value"].map((t) => h("th", {}, [t]))));
  effects.forEach((effect, i) => {
    const path = `metrics.${metricName}.effects[${effect.method}` +
      `${effect.label !== undefined ? ":" + effect.label : ""}]`;
    const row = h("tr", {
      class: effect.p_value < 1 - effect.ci_level ? "significant" : "",
      "data-effect": `${effect.method}:${effect.label ?? ""}:${i}`,
    }, [
      h("td", {}, [effect.method]),
      h("td", {}, [effect.label ?? "overall"]),
      numberCell(effect.estimate, `${path}.estimate`, precision),
      numberCell(effect.ci[0], `${path}.ci[0]`, precision),
      numberCell(effect.ci[1], `${path}.ci[1]`, precision),
      numberCell(effect.p_value, `${path}.p_value`, precision, true),
    ]);
    table.append(row);
  });
  return table;
}
