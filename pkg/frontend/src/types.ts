// Document shapes served by the analysis service HTTP API.

export interface AnalysisSummary {
  id: string;
  name: string;
  state: "queued" | "materializing" | "ready" | "failed";
  created_at: string;
  metrics: string[];
  dimensions: string[];
  slice_count: number;
  error: string | null;
}

export interface AnalysisDetail {
  id: string;
  spec: {
    name: string;
    metrics: string[];
    dimensions: string[];
    precompute: string[];
    [key: string]: unknown;
  };
  state: AnalysisSummary["state"];
  created_at: string;
  seed: number;
  error: string | null;
  slices: Record<string, string>;
  pending_slices: string[];
}

export interface EffectDoc {
  kind: "ate" | "cate" | "dte";
  estimate: number;
  variance: number;
  ci: [number, number];
  ci_level: number;
  p_value: number;
  method: string;
  n_control: number;
  n_treatment: number;
  label?: string;
  extras?: Record<string, number | string>;
}

export interface CellSummaryDoc {
  count: number;
  mean: number;
  variance: number;
  min?: number;
  max?: number;
  quantiles?: Record<string, number>;
}

export interface MetricResultDoc {
  name: string;
  display: Record<string, unknown>;
  summaries: Record<string, CellSummaryDoc>;
  effects: EffectDoc[];
}

export interface ScorecardDoc {
  schema_version: number;
  analysis_id: string;
  created_at: string;
  slice_canonical: string;
  data_fingerprint: string;
  seed: number;
  engine_version: string;
  metrics: MetricResultDoc[];
}

export interface JobDoc {
  job_id: string;
  kind: "materialize" | "slice" | "meta-replay";
  analysis_id: string | null;
  state: "pending" | "running" | "done" | "failed";
  slice: string | null;
  error: string | null;
}

export interface SliceOutcome {
  cached: boolean;
  slice: string;
  scorecard?: string;
  job?: JobDoc;
}

export interface PlotSeriesPoint {
  [key: string]: number | string | null;
}

export interface PlotPayloadDoc {
  kind: "ci-interval" | "box" | "timeseries";
  metric: string;
  display: Record<string, unknown>;
  series: PlotSeriesPoint[];
}

// predicate documents mirror the service's JSON predicate trees
export type PredicateDoc =
  | true
  | { col: string; cmp: string; value: unknown }
  | { op: "and" | "or"; children: PredicateDoc[] };
