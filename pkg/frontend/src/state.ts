// Single view-state store. All updates flow through mutate() so the UI and
// the invariant both hold: the rendered scorecard always belongs to the
// active slice, otherwise the state is explicitly loading.

import { ApiClient, ApiError } from "./api.js";
import { draftToDocument } from "./predicate.js";
import type { PredicateDraft } from "./predicate.js";
import type {
  AnalysisDetail, AnalysisSummary, JobDoc, PlotPayloadDoc, ScorecardDoc,
} from "./types.js";

export type PlotKind = PlotPayloadDoc["kind"];

export interface PendingSlice {
  canonical: string;
  jobId: string | null;
  state: "pending" | "running" | "done" | "failed";
  error: string | null;
}

export interface ViewState {
  analyses: AnalysisSummary[];
  listError: string | null;
  selectedId: string | null;
  detail: AnalysisDetail | null;
  activeSlice: string; // canonical string of the slice on display
  scorecard: ScorecardDoc | null;
  scorecardError: string | null;
  loading: boolean;
  pending: PendingSlice[];
  plotKind: PlotKind;
  disabledKinds: Record<string, string>; // plot kind -> capability reason
  payloads: Record<string, PlotPayloadDoc>; // `${metric}:${kind}` for activeSlice
  showCateTable: boolean;
  draftProblems: string[];
}

export const EMPTY_SLICE = "true";

export class Store {
  state: ViewState = {
    analyses: [],
    listError: null,
    selectedId: null,
    detail: null,
    activeSlice: EMPTY_SLICE,
    scorecard: null,
    scorecardError: null,
    loading: false,
    pending: [],
    plotKind: "ci-interval",
    disabledKinds: {},
    payloads: {},
    showCateTable: false,
    draftProblems: [],
  };

  private listeners: Array<(state: ViewState) => void> = [];

  constructor(private api: ApiClient) {}

  onChange(listener: (state: ViewState) => void) {
    this.listeners.push(listener);
  }

  private mutate(update: (state: ViewState) => void) {
    update(this.state);
    for (const listener of this.listeners) listener(this.state);
  }

  // -- browse ----------------------------------------------------------

  async refresh() {
    try {
      const analyses = await this.api.listAnalyses();
      this.mutate((s) => {
        s.analyses = analyses;
        s.listError = null;
      });
    } catch (err) {
      this.mutate((s) => {
        s.listError = err instanceof Error ? err.message : String(err);
      });
    }
  }

  async open(id: string) {
    this.mutate((s) => {
      s.selectedId = id;
      s.detail = null;
      s.scorecard = null;
      s.scorecardError = null;
      s.activeSlice = EMPTY_SLICE;
      s.pending = [];
      s.payloads = {};
      s.disabledKinds = {};
      s.loading = true;
    });
    await this.refreshDetail();
    await this.selectSlice(EMPTY_SLICE);
  }

  async refreshDetail() {
    const id = this.state.selectedId;
    if (id === null) return;
    try {
      const detail = await this.api.getAnalysis(id);
      this.mutate((s) => {
        s.detail = detail;
      });
    } catch (err) {
      this.mutate((s) => {
        s.scorecardError = err instanceof Error ? err.message : String(err);
      });
    }
  }

  // -- slices ----------------------------------------------------------

  async selectSlice(canonical: string) {
    const id = this.state.selectedId;
    if (id === null) return;
    this.mutate((s) => {
      s.activeSlice = canonical;
      s.scorecard = null; // explicit loading state until the fetch lands
      s.scorecardError = null;
      s.loading = true;
      s.payloads = {};
      s.disabledKinds = {};
    });
    try {
      const scorecard = await this.api.getScorecard(id, canonical);
      if (this.state.activeSlice !== canonical) return; // stale response
      this.mutate((s) => {
        s.scorecard = scorecard;
        s.loading = false;
      });
      await this.loadPayloads();
    } catch (err) {
      if (this.state.activeSlice !== canonical) return;
      this.mutate((s) => {
        s.loading = false;
        s.scorecardError = err instanceof Error ? err.message : String(err);
      });
    }
  }

  async loadPayloads() {
    const { selectedId, scorecard, activeSlice } = this.state;
    if (selectedId === null || scorecard === null) return;
    const payloads: Record<string, PlotPayloadDoc> = {};
    const disabled: Record<string, string> = {};
    for (const metric of scorecard.metrics) {
      for (const kind of ["ci-interval", "box", "timeseries"] as PlotKind[]) {
        try {
          payloads[`${metric.name}:${kind}`] =
            await this.api.getPlot(selectedId, activeSlice, metric.name, kind);
        } catch (err) {
          if (err instanceof ApiError && err.status === 422) {
            disabled[`${metric.name}:${kind}`] = err.message;
          }
        }
      }
    }
    if (this.state.activeSlice !== activeSlice) return;
    this.mutate((s) => {
      s.payloads = payloads;
      s.disabledKinds = disabled;
    });
  }

  async submitDraft(draft: PredicateDraft, problems: string[]) {
    if (problems.length > 0) {
      this.mutate((s) => {
        s.draftProblems = problems;
      });
      return;
    }
    await this.submitSlice(draftToDocument(draft));
  }

  async submitSlice(predicate: Parameters<ApiClient["requestSlice"]>[1]) {
    const id = this.state.selectedId;
    if (id === null) return;
    try {
      const outcome = await this.api.requestSlice(id, predicate);
      this.mutate((s) => {
        s.draftProblems = [];
      });
      if (outcome.cached) {
        await this.refreshDetail();
        await this.selectSlice(outcome.slice);
        return;
      }
      const job = outcome.job as JobDoc;
      this.mutate((s) => {
        if (!s.pending.some((p) => p.canonical === outcome.slice)) {
          s.pending.push({ canonical: outcome.slice, jobId: job.job_id,
                           state: job.state, error: null });
        }
      });
    } catch (err) {
      this.mutate((s) => {
        s.draftProblems = [err instanceof Error ? err.message : String(err)];
      });
    }
  }

  // one poll tick: advance pending jobs, pick up finished scorecards
  async poll() {
    const id = this.state.selectedId;
    if (id === null || this.state.pending.length === 0) return;
    for (const entry of [...this.state.pending]) {
      if (entry.jobId === null) continue;
      let job: JobDoc;
      try {
        job = await this.api.getJob(entry.jobId);
      } catch {
        continue; // transient; next tick retries
      }
      if (job.state === entry.state && job.state !== "done") continue;
      this.mutate((s) => {
        const p = s.pending.find((x) => x.canonical === entry.canonical);
        if (p) {
          p.state = job.state;
          p.error = job.error;
        }
      });
      if (job.state === "done") {
        await this.refreshDetail();
        this.mutate((s) => {
          s.pending = s.pending.filter((x) => x.canonical !== entry.canonical);
        });
        await this.selectSlice(entry.canonical);
      }
    }
  }

  setPlotKind(kind: PlotKind) {
    this.mutate((s) => {
      s.plotKind = kind;
    });
  }

  toggleCateTable() {
    this.mutate((s) => {
      s.showCateTable = !s.showCateTable;
    });
  }
}
