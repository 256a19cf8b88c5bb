// Typed client for the analysis service. The UI performs no statistics of
// its own: every number it shows came out of one of these calls.

import type {
  AnalysisDetail, AnalysisSummary, JobDoc, PlotPayloadDoc, PredicateDoc,
  ScorecardDoc, SliceOutcome,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(res.status, code, message);
}

export class ApiClient {
  constructor(private base: string) {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) throw await parseError(res);
    return res.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await parseError(res);
    return res.json() as Promise<T>;
  }

  async listAnalyses(): Promise<AnalysisSummary[]> {
    const body = await this.get<{ analyses: AnalysisSummary[] }>("/analyses");
    return body.analyses;
  }

  getAnalysis(id: string): Promise<AnalysisDetail> {
    return this.get(`/analyses/${id}`);
  }

  requestSlice(id: string, predicate: PredicateDoc): Promise<SliceOutcome> {
    return this.post(`/analyses/${id}/slices`, { slice: predicate });
  }

  getScorecard(id: string, sliceCanonical: string): Promise<ScorecardDoc> {
    const param = encodeURIComponent(sliceCanonical);
    return this.get(`/analyses/${id}/scorecards?slice=${param}`);
  }

  getJob(jobId: string): Promise<JobDoc> {
    return this.get(`/jobs/${jobId}`);
  }

  getPlot(id: string, sliceCanonical: string, metric: string,
          kind: PlotPayloadDoc["kind"]): Promise<PlotPayloadDoc> {
    const slice = encodeURIComponent(sliceCanonical);
    const m = encodeURIComponent(metric);
    return this.get(`/analyses/${id}/plots?slice=${slice}&metric=${m}&kind=${kind}`);
  }
}
