// Number formatting for display; raw values stay on data-raw attributes so
// every rendered figure is traceable to its scorecard field.

export function formatNumber(value: number, precision = 4): string {
  if (!Number.isFinite(value)) return String(value);
  if (Number.isInteger(value) && Math.abs(value) < 1e15) return String(value);
  const magnitude = Math.abs(value);
  if (magnitude !== 0 && (magnitude < 1e-4 || magnitude >= 1e7)) {
    return value.toExponential(precision);
  }
  return value.toFixed(precision);
}

export function formatP(p: number): string {
  if (p < 1e-4) return p.toExponential(2);
  return p.toFixed(4);
}

export function precisionOf(display: Record<string, unknown>): number {
  const p = display["precision"];
  return typeof p === "number" && p >= 0 && p <= 12 ? p : 4;
}
