import type { Resolution, TimeRange } from "./types.js";

export const MAX_POINTS = 2000;

const WIDTHS: Record<Exclude<Resolution, "raw">, number> = {
  min: 60_000,
  hour: 3_600_000,
  day: 86_400_000,
};

/**
 * Pick the finest resolution expected to stay within MAX_POINTS for the
 * window. Raw density is unknowable up front, so it is estimated from
 * the given sample rate (default 1 Hz, refined by callers from fetched
 * data).
 */
export function autoResolution(range: TimeRange, rawRateHz = 1.0): Resolution {
  const span = Math.max(range.to - range.from, 0);
  if ((span / 1000) * rawRateHz <= MAX_POINTS) {
    return "raw";
  }
  for (const level of ["min", "hour"] as const) {
    if (span / WIDTHS[level] <= MAX_POINTS) {
      return level;
    }
  }
  return "day";
}

/** Points a window is expected to produce at a given resolution. */
export function expectedPoints(range: TimeRange, res: Resolution, rawRateHz = 1.0): number {
  const span = Math.max(range.to - range.from, 0);
  return res === "raw" ? (span / 1000) * rawRateHz : span / WIDTHS[res];
}
