import type { AggPoint, RawPoint, SeriesResponse, TimeRange } from "./types.js";

export interface DrawnSeries {
  /** SVG path for the value line (raw) or close line (aggregates). */
  line: string;
  /** SVG path for the min/max band; empty for raw series. */
  band: string;
  yMin: number;
  yMax: number;
  pointCount: number;
}

const fmt = (x: number) => (Number.isInteger(x) ? String(x) : x.toFixed(2));

/**
 * Pure projection of a series response onto an SVG viewport: the same
 * response always yields the same path strings (snapshot-testable).
 * Aggregate series draw a min/max band plus the close line.
 */
export function drawSeries(
  series: SeriesResponse,
  range: TimeRange,
  width: number,
  height: number,
): DrawnSeries {
  const points = series.points;
  if (points.length === 0) {
    return { line: "", band: "", yMin: 0, yMax: 0, pointCount: 0 };
  }
  const isRaw = series.resolution === "raw";
  let yMin = Infinity;
  let yMax = -Infinity;
  for (const p of points) {
    if (isRaw) {
      const rp = p as RawPoint;
      yMin = Math.min(yMin, rp.v);
      yMax = Math.max(yMax, rp.v);
    } else {
      const ap = p as AggPoint;
      yMin = Math.min(yMin, ap.min);
      yMax = Math.max(yMax, ap.max);
    }
  }
  if (yMax === yMin) {
    yMax = yMin + 1;
  }
  const spanX = Math.max(range.to - range.from, 1);
  const x = (t: number) => ((t - range.from) / spanX) * width;
  const y = (v: number) => height - ((v - yMin) / (yMax - yMin)) * height;

  let line = "";
  for (let i = 0; i < points.length; i++) {
    const p = points[i];
    const v = isRaw ? (p as RawPoint).v : (p as AggPoint).close;
    line += `${i === 0 ? "M" : "L"}${fmt(x(p.t))},${fmt(y(v))}`;
  }

  let band = "";
  if (!isRaw) {
    const aggs = points as AggPoint[];
    for (let i = 0; i < aggs.length; i++) {
      band += `${i === 0 ? "M" : "L"}${fmt(x(aggs[i].t))},${fmt(y(aggs[i].max))}`;
    }
    for (let i = aggs.length - 1; i >= 0; i--) {
      band += `L${fmt(x(aggs[i].t))},${fmt(y(aggs[i].min))}`;
    }
    band += "Z";
  }
  return { line, band, yMin, yMax, pointCount: points.length };
}
