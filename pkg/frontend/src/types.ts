export type Resolution = "raw" | "min" | "hour" | "day";

export interface RawPoint {
  t: number;
  v: number;
  status: number;
}

export interface AggPoint {
  t: number;
  min: number;
  max: number;
  close: number;
  count: number;
}

export interface SeriesResponse {
  tag: string;
  resolution: Resolution;
  points: RawPoint[] | AggPoint[];
}

export interface TagInfo {
  name: string;
  id: number;
}

export interface TimeRange {
  from: number;
  to: number;
}

export interface UploadResult {
  imported: number;
  error?: string;
  line?: number;
}
