import type { Resolution, SeriesResponse, TagInfo, TimeRange, UploadResult } from "./types.js";

/** Thin client over the query API; the dashboard's only backend coupling. */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  async tags(prefix: string, limit = 50): Promise<TagInfo[]> {
    const url = `${this.baseUrl}/tags?prefix=${encodeURIComponent(prefix)}&limit=${limit}`;
    const resp = await this.fetchFn(url);
    if (!resp.ok) {
      throw new Error(`tags: HTTP ${resp.status}`);
    }
    return (await resp.json()).tags as TagInfo[];
  }

  async series(tag: string, range: TimeRange, res: Resolution): Promise<SeriesResponse> {
    const url =
      `${this.baseUrl}/series?tag=${encodeURIComponent(tag)}` +
      `&from=${Math.round(range.from)}&to=${Math.round(range.to)}&res=${res}`;
    const resp = await this.fetchFn(url);
    if (!resp.ok) {
      throw new Error(`series: HTTP ${resp.status}`);
    }
    return (await resp.json()) as SeriesResponse;
  }

  async upload(csvText: string): Promise<UploadResult> {
    const resp = await this.fetchFn(`${this.baseUrl}/upload`, {
      method: "POST",
      headers: { "Content-Type": "text/csv" },
      body: csvText,
    });
    const body = (await resp.json()) as UploadResult;
    if (!resp.ok && body.error === undefined) {
      throw new Error(`upload: HTTP ${resp.status}`);
    }
    return body;
  }

  downloadUrl(tag: string, range: TimeRange): string {
    return (
      `${this.baseUrl}/download?tag=${encodeURIComponent(tag)}` +
      `&from=${Math.round(range.from)}&to=${Math.round(range.to)}`
    );
  }

  async stats(): Promise<Record<string, unknown>> {
    const resp = await this.fetchFn(`${this.baseUrl}/stats`);
    return (await resp.json()) as Record<string, unknown>;
  }
}
