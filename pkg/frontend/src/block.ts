import { ApiClient } from "./api.js";
import { autoResolution } from "./resolution.js";
import { RangeNavigator } from "./range.js";
import type { Resolution, SeriesResponse, TimeRange } from "./types.js";

export type ResolutionMode = Resolution | "auto";

export interface BlockClock {
  now(): number;
  setTimeout(fn: () => void, ms: number): unknown;
  clearTimeout(handle: unknown): void;
}

const realClock: BlockClock = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms),
  clearTimeout: (h) => clearTimeout(h as number),
};

export interface BlockState {
  tags: string[];
  range: TimeRange;
  resolutionMode: ResolutionMode;
  effectiveResolution: Resolution;
  live: boolean;
  refreshSecs: number;
  stale: boolean;
  series: Map<string, SeriesResponse>;
  lastError: string | null;
}

let nextBlockId = 1;

/**
 * One chart block: owns its tag list, time range, resolution choice and
 * fetch lifecycle. Blocks are fully independent of each other. At most
 * one /series round per block is in flight; range changes are debounced
 * 200 ms; live tail polls every refreshSecs and backs off while the
 * backend is unreachable (stale flag set).
 */
export class ChartBlock {
  readonly id: number;
  readonly state: BlockState;
  private readonly nav: RangeNavigator;
  private readonly clock: BlockClock;
  private debounceHandle: unknown = null;
  private liveHandle: unknown = null;
  private inFlight = false;
  private refetchQueued = false;
  private backoffMs = 0;
  private disposed = false;
  private rawRateHz = 1.0;
  fetchCount = 0;
  onUpdate: (block: ChartBlock) => void = () => {};

  constructor(
    private readonly api: ApiClient,
    initialRange: TimeRange,
    clock: BlockClock = realClock,
    refreshSecs = 2,
  ) {
    this.id = nextBlockId++;
    this.nav = new RangeNavigator(initialRange);
    this.clock = clock;
    this.state = {
      tags: [],
      range: this.nav.current,
      resolutionMode: "auto",
      effectiveResolution: autoResolution(initialRange),
      live: false,
      refreshSecs,
      stale: false,
      series: new Map(),
      lastError: null,
    };
  }

  dispose(): void {
    this.disposed = true;
    if (this.debounceHandle !== null) this.clock.clearTimeout(this.debounceHandle);
    if (this.liveHandle !== null) this.clock.clearTimeout(this.liveHandle);
  }

  // -- selection -------------------------------------------------------------

  addTag(tag: string): void {
    if (!this.state.tags.includes(tag)) {
      this.state.tags.push(tag);
      this.scheduleFetch();
    }
  }

  removeTag(tag: string): void {
    const i = this.state.tags.indexOf(tag);
    if (i >= 0) {
      this.state.tags.splice(i, 1);
      this.state.series.delete(tag);
      this.onUpdate(this);
    }
  }

  setResolutionMode(mode: ResolutionMode): void {
    this.state.resolutionMode = mode;
    this.scheduleFetch();
  }

  setRefreshSecs(secs: number): void {
    this.state.refreshSecs = Math.max(0.2, secs);
  }

  // -- range navigation --------------------------------------------------------

  setRange(range: TimeRange): void {
    this.state.range = this.nav.setRange(range);
    this.scheduleFetch();
  }

  zoomTo(sub: TimeRange): void {
    this.state.range = this.nav.zoomTo(sub);
    this.scheduleFetch();
  }

  zoomOut(): void {
    this.state.range = this.nav.zoomOut();
    this.scheduleFetch();
  }

  get zoomDepth(): number {
    return this.nav.depth;
  }

  shift(direction: -1 | 1): void {
    this.state.range = this.nav.shift(direction, this.clock.now());
    this.scheduleFetch();
  }

  setLive(on: boolean): void {
    this.state.live = on;
    if (on) {
      this.pollLive();
    } else if (this.liveHandle !== null) {
      this.clock.clearTimeout(this.liveHandle);
      this.liveHandle = null;
    }
  }

  // -- fetching -----------------------------------------------------------------

  resolution(): Resolution {
    return this.state.resolutionMode === "auto"
      ? autoResolution(this.state.range, this.rawRateHz)
      : this.state.resolutionMode;
  }

  /** Debounced entry point for user-driven changes. */
  scheduleFetch(): void {
    if (this.disposed) return;
    if (this.debounceHandle !== null) {
      this.clock.clearTimeout(this.debounceHandle);
    }
    this.debounceHandle = this.clock.setTimeout(() => {
      this.debounceHandle = null;
      void this.refresh();
    }, 200);
  }

  /** Fetch all selected tags once; serialized per block. */
  async refresh(): Promise<void> {
    if (this.disposed) return;
    if (this.inFlight) {
      this.refetchQueued = true;
      return;
    }
    this.inFlight = true;
    const res = this.resolution();
    this.state.effectiveResolution = res;
    try {
      const range = { ...this.state.range };
      for (const tag of [...this.state.tags]) {
        const series = await this.api.series(tag, range, res);
        this.state.series.set(tag, series);
        if (res === "raw" && series.points.length > 1) {
          const span = (range.to - range.from) / 1000;
          this.rawRateHz = Math.max(series.points.length / Math.max(span, 1), 0.001);
        }
      }
      this.state.stale = false;
      this.state.lastError = null;
      this.backoffMs = 0;
    } catch (err) {
      this.state.stale = true;
      this.state.lastError = String(err);
      this.backoffMs = Math.min(this.backoffMs === 0 ? 1000 : this.backoffMs * 2, 30_000);
    } finally {
      this.inFlight = false;
    }
    this.onUpdate(this);
    if (this.refetchQueued) {
      this.refetchQueued = false;
      void this.refresh();
    }
  }

  private pollLive(): void {
    if (this.disposed || !this.state.live) return;
    const width = this.state.range.to - this.state.range.from;
    const now = this.clock.now();
    this.state.range = this.nav.setRange({ from: now - width, to: now });
    void this.refresh().then(() => {
      if (this.disposed || !this.state.live) return;
      const delay = this.state.stale
        ? Math.max(this.backoffMs, this.state.refreshSecs * 1000)
        : this.state.refreshSecs * 1000;
      this.liveHandle = this.clock.setTimeout(() => this.pollLive(), delay);
    });
  }
}
