import type { TimeRange } from "./types.js";

/**
 * Time-range navigation for one chart block: zoom pushes the previous
 * range onto a history stack so zoom-out restores it exactly; shift pans
 * by half the window and clamps the right edge to "now".
 */
export class RangeNavigator {
  private history: TimeRange[] = [];
  current: TimeRange;

  constructor(initial: TimeRange) {
    this.current = { ...initial };
  }

  zoomTo(sub: TimeRange): TimeRange {
    const from = Math.max(Math.min(sub.from, sub.to), this.current.from);
    const to = Math.min(Math.max(sub.from, sub.to), this.current.to);
    if (to - from < 1) {
      return this.current;
    }
    this.history.push({ ...this.current });
    this.current = { from, to };
    return this.current;
  }

  zoomOut(): TimeRange {
    const prev = this.history.pop();
    if (prev) {
      this.current = prev;
    }
    return this.current;
  }

  get depth(): number {
    return this.history.length;
  }

  shift(direction: -1 | 1, nowMs: number): TimeRange {
    const width = this.current.to - this.current.from;
    const step = Math.round(width / 2) * direction;
    let from = this.current.from + step;
    let to = this.current.to + step;
    if (to > nowMs) {
      to = nowMs;
      from = nowMs - width;
    }
    this.current = { from, to };
    return this.current;
  }

  setRange(range: TimeRange): TimeRange {
    this.history = [];
    this.current = { ...range };
    return this.current;
  }
}
