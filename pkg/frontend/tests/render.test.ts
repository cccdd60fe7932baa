import { describe, expect, it } from "vitest";

import { drawSeries } from "../src/render.js";
import type { SeriesResponse } from "../src/types.js";

const rawSeries: SeriesResponse = {
  tag: "Z::g/d/OUT.PV",
  resolution: "raw",
  points: [
    { t: 0, v: 1.0, status: 0 },
    { t: 500, v: 3.0, status: 0 },
    { t: 1000, v: 2.0, status: 0 },
  ],
};

const aggSeries: SeriesResponse = {
  tag: "Z::g/d/OUT.PV",
  resolution: "min",
  points: [
    { t: 0, min: 1.0, max: 4.0, close: 2.0, count: 10 },
    { t: 60_000, min: 0.0, max: 3.0, close: 1.0, count: 12 },
  ],
};

describe("drawSeries", () => {
  it("is a pure function of the response: identical input, identical paths", () => {
    const a = drawSeries(rawSeries, { from: 0, to: 1000 }, 100, 50);
    const b = drawSeries(structuredClone(rawSeries), { from: 0, to: 1000 }, 100, 50);
    expect(a).toEqual(b);
  });

  it("matches the raw snapshot", () => {
    const drawn = drawSeries(rawSeries, { from: 0, to: 1000 }, 100, 50);
    expect(drawn.line).toBe("M0,50L50,0L100,25");
    expect(drawn.band).toBe("");
    expect(drawn.yMin).toBe(1);
    expect(drawn.yMax).toBe(3);
    expect(drawn.pointCount).toBe(3);
  });

  it("renders aggregates as a min/max band plus close line", () => {
    const drawn = drawSeries(aggSeries, { from: 0, to: 120_000 }, 120, 40);
    expect(drawn.line).toBe("M0,20L60,30");
    expect(drawn.band).toBe("M0,0L60,10L60,40L0,30Z");
  });

  it("handles an empty series", () => {
    const drawn = drawSeries({ tag: "x", resolution: "raw", points: [] }, { from: 0, to: 1 }, 10, 10);
    expect(drawn).toEqual({ line: "", band: "", yMin: 0, yMax: 0, pointCount: 0 });
  });

  it("flat series still produce a drawable line", () => {
    const flat: SeriesResponse = {
      tag: "x",
      resolution: "raw",
      points: [
        { t: 0, v: 5.0, status: 0 },
        { t: 10, v: 5.0, status: 0 },
      ],
    };
    const drawn = drawSeries(flat, { from: 0, to: 10 }, 10, 10);
    expect(drawn.line).toBe("M0,10L10,10");
  });
});
