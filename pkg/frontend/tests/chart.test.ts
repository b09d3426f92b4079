import { describe, expect, it } from "vitest";

import { buildSegments, segmentColor } from "../src/chart.js";

const row = (query_index: number, epoch: number, acc: number) => ({
  query_index,
  epoch,
  train_accuracy: acc,
  train_loss: 1 - acc,
  test_accuracy: acc,
  test_loss: 1 - acc,
});

describe("buildSegments", () => {
  it("makes one segment per query with a shared epoch axis", () => {
    const rows = [row(0, 0, 0.5), row(0, 1, 0.6), row(1, 0, 0.7), row(1, 1, 0.8)];
    const segments = buildSegments(rows, "test_accuracy");
    expect(segments.map((s) => s.queryIndex)).toEqual([0, 1]);
    expect(segments[0].points).toEqual([
      { x: 0, y: 0.5 },
      { x: 1, y: 0.6 },
    ]);
    expect(segments[1].points.map((p) => p.x)).toEqual([2, 3]);
  });

  it("two completed queries plus baseline give three segments", () => {
    const rows = [row(0, 0, 0.5), row(1, 0, 0.6), row(2, 0, 0.7)];
    expect(buildSegments(rows, "test_accuracy")).toHaveLength(3);
  });

  it("loss metric picks the loss column", () => {
    const segments = buildSegments([row(0, 0, 0.75)], "test_loss");
    expect(segments[0].points[0].y).toBeCloseTo(0.25);
  });

  it("empty input yields no segments", () => {
    expect(buildSegments([], "test_accuracy")).toEqual([]);
  });
});

describe("segmentColor", () => {
  it("is stable and distinguishes the baseline", () => {
    expect(segmentColor(0)).toBe(segmentColor(0));
    expect(segmentColor(0)).not.toBe(segmentColor(1));
  });
});
