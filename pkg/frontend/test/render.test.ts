import { readFileSync } from "node:fs";

import { describe, expect, it } from "vitest";

import {
  piTableRows,
  renderLambdaPanels,
  renderPiPanel,
  renderTrajectoryPanel,
} from "../src/render";
import type { ModelDoc, PiRow } from "../src/types";

const demo = JSON.parse(
  readFileSync(new URL("../fixtures/demo.json", import.meta.url), "utf8"),
) as {
  model: ModelDoc;
  model_constant: ModelDoc;
  predict: { request: { t: number }; response: { pi: PiRow[] } };
};

function meanYs(svg: string): number[] {
  const match = svg.match(/class="mean" points="([^"]+)"/);
  expect(match).not.toBeNull();
  return match![1]!.split(" ").map((p) => Number(p.split(",")[1]));
}

describe("lambda panels", () => {
  it("renders lambda panels for constant and time-varying models", () => {
    // recorded from a real constant-association fit: flat lines
    const constPanels = renderLambdaPanels(demo.model_constant);
    expect(constPanels).toHaveLength(2);
    for (const panel of constPanels) {
      expect(panel).toContain('data-constant="true"');
      const ys = meanYs(panel);
      expect(new Set(ys).size).toBe(1);
    }

    // recorded from a real value+slope fit: two curved panels
    const tvPanels = renderLambdaPanels(demo.model);
    expect(tvPanels).toHaveLength(2);
    expect(tvPanels[0]).toContain('data-name="alpha_value"');
    expect(tvPanels[1]).toContain('data-name="alpha_slope"');
    for (const panel of tvPanels) {
      expect(panel).toContain('data-constant="false"');
      expect(new Set(meanYs(panel)).size).toBeGreaterThan(1);
      expect(panel).toContain('class="band"');
    }
  });
});

describe("trajectory panel", () => {
  it("marks the last visit with a vertical dotted line", () => {
    const svg = renderTrajectoryPanel(
      [
        { time: 0.5, value: 3.4 },
        { time: 2.0, value: 3.1 },
      ],
      5.0,
    );
    expect(svg).toContain('class="last-visit" data-time="2"');
    expect(svg).toContain("stroke-dasharray");
    expect(svg.match(/class="visit"/g)).toHaveLength(2);
  });

  it("draws straight segments through the entered points only", () => {
    const svg = renderTrajectoryPanel(
      [
        { time: 0, value: 1 },
        { time: 1, value: 2 },
        { time: 2, value: 0 },
      ],
      2,
    );
    const match = svg.match(/class="history" points="([^"]+)"/);
    expect(match![1]!.split(" ")).toHaveLength(3);
  });
});

describe("pi panel", () => {
  it("plots the dt = 0 point at pi = 1", () => {
    const rows = demo.predict.response.pi;
    expect(rows[0]).toMatchObject({ dt: 0, mean: 1 });
    const svg = renderPiPanel(rows, demo.predict.request.t);
    expect(svg).toContain('data-dt="0" data-pi="1"');
    // pi = 1 sits on the top frame line (y = pad)
    const cy = svg.match(/data-dt="0" data-pi="1" cx="[^"]+" cy="([^"]+)"/)![1];
    expect(Number(cy)).toBe(36);
  });

  it("clamps drawing coordinates but not the reported numbers", () => {
    const rows: PiRow[] = [
      { dt: 0, mean: 1, lo: 1, hi: 1 },
      { dt: 1, mean: 1.2, lo: -0.1, hi: 1.3 },
    ];
    const svg = renderPiPanel(rows, 0);
    expect(svg).toContain('data-pi="1.2"'); // the number passes through
    const cy = svg.match(/data-dt="1" data-pi="1.2" cx="[^"]+" cy="([^"]+)"/)![1];
    expect(Number(cy)).toBe(36); // but it is drawn at the pi = 1 line
  });
});

describe("result table", () => {
  it("shows the service numbers verbatim", () => {
    const rows = demo.predict.response.pi;
    const table = piTableRows(rows);
    expect(table).toHaveLength(rows.length);
    rows.forEach((row, i) => {
      expect(table[i]).toStrictEqual([
        String(row.dt),
        String(row.mean),
        String(row.lo),
        String(row.hi),
      ]);
    });
  });
});
