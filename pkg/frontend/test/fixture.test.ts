/** Recorded-fixture round trip: entering the bundled demo history must
 * reproduce the bundled demo response byte for byte. The mock service serves
 * the recorded JSON, and the equivalence of that recording with `vcjm
 * predict` output is asserted on the Python side of the acceptance gate. */

import { readFileSync } from "node:fs";

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import type { FetchLike } from "../src/api";
import { piTableRows } from "../src/render";
import { PatientSession } from "../src/state";
import type { PredictRequest, PredictResponse } from "../src/types";

const raw = readFileSync(new URL("../fixtures/demo.json", import.meta.url), "utf8");
const demo = JSON.parse(raw) as {
  predict: { request: PredictRequest; response: PredictResponse };
};

describe("bundled demo patient", () => {
  it("builds the recorded request from scratch through the session", () => {
    const session = new PatientSession();
    const req = demo.predict.request;
    for (const [name, value] of Object.entries(req.covariates)) {
      expect(session.setCovariate(name, value).ok).toBe(true);
    }
    for (const point of req.history) {
      expect(session.addMeasurement(point.time, point.value).ok).toBe(true);
    }
    expect(session.setBaseTime(req.t).ok).toBe(true);
    expect(session.setDtGrid(req.dt_grid).ok).toBe(true);
    // identical wire body ⇒ the service's request-keyed seed matches, so the
    // live service would answer with exactly the recorded response
    expect(JSON.stringify(session.request())).toBe(JSON.stringify(req));
  });

  it("reproduces the recorded response byte for byte", async () => {
    const served = JSON.stringify(demo.predict.response);
    const fetchFn: FetchLike = async (input) => {
      expect(input).toBe("/predict");
      return new Response(served, {
        status: 200,
        headers: { "Content-Type": "application/json" },
      });
    };
    const res = await new ApiClient("", fetchFn).predict(demo.predict.request);
    expect(JSON.stringify(res)).toBe(served);

    // and the displayed cells are those bytes' numbers, unrounded
    const table = piTableRows(res.pi);
    demo.predict.response.pi.forEach((row, i) => {
      expect(table[i]).toStrictEqual([
        String(row.dt),
        String(row.mean),
        String(row.lo),
        String(row.hi),
      ]);
    });
  });
});
