/** Patient session state. Invariants enforced here, before any request is
 * sent: measurement times strictly increase in entry order, the base time t
 * never sits before the last measurement, and displayed probabilities are
 * clamped to [0, 1]. */

import type { HistoryPoint, PredictRequest, PredictResponse } from "./types";

export type Outcome = { ok: true } | { ok: false; error: string };

export interface SessionDoc {
  covariates: Record<string, number>;
  measurements: HistoryPoint[];
  t: number;
  dt_grid: number[];
  result: PredictResponse | null;
}

export class PatientSession {
  covariates: Record<string, number> = {};
  measurements: HistoryPoint[] = [];
  private baseTime = 0;
  dtGrid: number[] = [0, 0.5, 1, 1.5, 2];
  result: PredictResponse | null = null;

  get t(): number {
    return this.baseTime;
  }

  lastMeasurementTime(): number | null {
    const m = this.measurements[this.measurements.length - 1];
    return m === undefined ? null : m.time;
  }

  setCovariate(name: string, value: number): Outcome {
    if (!Number.isFinite(value)) {
      return { ok: false, error: `covariate ${name} must be a finite number` };
    }
    this.covariates[name] = value;
    return { ok: true };
  }

  /** Append a visit. Rejects non-increasing times client-side; nothing is
   * mutated and no request may be sent on rejection. */
  addMeasurement(time: number, value: number): Outcome {
    if (!Number.isFinite(time) || !Number.isFinite(value)) {
      return { ok: false, error: "time and value must be finite numbers" };
    }
    const last = this.lastMeasurementTime();
    if (last !== null && time <= last) {
      return {
        ok: false,
        error: `measurement time ${time} is not after the previous time ${last}`,
      };
    }
    this.measurements.push({ time, value });
    if (time > this.baseTime) this.baseTime = time;
    return { ok: true };
  }

  /** Move the prediction base time; it may never precede the last visit. */
  setBaseTime(t: number): Outcome {
    if (!Number.isFinite(t)) {
      return { ok: false, error: "t must be a finite number" };
    }
    const last = this.lastMeasurementTime();
    if (last !== null && t < last) {
      return {
        ok: false,
        error: `t=${t} is before the last measurement at ${last}`,
      };
    }
    this.baseTime = t;
    return { ok: true };
  }

  setDtGrid(grid: number[]): Outcome {
    if (grid.some((v) => !Number.isFinite(v) || v < 0)) {
      return { ok: false, error: "dt horizons must be finite and nonnegative" };
    }
    this.dtGrid = [...grid];
    return { ok: true };
  }

  setResult(result: PredictResponse): void {
    this.result = result;
  }

  /** The /predict body for the current state, field for field. */
  request(): PredictRequest {
    return {
      covariates: { ...this.covariates },
      history: this.measurements.map((m) => ({ ...m })),
      t: this.baseTime,
      dt_grid: [...this.dtGrid],
    };
  }

  /** Lossless JSON export; import rebuilds through the invariant checks. */
  export(): string {
    const doc: SessionDoc = {
      covariates: { ...this.covariates },
      measurements: this.measurements.map((m) => ({ ...m })),
      t: this.baseTime,
      dt_grid: [...this.dtGrid],
      result: this.result,
    };
    return JSON.stringify(doc, null, 1);
  }

  static import(json: string): PatientSession {
    let doc: SessionDoc;
    try {
      doc = JSON.parse(json) as SessionDoc;
    } catch {
      throw new Error("session import: not valid JSON");
    }
    if (typeof doc !== "object" || doc === null || !Array.isArray(doc.measurements)) {
      throw new Error("session import: missing measurement list");
    }
    const session = new PatientSession();
    for (const [name, value] of Object.entries(doc.covariates ?? {})) {
      const res = session.setCovariate(name, value);
      if (!res.ok) throw new Error(`session import: ${res.error}`);
    }
    for (const m of doc.measurements) {
      const res = session.addMeasurement(m.time, m.value);
      if (!res.ok) throw new Error(`session import: ${res.error}`);
    }
    if (doc.dt_grid !== undefined) {
      const res = session.setDtGrid(doc.dt_grid);
      if (!res.ok) throw new Error(`session import: ${res.error}`);
    }
    if (doc.t !== undefined) {
      const res = session.setBaseTime(doc.t);
      if (!res.ok) throw new Error(`session import: ${res.error}`);
    }
    if (doc.result !== null && doc.result !== undefined) {
      session.setResult(doc.result);
    }
    return session;
  }
}

/** Display clamp: the UI never shows a probability outside [0, 1]. */
export function clampPi(value: number): number {
  return Math.min(1, Math.max(0, value));
}
