/** Wire types for the prediction service. Field names mirror the JSON
 * contracts of GET /model and POST /predict exactly; the client never
 * renames or recomputes what the service sends. */

export interface LambdaTerm {
  term: number;
  name: string;
  constant: boolean;
  t: number[];
  mean: number[];
  lo: number[];
  hi: number[];
}

export interface ModelDoc {
  fingerprint: string;
  model: unknown;
  association_form: string;
  covariates: { longitudinal: string[]; survival: string[] };
  boundary: [number, number];
  n_draws: number;
  lambda: LambdaTerm[];
}

export interface HistoryPoint {
  time: number;
  value: number;
}

export interface PredictRequest {
  covariates: Record<string, number>;
  history: HistoryPoint[];
  t: number;
  dt_grid: number[];
}

export interface PiRow {
  dt: number;
  mean: number;
  lo: number;
  hi: number;
}

export interface PredictResponse {
  pi: PiRow[];
}
