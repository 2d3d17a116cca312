/** DOM wiring for the explorer page. All state lives in PatientSession, all
 * numbers come from service responses, and at most one prediction request is
 * in flight — a newer submission aborts the older one. */

import { ApiClient, ApiError, isAbortError } from "./api";
import { clampPi, PatientSession } from "./state";
import {
  piTableRows,
  renderLambdaPanels,
  renderPiPanel,
  renderTrajectoryPanel,
} from "./render";
import type { ModelDoc } from "./types";

// service origin: ?service=http://127.0.0.1:8000 when the page is served
// separately from `vcjm serve`; same-origin requests otherwise
const serviceBase =
  typeof location === "undefined"
    ? ""
    : new URLSearchParams(location.search).get("service") ?? "";
const api = new ApiClient(serviceBase.replace(/\/+$/, ""));
const session = new PatientSession();
let modelDoc: ModelDoc | null = null;
let inflight: AbortController | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`#${id} missing from page`);
  return node as T;
}

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = "block";
}

function clearError(): void {
  el<HTMLDivElement>("error-banner").style.display = "none";
}

function showValidation(message: string): void {
  el<HTMLSpanElement>("entry-validation").textContent = message;
}

function redrawPatient(): void {
  el<HTMLDivElement>("trajectory").innerHTML = renderTrajectoryPanel(
    session.measurements,
    session.t,
  );
  const rows = session.result?.pi ?? [];
  el<HTMLDivElement>("pi-curve").innerHTML = renderPiPanel(rows, session.t);
  const tbody = el<HTMLTableSectionElement>("pi-rows");
  tbody.innerHTML = "";
  for (const cells of piTableRows(rows)) {
    const tr = document.createElement("tr");
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    tbody.appendChild(tr);
  }
  el<HTMLSpanElement>("base-time").textContent = String(session.t);
}

function renderModel(doc: ModelDoc): void {
  const summary = el<HTMLDivElement>("model-summary");
  summary.textContent =
    `association: ${doc.association_form} · draws: ${doc.n_draws} · ` +
    `longitudinal covariates: ${doc.covariates.longitudinal.join(", ") || "none"} · ` +
    `survival covariates: ${doc.covariates.survival.join(", ") || "none"}`;
  el<HTMLDivElement>("lambda-panels").innerHTML =
    renderLambdaPanels(doc).join("");
  const covBox = el<HTMLDivElement>("covariate-inputs");
  covBox.innerHTML = "";
  const names = new Set([
    ...doc.covariates.longitudinal,
    ...doc.covariates.survival,
  ]);
  for (const name of names) {
    const label = document.createElement("label");
    label.textContent = `${name}: `;
    const input = document.createElement("input");
    input.type = "number";
    input.step = "any";
    input.value = "0";
    input.dataset.covariate = name;
    input.addEventListener("change", () => {
      const res = session.setCovariate(name, Number(input.value));
      if (!res.ok) showValidation(res.error);
    });
    label.appendChild(input);
    covBox.appendChild(label);
  }
}

async function loadModel(): Promise<void> {
  clearError();
  try {
    modelDoc = await api.getModel();
    renderModel(modelDoc);
  } catch (err) {
    showError(
      err instanceof ApiError
        ? `could not load model: ${err.message}`
        : "service unreachable — is `vcjm serve` running?",
    );
  }
}

function addMeasurementFromForm(): void {
  const time = Number(el<HTMLInputElement>("meas-time").value);
  const value = Number(el<HTMLInputElement>("meas-value").value);
  const res = session.addMeasurement(time, value);
  if (!res.ok) {
    showValidation(res.error);
    return; // rejected client-side: no request is sent
  }
  showValidation("");
  redrawPatient();
  void predictNow();
}

async function predictNow(): Promise<void> {
  const tRes = session.setBaseTime(
    Number(el<HTMLInputElement>("base-time-input").value || session.t),
  );
  if (!tRes.ok) {
    showValidation(tRes.error);
    return;
  }
  const gridText = el<HTMLInputElement>("dt-grid").value;
  if (gridText.trim()) {
    const grid = gridText.split(",").map((s) => Number(s.trim()));
    const gRes = session.setDtGrid(grid);
    if (!gRes.ok) {
      showValidation(gRes.error);
      return;
    }
  }
  if (inflight) inflight.abort();
  const controller = new AbortController();
  inflight = controller;
  clearError();
  try {
    const result = await api.predict(session.request(), controller.signal);
    if (!controller.signal.aborted) {
      session.setResult(result);
      redrawPatient();
    }
  } catch (err) {
    if (!isAbortError(err)) {
      showError(err instanceof ApiError ? err.message : String(err));
    }
  } finally {
    if (inflight === controller) inflight = null;
  }
}

function exportSession(): void {
  const blob = new Blob([session.export()], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "patient-session.json";
  a.click();
  URL.revokeObjectURL(a.href);
}

function importSession(file: File): void {
  void file.text().then((text) => {
    try {
      const imported = PatientSession.import(text);
      session.covariates = imported.covariates;
      session.measurements = imported.measurements;
      session.setBaseTime(imported.t);
      session.setDtGrid(imported.dtGrid);
      if (imported.result) session.setResult(imported.result);
      el<HTMLInputElement>("base-time-input").value = String(imported.t);
      el<HTMLInputElement>("dt-grid").value = imported.dtGrid.join(",");
      showValidation("");
      redrawPatient();
    } catch (err) {
      showError(String(err));
    }
  });
}

export function wirePage(): void {
  el<HTMLButtonElement>("add-measurement").addEventListener("click", (e) => {
    e.preventDefault();
    addMeasurementFromForm();
  });
  el<HTMLButtonElement>("predict-now").addEventListener("click", (e) => {
    e.preventDefault();
    void predictNow();
  });
  el<HTMLButtonElement>("retry-model").addEventListener("click", (e) => {
    e.preventDefault();
    void loadModel();
  });
  el<HTMLButtonElement>("export-session").addEventListener("click", (e) => {
    e.preventDefault();
    exportSession();
  });
  el<HTMLInputElement>("import-session").addEventListener("change", (e) => {
    const input = e.target as HTMLInputElement;
    if (input.files && input.files[0]) importSession(input.files[0]);
    input.value = "";
  });
  void loadModel();
  redrawPatient();
}

// clampPi is re-exported so the page can sanity-guard any ad-hoc display
export { clampPi };

if (typeof document !== "undefined" && document.getElementById("explorer-root")) {
  wirePage();
}
