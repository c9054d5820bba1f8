/** DOM wiring: factor pickers, edit controls, session timeline, compare grid. */

import { ApiClient, ApiError, Factors, Instruction, Metrics, Vocab } from "./api.js";
import { compareGrid } from "./compare.js";
import { drawZoomedPng } from "./canvas.js";
import { applyEdit, EditSession, SessionStep } from "./session.js";

const CFG_GRID = [1, 2, 4, 6];

interface AppState {
  api: ApiClient;
  vocab: Vocab | null;
  sessions: EditSession[];
  active: number; // index into sessions
  busy: boolean;
}

export function metricsBadge(metrics: Metrics | null): string {
  if (!metrics) return "source";
  const pct = (x: number) => x.toFixed(2);
  const ok = metrics.edit_success ? "✓" : "✗";
  return `dir ${pct(metrics.dir)} · sim ${pct(metrics.sim)} · ${ok}`;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function banner(root: HTMLElement, message: string): void {
  const box = root.querySelector(".banner") as HTMLElement;
  box.textContent = message;
  box.style.display = message ? "block" : "none";
}

function select(options: readonly string[], id: string): HTMLSelectElement {
  const sel = el("select");
  sel.id = id;
  for (const opt of options) {
    const o = el("option", undefined, opt);
    o.value = opt;
    sel.appendChild(o);
  }
  return sel;
}

function slider(id: string, min: number, max: number, step: number, value: number): HTMLInputElement {
  const input = el("input");
  input.type = "range";
  input.id = id;
  input.min = String(min);
  input.max = String(max);
  input.step = String(step);
  input.value = String(value);
  return input;
}

function readFactors(root: HTMLElement): Factors {
  const get = (f: string) => (root.querySelector(`#pick-${f}`) as HTMLSelectElement).value;
  return {
    shape: get("shape"),
    fg_color: get("fg_color"),
    bg_color: get("bg_color"),
    position: get("position"),
    size: get("size"),
  };
}

function readInstruction(root: HTMLElement): Instruction {
  return {
    field: (root.querySelector("#edit-field") as HTMLSelectElement).value,
    value: (root.querySelector("#edit-value") as HTMLSelectElement).value,
  };
}

function readNumber(root: HTMLElement, id: string): number {
  return Number((root.querySelector(`#${id}`) as HTMLInputElement).value);
}

async function renderTimeline(root: HTMLElement, state: AppState): Promise<void> {
  const timeline = root.querySelector(".timeline") as HTMLElement;
  timeline.replaceChildren();
  const session = state.sessions[state.active];
  for (let i = 0; i < session.steps.length; i++) {
    const step = session.steps[i];
    const cell = el("div", "step");
    const canvas = el("canvas");
    cell.appendChild(canvas);
    const label = step.instruction
      ? `${i}: set ${step.instruction.field} ${step.instruction.value}`
      : `${i}: source`;
    cell.appendChild(el("div", "step-label", label));
    cell.appendChild(el("div", "step-metrics", metricsBadge(step.metrics)));
    const branch = el("button", "branch", "branch here");
    branch.addEventListener("click", () => {
      state.sessions.push(session.branchFrom(i));
      state.active = state.sessions.length - 1;
      void renderAll(root, state);
    });
    cell.appendChild(branch);
    timeline.appendChild(cell);
    await drawZoomedPng(canvas, step.image, 8);
  }
}

function renderSessionTabs(root: HTMLElement, state: AppState): void {
  const tabs = root.querySelector(".sessions") as HTMLElement;
  tabs.replaceChildren();
  state.sessions.forEach((s, i) => {
    const tab = el("button", i === state.active ? "tab active" : "tab",
      `session ${s.id} (${s.steps.length})`);
    tab.addEventListener("click", () => {
      state.active = i;
      void renderAll(root, state);
    });
    tabs.appendChild(tab);
  });
}

async function renderCompare(root: HTMLElement, state: AppState): Promise<void> {
  const grid = root.querySelector(".compare-grid") as HTMLElement;
  grid.replaceChildren();
  const session = state.sessions[state.active];
  const instruction = readInstruction(root);
  const seed = readNumber(root, "seed");
  const cells = await compareGrid(state.api, session.lastImage, instruction, CFG_GRID, seed,
    readNumber(root, "cfg-img"));
  for (const cell of cells) {
    const box = el("div", "cell");
    box.appendChild(el("div", "cell-cfg", `cfg ${cell.cfgText}`));
    if (cell.ok && cell.image) {
      const canvas = el("canvas");
      box.appendChild(canvas);
      box.appendChild(el("div", "cell-metrics", metricsBadge(cell.metrics ?? null)));
      const adopt = el("button", "adopt", "use this");
      adopt.addEventListener("click", () => {
        state.sessions[state.active] = session.append({
          image: cell.image!,
          instruction,
          cfgText: cell.cfgText,
          cfgImg: readNumber(root, "cfg-img"),
          seed,
          metrics: cell.metrics ?? null,
        });
        void renderAll(root, state);
      });
      box.appendChild(adopt);
      grid.appendChild(box);
      await drawZoomedPng(canvas, cell.image, 6);
    } else {
      box.appendChild(el("div", "cell-error", cell.error ?? "failed"));
      grid.appendChild(box);
    }
  }
}

async function renderAll(root: HTMLElement, state: AppState): Promise<void> {
  renderSessionTabs(root, state);
  if (state.sessions.length) {
    await renderTimeline(root, state);
  }
}

export async function mountApp(root: HTMLElement, api: ApiClient): Promise<AppState> {
  const state: AppState = { api, vocab: null, sessions: [], active: 0, busy: false };

  root.innerHTML = `
    <div class="banner" style="display:none"></div>
    <section class="generate-panel"><h2>generate</h2><div class="pickers"></div>
      <button id="btn-generate">generate</button></section>
    <section class="edit-panel"><h2>edit</h2><div class="edit-controls"></div>
      <button id="btn-edit">apply edit</button>
      <button id="btn-compare">compare CFGs</button></section>
    <div class="sessions"></div>
    <div class="timeline"></div>
    <div class="compare-grid"></div>
  `;

  try {
    state.vocab = await api.vocab();
  } catch (err) {
    banner(root, `service unreachable: ${err instanceof Error ? err.message : err}`);
    return state;
  }

  const pickers = root.querySelector(".pickers") as HTMLElement;
  for (const [field, values] of Object.entries(state.vocab.fields)) {
    const label = el("label", undefined, field);
    const sel = select(values, `pick-${field}`);
    label.appendChild(sel);
    pickers.appendChild(label);
  }
  const seedLabel = el("label", undefined, "seed");
  const seedInput = el("input");
  seedInput.type = "number";
  seedInput.id = "seed";
  seedInput.value = "7";
  seedLabel.appendChild(seedInput);
  pickers.appendChild(seedLabel);

  const controls = root.querySelector(".edit-controls") as HTMLElement;
  const fieldSel = select(Object.keys(state.vocab.fields), "edit-field");
  const valueSel = select(state.vocab.fields[Object.keys(state.vocab.fields)[0]], "edit-value");
  fieldSel.addEventListener("change", () => {
    const values = state.vocab!.fields[fieldSel.value];
    valueSel.replaceChildren();
    for (const v of values) {
      const o = el("option", undefined, v);
      o.value = v;
      valueSel.appendChild(o);
    }
  });
  const fLabel = el("label", undefined, "field");
  fLabel.appendChild(fieldSel);
  const vLabel = el("label", undefined, "value");
  vLabel.appendChild(valueSel);
  const ctLabel = el("label", undefined, "text CFG");
  ctLabel.appendChild(slider("cfg-text", 1, 7.5, 0.5, 3));
  const ciLabel = el("label", undefined, "image CFG");
  ciLabel.appendChild(slider("cfg-img", 0.5, 3, 0.25, 1));
  controls.append(fLabel, vLabel, ctLabel, ciLabel);

  (root.querySelector("#btn-generate") as HTMLButtonElement).addEventListener("click", async () => {
    banner(root, "");
    try {
      const res = await api.generate({
        factors: readFactors(root),
        seed: readNumber(root, "seed"),
        cfg_text: readNumber(root, "cfg-text"),
      });
      const source: SessionStep = {
        image: res.image, instruction: null,
        cfgText: readNumber(root, "cfg-text"), cfgImg: 1, seed: readNumber(root, "seed"),
        metrics: null,
      };
      state.sessions.push(EditSession.start(source));
      state.active = state.sessions.length - 1;
      await renderAll(root, state);
    } catch (err) {
      banner(root, err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
    }
  });

  (root.querySelector("#btn-edit") as HTMLButtonElement).addEventListener("click", async () => {
    if (!state.sessions.length || state.busy) return;
    state.busy = true;
    banner(root, "");
    try {
      state.sessions[state.active] = await applyEdit(
        state.sessions[state.active], api, readInstruction(root), {
          seed: readNumber(root, "seed"),
          cfgText: readNumber(root, "cfg-text"),
          cfgImg: readNumber(root, "cfg-img"),
        });
      await renderAll(root, state);
    } catch (err) {
      banner(root, err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
    } finally {
      state.busy = false;
    }
  });

  (root.querySelector("#btn-compare") as HTMLButtonElement).addEventListener("click", async () => {
    if (!state.sessions.length) return;
    await renderCompare(root, state);
  });

  return state;
}
