/** Editor application: paint labels/instances, pick styles, synthesize. */

import { ApiClient, ServiceMeta } from "./api.js";
import { EditorDocument, StyleChoice } from "./document.js";
import { CLASS_COLORS, drawDocument } from "./render.js";

const DEBOUNCE_MS = 500;
const SCALE = 3;

type BrushMode = "class" | "instance" | "erase";

interface AppState {
  doc: EditorDocument;
  meta: ServiceMeta;
  client: ApiClient;
  mode: BrushMode;
  activeClass: number;
  activeInstance: number;
  brushRadius: number;
  seed: number;
  autoRefresh: boolean;
  debounceTimer: number | null;
  lastRequestJson: string | null;
}

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function setStatus(text: string, isError = false) {
  const status = el<HTMLDivElement>("status");
  status.textContent = text;
  status.className = isError ? "status error" : "status";
}

async function boot() {
  const client = new ApiClient("");
  let meta: ServiceMeta;
  try {
    meta = await client.meta();
  } catch (err: any) {
    setStatus(`service not ready: ${err.message ?? err}`, true);
    setTimeout(boot, 1500);
    return;
  }
  const [h, w] = meta.full_resolution;
  const state: AppState = {
    doc: new EditorDocument(h, w, 0),
    meta,
    client,
    mode: "instance",
    activeClass: Math.min(2, meta.num_classes - 1),
    activeInstance: 0,
    brushRadius: 6,
    seed: 0,
    autoRefresh: true,
    debounceTimer: null,
    lastRequestJson: null,
  };
  // start from a plausible scene: ground on the lower half
  state.doc.labels.fill(1, Math.floor((h / 2) * w));
  state.doc.styles.clear();
  state.activeInstance = state.doc.allocateInstanceId();

  buildClassButtons(state);
  wireControls(state);
  wireCanvas(state);
  redraw(state);
  setStatus(`connected: ${meta.num_classes} classes, `
    + `${meta.generator_mode} generator, styles ${meta.uses_styles ? "on" : "off"}`);
}

function buildClassButtons(state: AppState) {
  const bar = el<HTMLDivElement>("classes");
  bar.innerHTML = "";
  state.meta.class_names.forEach((name, classId) => {
    const button = document.createElement("button");
    button.textContent = `${classId}: ${name}`;
    const [r, g, b] = CLASS_COLORS[classId % CLASS_COLORS.length];
    button.style.borderColor = `rgb(${r},${g},${b})`;
    button.onclick = () => {
      state.activeClass = classId;
      setStatus(`class brush: ${name}`);
      highlightClass(state);
    };
    button.dataset.classId = String(classId);
    bar.appendChild(button);
  });
  highlightClass(state);
}

function highlightClass(state: AppState) {
  document.querySelectorAll<HTMLButtonElement>("#classes button").forEach((b) => {
    b.classList.toggle("active", Number(b.dataset.classId) === state.activeClass);
  });
}

function wireControls(state: AppState) {
  const modeSelect = el<HTMLSelectElement>("mode");
  modeSelect.onchange = () => {
    state.mode = modeSelect.value as BrushMode;
    if (state.mode === "instance") {
      state.activeInstance = state.doc.allocateInstanceId();
      setStatus(`instance brush: new object #${state.activeInstance}`);
    }
  };
  el<HTMLInputElement>("brush").oninput = (e) => {
    state.brushRadius = Number((e.target as HTMLInputElement).value);
  };
  el<HTMLInputElement>("seed").onchange = (e) => {
    state.seed = Number((e.target as HTMLInputElement).value) || 0;
    scheduleSynthesis(state);
  };
  el<HTMLInputElement>("auto").onchange = (e) => {
    state.autoRefresh = (e.target as HTMLInputElement).checked;
  };
  el<HTMLButtonElement>("new-instance").onclick = () => {
    state.mode = "instance";
    modeSelect.value = "instance";
    state.activeInstance = state.doc.allocateInstanceId();
    setStatus(`instance brush: new object #${state.activeInstance}`);
  };
  el<HTMLButtonElement>("undo").onclick = () => {
    if (state.doc.undo()) {
      redraw(state);
      refreshInstancePanel(state);
      scheduleSynthesis(state);
    }
  };
  el<HTMLButtonElement>("redo").onclick = () => {
    if (state.doc.redo()) {
      redraw(state);
      refreshInstancePanel(state);
      scheduleSynthesis(state);
    }
  };
  el<HTMLButtonElement>("synthesize").onclick = () => void synthesize(state);
  state.doc.onInstanceReassigned = (ids, classId) => {
    setStatus(`warning: instance(s) ${ids.join(", ")} reassigned to class `
      + `${state.meta.class_names[classId]}`);
  };
}

function wireCanvas(state: AppState) {
  const canvas = el<HTMLCanvasElement>("board");
  canvas.width = state.doc.width * SCALE;
  canvas.height = state.doc.height * SCALE;
  let painting = false;

  const paintAt = (event: MouseEvent) => {
    const rect = canvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * state.doc.width;
    const y = ((event.clientY - rect.top) / rect.height) * state.doc.height;
    if (state.mode === "class") {
      state.doc.paintClass(x, y, state.brushRadius, state.activeClass);
    } else if (state.mode === "instance") {
      state.doc.paintInstance(x, y, state.brushRadius, state.activeInstance, state.activeClass);
    } else {
      state.doc.eraseInstance(x, y, state.brushRadius);
    }
    redraw(state);
  };

  canvas.onmousedown = (e) => {
    painting = true;
    state.doc.beginStroke();
    paintAt(e);
  };
  canvas.onmousemove = (e) => {
    if (painting) {
      paintAt(e);
    }
  };
  const finish = () => {
    if (painting) {
      painting = false;
      state.doc.endStroke();
      refreshInstancePanel(state);
      scheduleSynthesis(state);
    }
  };
  canvas.onmouseup = finish;
  canvas.onmouseleave = finish;
}

function redraw(state: AppState) {
  const canvas = el<HTMLCanvasElement>("board");
  drawDocument(state.doc, canvas.getContext("2d")!, SCALE);
}

function refreshInstancePanel(state: AppState) {
  const panel = el<HTMLDivElement>("instances");
  panel.innerHTML = "";
  for (const id of state.doc.instancesPresent()) {
    const classId = state.doc.classOfInstance(id)!;
    const row = document.createElement("div");
    row.className = "instance-row";
    const label = document.createElement("span");
    label.textContent = `#${id} (${state.meta.class_names[classId] ?? classId})`;
    row.appendChild(label);

    const picker = document.createElement("select");
    picker.add(new Option("random style", "random"));
    picker.onfocus = () => void populateStyleOptions(state, picker, classId, id);
    picker.onchange = () => {
      const value = picker.value;
      if (value === "random") {
        state.doc.setStyle(id, "random");
      } else if (value === "randomize") {
        void randomizeStyle(state, id, classId);
        return;
      } else {
        state.doc.setStyle(id, { cluster: Number(value) });
      }
      scheduleSynthesis(state);
    };
    row.appendChild(picker);

    const randomize = document.createElement("button");
    randomize.textContent = "randomize";
    randomize.onclick = () => void randomizeStyle(state, id, classId);
    row.appendChild(randomize);
    panel.appendChild(row);
  }
}

async function populateStyleOptions(
  state: AppState, picker: HTMLSelectElement, classId: number, instanceId: number,
) {
  if (picker.dataset.loaded === "1" || !state.meta.uses_styles) {
    return;
  }
  try {
    const styles = await state.client.styles(classId);
    styles.centers.forEach((_, i) => {
      picker.add(new Option(`style ${i} (${styles.counts[i] ?? "?"} samples)`, String(i)));
    });
    picker.add(new Option("randomize now", "randomize"));
    picker.dataset.loaded = "1";
  } catch (err: any) {
    setStatus(`styles for class ${classId}: ${err.message ?? err}`, true);
  }
}

/** Pick a random catalog center client-side; the server echoes it back. */
async function randomizeStyle(state: AppState, instanceId: number, classId: number) {
  try {
    const styles = await state.client.styles(classId);
    const idx = Math.floor(Math.random() * styles.centers.length);
    const vec = styles.centers[idx] as [number, number, number];
    state.doc.setStyle(instanceId, { vector: vec });
    setStatus(`instance #${instanceId}: randomized to style ${idx}`);
    scheduleSynthesis(state);
  } catch (err: any) {
    setStatus(`randomize failed: ${err.message ?? err}`, true);
  }
}

function scheduleSynthesis(state: AppState) {
  if (!state.autoRefresh) {
    return;
  }
  if (state.debounceTimer !== null) {
    clearTimeout(state.debounceTimer);
  }
  state.debounceTimer = setTimeout(() => void synthesize(state), DEBOUNCE_MS) as unknown as number;
}

async function synthesize(state: AppState) {
  const body = state.doc.toRequestBody(state.seed);
  const json = JSON.stringify(body);
  if (json === state.lastRequestJson) {
    return; // unchanged document + seed: keep the cached preview
  }
  setStatus("synthesizing...");
  const t0 = performance.now();
  try {
    const result = await state.client.synthesize(body);
    state.lastRequestJson = json;
    el<HTMLImageElement>("preview").src = `data:image/png;base64,${result.imagePngB64}`;
    const total = performance.now() - t0;
    setStatus(`synthesized in ${result.timingMs.toFixed(0)} ms `
      + `(round trip ${total.toFixed(0)} ms)`);
  } catch (err: any) {
    if (err?.name === "AbortError") {
      return;
    }
    const field = err?.field ? ` [${err.field}]` : "";
    setStatus(`error ${err?.code ?? ""}${field}: ${err?.message ?? err}`, true);
  }
}

boot();
