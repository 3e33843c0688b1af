/**
 * DOM wiring for the sketchpad: a drawing canvas, submit controls, an inline
 * error banner, the current result cards, and the refinement history panel.
 *
 * Rendering is a pure function of the view-model, re-run on every change.
 * Painting the on-screen preview needs a 2D context; everything else is
 * plain elements, so the layer also works where no context exists.
 */

import { SketchpadApp } from "./app.js";
import { ServiceClient } from "./client.js";
import { toBase64 } from "./raster.js";
import { RetrievalView } from "./types.js";

export interface Mounted {
  canvas: HTMLCanvasElement;
  render: () => void;
  dispose: () => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className !== undefined) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pngDataUrl(bytes: Uint8Array): string {
  return `data:image/png;base64,${toBase64(bytes)}`;
}

export function mountSketchpad(
  root: HTMLElement, app: SketchpadApp, client: ServiceClient,
): Mounted {
  const doc = root.ownerDocument;
  root.textContent = "";

  const canvas = el(doc, "canvas", "pad");
  canvas.width = app.canvasSize.width;
  canvas.height = app.canvasSize.height;

  const kInput = el(doc, "input", "k-input") as HTMLInputElement;
  kInput.type = "number";
  kInput.min = "1";
  kInput.value = String(app.defaultK);

  const submitButton = el(doc, "button", "submit", "Retrieve");
  const undoButton = el(doc, "button", "undo", "Undo");
  const clearButton = el(doc, "button", "clear", "Clear");
  const banner = el(doc, "div", "banner");
  banner.hidden = true;
  const results = el(doc, "div", "results");
  const historyPanel = el(doc, "div", "history");

  const controls = el(doc, "div", "controls");
  controls.append(kInput, submitButton, undoButton, clearButton);
  root.append(canvas, controls, banner, results, historyPanel);

  // -- drawing input ----------------------------------------------------------

  let drawing = false;

  function canvasPoint(ev: MouseEvent): { x: number; y: number } {
    const rect = canvas.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  }

  const onDown = (ev: MouseEvent) => {
    drawing = true;
    const p = canvasPoint(ev);
    app.beginStroke(p.x, p.y);
  };
  const onMove = (ev: MouseEvent) => {
    if (!drawing) return;
    const p = canvasPoint(ev);
    app.extendStroke(p.x, p.y);
  };
  const onUp = () => {
    if (!drawing) return;
    drawing = false;
    app.endStroke();
  };

  canvas.addEventListener("mousedown", onDown);
  canvas.addEventListener("mousemove", onMove);
  canvas.addEventListener("mouseup", onUp);
  canvas.addEventListener("mouseleave", onUp);

  const onSubmit = () => {
    const k = Number(kInput.value);
    void app.submit(Number.isInteger(k) && k >= 1 ? k : app.defaultK);
  };
  submitButton.addEventListener("click", onSubmit);
  undoButton.addEventListener("click", () => app.undo());
  clearButton.addEventListener("click", () => app.clearCanvas());

  // -- rendering ---------------------------------------------------------------

  let ctx2d: CanvasRenderingContext2D | null | undefined;

  function paintCanvas(): void {
    if (ctx2d === undefined) {
      try {
        ctx2d = canvas.getContext("2d");
      } catch {
        ctx2d = null;
      }
    }
    const ctx = ctx2d;
    if (ctx === null) return; // headless test DOM: state still drives exports
    ctx.fillStyle = "#ffffff";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#000000";
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    const strokes = app.pending === null ? app.strokes : [...app.strokes, app.pending];
    for (const stroke of strokes) {
      ctx.lineWidth = stroke.width;
      ctx.beginPath();
      stroke.points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
      ctx.stroke();
    }
  }

  function resultCards(view: RetrievalView): HTMLElement[] {
    return view.results.map((r, i) => {
      const card = el(doc, "div", "result-card");
      card.dataset.id = r.id;
      card.dataset.rank = String(i + 1);
      const img = el(doc, "img", "thumb") as HTMLImageElement;
      img.src = client.thumbnailUrl(r.thumbnailUrl);
      img.alt = r.className;
      card.append(
        img,
        el(doc, "span", "class", r.className),
        el(doc, "span", "score", r.score.toFixed(4)),
      );
      return card;
    });
  }

  function render(): void {
    submitButton.disabled = app.busy;
    banner.hidden = app.banner === null;
    banner.textContent = app.banner ?? "";

    results.textContent = "";
    if (app.current !== null) {
      results.append(...resultCards(app.current));
    }

    historyPanel.textContent = "";
    for (const view of [...app.history].reverse()) {
      const entry = el(doc, "div", "history-entry");
      const snap = el(doc, "img", "query-snapshot") as HTMLImageElement;
      snap.src = pngDataUrl(view.query);
      snap.alt = "query sketch";
      entry.append(
        snap,
        el(doc, "span", "meta", `k=${view.k}, ${view.results.length} results`),
      );
      historyPanel.append(entry);
    }
    paintCanvas();
  }

  const unsubscribe = app.onChange(render);
  render();

  return {
    canvas,
    render,
    dispose: () => {
      unsubscribe();
      canvas.removeEventListener("mousedown", onDown);
      canvas.removeEventListener("mousemove", onMove);
      canvas.removeEventListener("mouseup", onUp);
      canvas.removeEventListener("mouseleave", onUp);
    },
  };
}
