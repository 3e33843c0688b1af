/** Browser entry point: one base-URL setting, then mount the sketchpad. */

import { SketchpadApp } from "./app.js";
import { ServiceClient } from "./client.js";
import { mountSketchpad } from "./dom.js";

declare global {
  interface Window {
    SKETCHPAD_BASE_URL?: string;
  }
}

const baseUrl = window.SKETCHPAD_BASE_URL ?? "http://127.0.0.1:8008";
const root = document.getElementById("app");
if (root === null) throw new Error("missing #app element");

const client = new ServiceClient({ baseUrl });
const app = new SketchpadApp(client);
mountSketchpad(root, app, client);

client.health().then(
  (h) => console.log(`service ok: ${h.gallerySize} gallery items, ${h.checkpoint}`),
  (e) => console.warn(`service not reachable at ${baseUrl}: ${e}`),
);
