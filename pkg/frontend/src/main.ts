/** Entry point: wire the controller to the page and the keyboard.
 * The API base defaults to the page origin and can be overridden with
 * ?api=http://host:port for a separately served backend. */

import { ApiClient } from "./api.js";
import { AnnotationController } from "./controller.js";

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return param ?? window.location.origin;
}

function boot(): void {
  const batchContainer = document.getElementById("batch");
  const progressContainer = document.getElementById("progress");
  if (batchContainer === null || progressContainer === null) {
    throw new Error("missing #batch or #progress container");
  }
  const controller = new AnnotationController(new ApiClient(apiBase()), {
    batchContainer,
    progressContainer,
    pollMs: 1000,
  });
  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement) return;
    controller.handleKey(event.key);
  });
  controller.start();
}

document.addEventListener("DOMContentLoaded", boot);
