/**
 * Bootstrap: read the service endpoint from ?api=... (default same origin),
 * load the vocabulary, and mount the console.
 */

import { ApiClient } from "./api.js";
import { AnnotationQueue } from "./queue.js";
import { ConsoleApp } from "./ui.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const endpoint = params.get("api") ?? window.location.origin;
  const api = new ApiClient(endpoint);
  const vocab = await api.vocab();
  const queue = new AnnotationQueue(api, vocab);
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app mount point");
  }
  root.tabIndex = 0; // make the mount focusable for the keyboard flow
  const app = new ConsoleApp(root, queue, vocab);
  app.start();
  await app.refresh();
  root.focus();
}

void boot();
