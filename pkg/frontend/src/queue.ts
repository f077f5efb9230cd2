/**
 * Annotation queue: fetches leased tasks in served order, submits labels
 * with optimistic advancement, and keeps all durable state server-side.
 *
 * Client errors (4xx) restore the rejected card with the server's field
 * diagnostics; server/network errors queue the submission for retry without
 * losing the annotator's edits.
 */

import { ApiClient, ApiError } from "./api.js";
import type { VocabPayload } from "./api.js";
import { TaskEditor } from "./task-editor.js";

export type QueueState =
  | "idle"
  | "annotating"
  | "round-complete"
  | "network-retry";

export interface SubmitOutcome {
  accepted: boolean;
  queuedForRetry: boolean;
  error?: string;
}

interface PendingRetry {
  taskId: number;
  payload: ReturnType<TaskEditor["buildPayload"]>;
}

export class AnnotationQueue {
  state: QueueState = "idle";
  lastError: string | null = null;

  private editors: TaskEditor[] = [];
  private cursor = 0;
  private submitted = 0;
  private retries: PendingRetry[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly vocab: VocabPayload,
  ) {}

  /** Lease up to n tasks; server order (ascending confidence) is kept. */
  async fetchQueue(n: number): Promise<TaskEditor[]> {
    try {
      const tasks = await this.api.fetchTasks(n);
      const fresh = tasks.map((t) => new TaskEditor(t, this.vocab));
      this.editors.push(...fresh);
      this.lastError = null;
      this.state = this.current() ? "annotating" : "round-complete";
      return fresh;
    } catch (err) {
      // leave existing editors untouched: a failed fetch loses nothing
      this.lastError = err instanceof Error ? err.message : String(err);
      this.state = "network-retry";
      return [];
    }
  }

  current(): TaskEditor | null {
    return this.editors[this.cursor] ?? null;
  }

  progress(): { done: number; total: number } {
    return { done: this.submitted, total: this.editors.length };
  }

  /** Accept-suggestions-and-submit, the one-keystroke path. */
  async acceptAndSubmit(): Promise<SubmitOutcome> {
    const editor = this.current();
    if (!editor) {
      return { accepted: false, queuedForRetry: false, error: "no task" };
    }
    editor.acceptSuggestions();
    return this.submitCurrent();
  }

  async submitCurrent(): Promise<SubmitOutcome> {
    const editor = this.current();
    if (!editor) {
      return { accepted: false, queuedForRetry: false, error: "no task" };
    }
    if (!editor.isComplete()) {
      return {
        accepted: false,
        queuedForRetry: false,
        error: "annotation incomplete: choose an intent and a tag per token",
      };
    }
    const payload = editor.buildPayload();
    this.cursor += 1; // optimistic advance
    try {
      await this.api.submitLabel(editor.taskId, payload);
      this.submitted += 1;
      editor.fieldErrors = {};
      this.state = this.current() ? "annotating" : "round-complete";
      return { accepted: true, queuedForRetry: false };
    } catch (err) {
      if (err instanceof ApiError && err.isClientError) {
        // rejection restores the card with the server's diagnostics
        this.cursor -= 1;
        editor.fieldErrors = { server: err.detail };
        this.state = "annotating";
        return { accepted: false, queuedForRetry: false, error: err.detail };
      }
      const detail = err instanceof Error ? err.message : String(err);
      this.retries.push({ taskId: editor.taskId, payload });
      this.lastError = detail;
      this.state = "network-retry";
      return { accepted: false, queuedForRetry: true, error: detail };
    }
  }

  pendingRetries(): number {
    return this.retries.length;
  }

  /** Re-send queued submissions in order; stops at the first failure. */
  async flushRetries(): Promise<number> {
    let flushed = 0;
    while (this.retries.length > 0) {
      const next = this.retries[0]!;
      try {
        await this.api.submitLabel(next.taskId, next.payload);
      } catch (err) {
        this.lastError = err instanceof Error ? err.message : String(err);
        return flushed;
      }
      this.retries.shift();
      this.submitted += 1;
      flushed += 1;
    }
    this.state = this.current() ? "annotating" : "round-complete";
    return flushed;
  }

  async skipCurrent(): Promise<void> {
    const editor = this.current();
    if (!editor) {
      return;
    }
    await this.api.skipTask(editor.taskId);
    this.cursor += 1;
    this.state = this.current() ? "annotating" : "round-complete";
  }
}
