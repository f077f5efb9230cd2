/**
 * DOM layer: token chips with span-style tag highlights, a tag palette,
 * confidence badges, progress bar, and the keyboard-first flow
 * (Enter = accept all suggestions and submit; digits pick palette tags for
 * the focused token; arrows move token focus; S skips).
 */

import type { VocabPayload } from "./api.js";
import { AnnotationQueue } from "./queue.js";
import type { TaskEditor } from "./task-editor.js";

const PALETTE_CLASSES = 8; // color buckets for tag highlighting

function tagClass(tag: string, palette: readonly string[]): string {
  if (tag === "O") {
    return "tag-outside";
  }
  const index = Math.max(palette.indexOf(tag), 0);
  return `tag-${index % PALETTE_CLASSES}`;
}

export class ConsoleApp {
  private focusedToken = 0;

  constructor(
    private readonly root: HTMLElement,
    private readonly queue: AnnotationQueue,
    private readonly vocab: VocabPayload,
    private readonly doc: Document = document,
  ) {}

  start(): void {
    this.root.addEventListener("keydown", (event) => {
      void this.onKey(event as KeyboardEvent);
    });
    this.render();
  }

  async refresh(batch = 5): Promise<void> {
    await this.queue.fetchQueue(batch);
    this.focusedToken = 0;
    this.render();
  }

  private async onKey(event: KeyboardEvent): Promise<void> {
    const editor = this.queue.current();
    if (!editor) {
      return;
    }
    if (event.key === "Enter") {
      event.preventDefault();
      await this.queue.acceptAndSubmit();
      this.focusedToken = 0;
      if (this.queue.progress().done === this.queue.progress().total) {
        await this.refresh();
        return;
      }
      this.render();
      return;
    }
    if (event.key === "ArrowRight") {
      this.focusedToken = Math.min(this.focusedToken + 1, editor.tokens.length - 1);
      this.render();
      return;
    }
    if (event.key === "ArrowLeft") {
      this.focusedToken = Math.max(this.focusedToken - 1, 0);
      this.render();
      return;
    }
    if (event.key.toLowerCase() === "s") {
      event.preventDefault();
      await this.queue.skipCurrent();
      this.render();
      return;
    }
    const digit = Number.parseInt(event.key, 10);
    if (!Number.isNaN(digit) && digit >= 1) {
      const tag = this.vocab.slot_tags[digit - 1];
      if (tag !== undefined) {
        editor.setTag(this.focusedToken, tag);
        this.render();
      }
    }
  }

  render(): void {
    this.root.textContent = "";
    const editor = this.queue.current();
    this.root.appendChild(this.renderProgress());
    if (this.queue.state === "network-retry") {
      this.root.appendChild(this.renderRetryBanner());
    }
    if (!editor) {
      const done = this.doc.createElement("p");
      done.className = "round-complete";
      done.textContent =
        this.queue.state === "round-complete"
          ? "Round complete. Trigger retraining from the service."
          : "No tasks loaded.";
      this.root.appendChild(done);
      return;
    }
    this.root.appendChild(this.renderCard(editor));
  }

  private renderProgress(): HTMLElement {
    const { done, total } = this.queue.progress();
    const bar = this.doc.createElement("div");
    bar.className = "progress";
    bar.setAttribute("data-done", String(done));
    bar.setAttribute("data-total", String(total));
    bar.textContent = `${done}/${total}`;
    return bar;
  }

  private renderRetryBanner(): HTMLElement {
    const banner = this.doc.createElement("div");
    banner.className = "retry-banner";
    banner.textContent = `Connection trouble: ${this.queue.lastError ?? "unknown"}. `;
    const button = this.doc.createElement("button");
    button.textContent = "Retry";
    button.addEventListener("click", () => {
      void this.queue.flushRetries().then(() => this.render());
    });
    banner.appendChild(button);
    return banner;
  }

  private renderCard(editor: TaskEditor): HTMLElement {
    const card = this.doc.createElement("section");
    card.className = "task-card";
    card.setAttribute("data-task-id", String(editor.taskId));

    const badges = this.doc.createElement("div");
    badges.className = "confidence-badges";
    // normalized entropies show the annotator why this example was queried
    const entInt = (-editor.confInt).toFixed(3);
    const entSlot = (-editor.confSlot).toFixed(3);
    badges.textContent = `intent entropy ${entInt} · slot entropy ${entSlot}`;
    card.appendChild(badges);

    const tokens = this.doc.createElement("div");
    tokens.className = "tokens";
    editor.tokens.forEach((token, i) => {
      const chip = this.doc.createElement("button");
      chip.className = `token-chip ${tagClass(editor.tagAt(i), this.vocab.slot_tags)}`;
      if (i === this.focusedToken) {
        chip.classList.add("focused");
      }
      chip.textContent = token;
      chip.setAttribute("data-token-index", String(i));
      chip.setAttribute("data-tag", editor.tagAt(i));
      chip.addEventListener("click", () => {
        this.focusedToken = i;
        this.render();
      });
      tokens.appendChild(chip);
    });
    card.appendChild(tokens);

    const pickers = this.doc.createElement("div");
    pickers.className = "tag-pickers";
    editor.tokens.forEach((_, i) => {
      const picker = this.doc.createElement("select");
      picker.setAttribute("data-token-index", String(i));
      for (const tag of this.vocab.slot_tags) {
        const option = this.doc.createElement("option");
        option.value = tag;
        option.textContent = tag;
        option.selected = tag === editor.tagAt(i);
        picker.appendChild(option);
      }
      picker.addEventListener("change", () => {
        editor.setTag(i, picker.value);
        this.render();
      });
      pickers.appendChild(picker);
    });
    card.appendChild(pickers);

    const intentPicker = this.doc.createElement("select");
    intentPicker.className = "intent-picker";
    for (const intent of this.vocab.intents) {
      const option = this.doc.createElement("option");
      option.value = intent;
      option.textContent = intent;
      option.selected = intent === editor.currentIntent;
      intentPicker.appendChild(option);
    }
    intentPicker.addEventListener("change", () => {
      editor.setIntent(intentPicker.value);
      this.render();
    });
    card.appendChild(intentPicker);

    if (Object.keys(editor.fieldErrors).length > 0) {
      const errors = this.doc.createElement("ul");
      errors.className = "field-errors";
      for (const [field, message] of Object.entries(editor.fieldErrors)) {
        const item = this.doc.createElement("li");
        item.textContent = `${field}: ${message}`;
        errors.appendChild(item);
      }
      card.appendChild(errors);
    }

    const submit = this.doc.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit (Enter accepts suggestions)";
    submit.disabled = !editor.isComplete();
    submit.addEventListener("click", () => {
      void this.queue.submitCurrent().then(() => this.render());
    });
    card.appendChild(submit);
    return card;
  }
}
