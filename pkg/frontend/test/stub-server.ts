/**
 * In-memory implementation of the annotation-service HTTP contract with the
 * same validation rules as the backend: tag count must equal token count,
 * intents and tags must come from the vocabulary (absent an explicit
 * new-tag flag), tasks must be leased before labeling, duplicates are
 * idempotent only when identical.
 */

import type { FetchLike, LabelPayload, TaskPayload, VocabPayload } from "../src/api.js";

export interface StubExample {
  id: number;
  tokens: string[];
  goldIntent: string;
  goldSlots: string[];
  confInt: number;
  confSlot: number;
}

interface StubTask extends TaskPayload {
  leased: boolean;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function errorResponse(status: number, detail: string): Response {
  return jsonResponse(status, { detail });
}

export class StubService {
  readonly vocabPayload: VocabPayload;
  readonly receivedPayloads: LabelPayload[] = [];
  labeledCount: number;
  poolCount: number;
  /** When > 0, the next N label posts fail with HTTP 500. */
  failNextLabels = 0;
  /** When true, every request rejects at the network level. */
  offline = false;

  private readonly tasks = new Map<number, StubTask>();
  private readonly queue: number[] = [];
  private readonly labels = new Map<number, LabelPayload>();

  constructor(
    examples: StubExample[],
    vocab: VocabPayload,
    roundBudget: number,
    initialLabeled = 0,
  ) {
    this.vocabPayload = vocab;
    this.labeledCount = initialLabeled;
    this.poolCount = examples.length;
    // tasks are served by ascending joint confidence
    const selected = [...examples]
      .sort((a, b) => a.confInt + a.confSlot - (b.confInt + b.confSlot) || a.id - b.id)
      .slice(0, roundBudget);
    selected.forEach((ex, rank) => {
      this.tasks.set(ex.id, {
        id: ex.id,
        tokens: [...ex.tokens],
        suggested_intent: ex.goldIntent,
        suggested_slots: [...ex.goldSlots],
        conf_int: ex.confInt,
        conf_slot: ex.confSlot,
        conf_joint: ex.confInt + ex.confSlot,
        rank,
        status: "queued",
        leased: false,
      });
      this.queue.push(ex.id);
    });
  }

  fetch: FetchLike = async (url, init) => {
    if (this.offline) {
      throw new TypeError("NetworkError: connection refused");
    }
    const { pathname, searchParams } = new URL(url, "http://stub");
    const method = init?.method ?? "GET";

    if (method === "GET" && pathname === "/status") {
      return jsonResponse(200, {
        round: { number: 1, criterion: "entropy-joint", budget: this.tasks.size },
        labeled_count: this.labeledCount,
        pool_count: this.poolCount,
        checkpoint: "ckpt-1",
      });
    }
    if (method === "GET" && pathname === "/vocab") {
      return jsonResponse(200, this.vocabPayload);
    }
    if (method === "GET" && pathname === "/tasks") {
      const n = Number.parseInt(searchParams.get("n") ?? "1", 10);
      const leased: TaskPayload[] = [];
      for (const id of this.queue) {
        if (leased.length >= n) {
          break;
        }
        const task = this.tasks.get(id)!;
        if (task.status === "queued") {
          task.status = "assigned";
          task.leased = true;
          const { leased: _leased, ...payload } = task;
          leased.push(payload);
        }
      }
      return jsonResponse(200, leased);
    }

    const labelMatch = pathname.match(/^\/tasks\/(\d+)\/label$/);
    if (method === "POST" && labelMatch) {
      return this.handleLabel(Number(labelMatch[1]), init);
    }
    const skipMatch = pathname.match(/^\/tasks\/(\d+)\/skip$/);
    if (method === "POST" && skipMatch) {
      const task = this.tasks.get(Number(skipMatch[1]));
      if (!task) {
        return errorResponse(404, "unknown task");
      }
      task.status = "skipped";
      return jsonResponse(200, { ok: true });
    }
    return errorResponse(404, `no route ${method} ${pathname}`);
  };

  private handleLabel(taskId: number, init?: RequestInit): Response {
    const task = this.tasks.get(taskId);
    if (!task) {
      return errorResponse(404, `unknown task ${taskId}`);
    }
    const payload = JSON.parse(String(init?.body ?? "{}")) as LabelPayload;

    if (this.failNextLabels > 0) {
      this.failNextLabels -= 1;
      return errorResponse(500, "simulated backend failure");
    }
    if (task.status === "labeled") {
      const existing = this.labels.get(taskId)!;
      const identical =
        existing.intent === payload.intent &&
        existing.slots.length === payload.slots.length &&
        existing.slots.every((tag, i) => tag === payload.slots[i]);
      return identical
        ? jsonResponse(200, this.ack(task))
        : errorResponse(409, "already labeled differently");
    }
    if (task.status !== "assigned") {
      return errorResponse(409, "task is not assigned (lease it first)");
    }

    const problems: Record<string, unknown> = {};
    if (!Array.isArray(payload.slots) || payload.slots.length !== task.tokens.length) {
      problems.slots = `expected ${task.tokens.length} tags (one per token), ` +
        `got ${payload.slots?.length ?? 0}`;
    }
    const unknownTags = (payload.slots ?? []).filter(
      (tag) => !this.vocabPayload.slot_tags.includes(tag),
    );
    if (unknownTags.length > 0 && !payload.allow_new_tags) {
      problems.unknown_tags = unknownTags;
    }
    if (!this.vocabPayload.intents.includes(payload.intent) && !payload.allow_new_tags) {
      problems.intent = `unknown intent ${JSON.stringify(payload.intent)}`;
    }
    if (Object.keys(problems).length > 0) {
      return errorResponse(422, `invalid label: ${JSON.stringify(problems)}`);
    }

    task.status = "labeled";
    this.labels.set(taskId, payload);
    this.receivedPayloads.push(payload);
    this.labeledCount += 1;
    this.poolCount -= 1;
    return jsonResponse(200, this.ack(task));
  }

  private ack(task: StubTask) {
    const { leased: _leased, ...payload } = task;
    return {
      ok: true,
      task: payload,
      labeled_count: this.labeledCount,
      pool_count: this.poolCount,
    };
  }
}

export function makeExamples(n: number): StubExample[] {
  const vocabTokens = ["show", "flights", "to", "boston", "play", "jazz"];
  const out: StubExample[] = [];
  for (let i = 0; i < n; i += 1) {
    const length = 3 + (i % 3);
    const tokens = Array.from(
      { length },
      (_, t) => vocabTokens[(i + t) % vocabTokens.length]!,
    );
    const slots = tokens.map((_, t) =>
      t === length - 1 ? (i % 2 === 0 ? "B-city" : "B-genre") : "O",
    );
    out.push({
      id: i,
      tokens,
      goldIntent: i % 2 === 0 ? "get_weather" : "play_music",
      goldSlots: slots,
      // spread confidences so the served order is a strict, checkable one
      confInt: -((i * 7919) % 101) / 100,
      confSlot: -((i * 104729) % 89) / 100,
    });
  }
  return out;
}

export const STUB_VOCAB: VocabPayload = {
  intents: ["get_weather", "play_music"],
  slot_tags: ["O", "B-city", "B-genre", "B-artist"],
};
